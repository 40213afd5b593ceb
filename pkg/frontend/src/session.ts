import {
  ApiClient,
  ApiError,
  NetworkError,
  NextSample,
  NO_PENDING,
  Report,
  ScoreAck,
  ScoreSubmission,
} from "./api";
import { allSet, emptySlots, ScoreSlots, snapToGrid } from "./grid";
import { RetryQueue } from "./queue";

// The review loop's state machine. The view renders whatever this
// holds; every mutation ends with notify(). No score arithmetic happens
// here: totals and aggregates come from the service untouched.

export type Phase =
  | "configuring"
  | "loading"
  | "reviewing"
  | "submitting"
  | "waiting-retry"
  | "empty";

export interface LastAck {
  sampleId: string;
  humanTotal: number;
  /** Revealed only after submission, by diffing the report's bin counts. */
  bin: string | null;
}

export class ReviewController {
  phase: Phase = "configuring";
  sample: NextSample | null = null;
  slots: ScoreSlots = emptySlots();
  lastAck: LastAck | null = null;
  report: Report | null = null;
  reportStale = false;
  /** Inline error for the current sample, never a silent drop. */
  error: string | null = null;
  /** Notices about submissions the service rejected, directly or after retry. */
  notices: string[] = [];
  reviewer = "";

  private client: ApiClient | null = null;
  private queue = new RetryQueue();
  private listeners: Array<() => void> = [];

  constructor(private readonly makeClient: (endpoint: string) => ApiClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  get queuedCount(): number {
    return this.queue.size;
  }

  get canSubmit(): boolean {
    return this.phase === "reviewing" && allSet(this.slots);
  }

  /** Precondition of the whole loop: endpoint and reviewer id entered. */
  async start(endpoint: string, reviewer: string): Promise<void> {
    if (!endpoint.trim() || !reviewer.trim()) {
      this.error = "endpoint and reviewer id are both required";
      this.notify();
      return;
    }
    this.client = this.makeClient(endpoint.trim());
    this.reviewer = reviewer.trim();
    this.error = null;
    await this.refreshReport();
    await this.loadNext();
  }

  setScore(index: number, raw: number | null): void {
    if (index < 0 || index > 3) return;
    this.slots[index] = raw === null ? null : snapToGrid(raw);
    this.notify();
  }

  async loadNext(): Promise<void> {
    if (!this.client) return;
    this.phase = "loading";
    this.sample = null;
    this.slots = emptySlots();
    this.notify();
    try {
      const next = await this.client.fetchNext(this.reviewer);
      if (next === NO_PENDING) {
        this.phase = "empty";
      } else {
        this.sample = next;
        this.phase = "reviewing";
        this.error = null;
      }
    } catch (error) {
      if (error instanceof NetworkError) {
        this.phase = "waiting-retry";
        this.error = "service unreachable while fetching the next sample";
      } else if (error instanceof ApiError) {
        this.phase = "empty";
        this.error = error.message;
      } else {
        throw error;
      }
    }
    this.notify();
  }

  async submit(): Promise<void> {
    if (!this.client || !this.sample || !this.canSubmit) return;
    const submission: ScoreSubmission = {
      sample_id: this.sample.sample_id,
      reviewer: this.reviewer,
      scores: this.slots as [number, number, number, number],
    };
    this.phase = "submitting";
    this.error = null;
    this.notify();
    try {
      const ack = await this.client.submitScore(submission);
      await this.acknowledge(ack);
      await this.loadNext();
    } catch (error) {
      if (error instanceof NetworkError) {
        // Queue it and hold this position: the next sample must not
        // load until this submission is actually acknowledged.
        this.queue.enqueue(submission);
        this.phase = "waiting-retry";
        this.error = null;
        this.notify();
      } else if (error instanceof ApiError) {
        if (error.status === 400) {
          // The payload is wrong; let the reviewer fix the scores.
          this.phase = "reviewing";
          this.error = error.message;
          this.notify();
        } else {
          // 404/409: this sample cannot take this score any more. The
          // inline error slot belongs to the next sample once we move
          // on, so the rejection goes to the persistent notice list.
          this.notices.push(
            `score for ${submission.sample_id} was not accepted: ${error.detail}`,
          );
          this.notify();
          await this.loadNext();
        }
      } else {
        throw error;
      }
    }
  }

  /** Retry everything queued; called by the view's retry timer/button. */
  async retry(): Promise<void> {
    if (!this.client) return;
    const blockedId =
      this.phase === "waiting-retry" ? (this.sample?.sample_id ?? null) : null;
    let blockedAck: ScoreAck | null = null;
    await this.queue.flush(this.client, {
      onDelivered: (submission, ack) => {
        if (submission.sample_id === blockedId) blockedAck = ack;
      },
      onDropped: (submission, apiError) => {
        this.notices.push(
          `score for ${submission.sample_id} was rejected after retry: ${apiError.detail}`,
        );
      },
    });
    if (this.phase === "waiting-retry" && this.queue.size === 0) {
      // The blocked submission either landed (acknowledge it) or was
      // rejected with a visible notice; either way the loop may move on.
      if (blockedAck !== null) await this.acknowledge(blockedAck);
      await this.loadNext();
    } else {
      this.notify();
    }
  }

  private async acknowledge(ack: ScoreAck): Promise<void> {
    const before = this.binCounts();
    await this.refreshReport();
    const after = this.binCounts();
    let revealed: string | null = null;
    for (const [bin, count] of after) {
      if ((before.get(bin) ?? 0) + 1 === count) revealed = bin;
    }
    this.lastAck = {
      sampleId: ack.sample_id,
      humanTotal: ack.human_total,
      bin: revealed,
    };
  }

  private binCounts(): Map<string, number> {
    const counts = new Map<string, number>();
    for (const row of this.report?.rows ?? []) counts.set(row.bin, row.count);
    return counts;
  }

  async refreshReport(): Promise<void> {
    if (!this.client) return;
    try {
      this.report = await this.client.fetchReport();
      this.reportStale = false;
    } catch {
      this.reportStale = true;
    }
    this.notify();
  }
}
