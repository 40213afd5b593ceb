import { ApiClient, ApiError, NetworkError, ScoreAck, ScoreSubmission } from "./api";

// Submissions that failed at the network level wait here and are
// retried in order. Domain rejections (4xx/5xx from a reachable
// service) never enter the queue: retrying a 409 would just 409 again.

export interface FlushCallbacks {
  onDelivered?: (submission: ScoreSubmission, ack: ScoreAck) => void;
  onDropped?: (submission: ScoreSubmission, error: ApiError) => void;
}

export class RetryQueue {
  private items: ScoreSubmission[] = [];

  get size(): number {
    return this.items.length;
  }

  enqueue(submission: ScoreSubmission): void {
    this.items.push(submission);
  }

  /**
   * Try to deliver everything, oldest first. Stops at the first
   * network failure (the service is still unreachable; keep the rest).
   * A domain error drops that submission and carries on, reporting it
   * so the UI can surface the loss instead of hiding it.
   */
  async flush(client: ApiClient, callbacks: FlushCallbacks = {}): Promise<number> {
    let delivered = 0;
    while (this.items.length > 0) {
      const head = this.items[0]!;
      try {
        const ack = await client.submitScore(head);
        this.items.shift();
        delivered += 1;
        callbacks.onDelivered?.(head, ack);
      } catch (error) {
        if (error instanceof NetworkError) break;
        if (error instanceof ApiError) {
          this.items.shift();
          callbacks.onDropped?.(head, error);
        } else {
          throw error;
        }
      }
    }
    return delivered;
  }
}
