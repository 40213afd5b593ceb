import { z } from "zod";

// Wire shapes for the audit endpoints. Everything coming off the
// network is validated here; the rest of the app works with typed
// values only.

export const NextSampleSchema = z.object({
  sample_id: z.string(),
  item_id: z.string(),
  model_family: z.string(),
  benchmark: z.string(),
  question: z.string(),
  response: z.string(),
});
export type NextSample = z.infer<typeof NextSampleSchema>;

export const ScoreAckSchema = z.object({
  sample_id: z.string(),
  status: z.string(),
  human_total: z.number(),
});
export type ScoreAck = z.infer<typeof ScoreAckSchema>;

export const ReportRowSchema = z.object({
  bin: z.string(),
  count: z.number(),
  mean_llm: z.number(),
  mean_human: z.number(),
  difference: z.number(),
});
export const ReportSchema = z.object({
  rows: z.array(ReportRowSchema),
  total_scored: z.number(),
  overall_correlation: z.number().nullable(),
});
export type Report = z.infer<typeof ReportSchema>;
export type ReportRow = z.infer<typeof ReportRowSchema>;

export interface ScoreSubmission {
  sample_id: string;
  reviewer: string;
  scores: [number, number, number, number];
}

/**
 * Error from a reachable service: the request made it there and came
 * back with a non-2xx status. These are never retried blindly; the
 * status tells the caller what went wrong (404 unknown sample, 409
 * already scored, 400 malformed).
 */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** Network-level failure: the service never answered. Retryable. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

export const NO_PENDING = Symbol("no-pending");

async function parseDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/+$/, "") + path;
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.url(path), init);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    return response;
  }

  /** Lease the next pending sample, or NO_PENDING when the queue is empty. */
  async fetchNext(reviewer: string): Promise<NextSample | typeof NO_PENDING> {
    const path = `/v1/audit/next?reviewer=${encodeURIComponent(reviewer)}`;
    const response = await this.request(path);
    if (response.status === 404) return NO_PENDING;
    if (!response.ok) throw new ApiError(response.status, await parseDetail(response));
    return NextSampleSchema.parse(await response.json());
  }

  async submitScore(submission: ScoreSubmission): Promise<ScoreAck> {
    const response = await this.request("/v1/audit/score", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (!response.ok) throw new ApiError(response.status, await parseDetail(response));
    return ScoreAckSchema.parse(await response.json());
  }

  async fetchReport(): Promise<Report> {
    const response = await this.request("/v1/audit/report");
    if (!response.ok) throw new ApiError(response.status, await parseDetail(response));
    return ReportSchema.parse(await response.json());
  }
}
