import { ApiClient, NextSample } from "../src/api";

// An in-memory stand-in for the audit endpoints, faithful to the wire
// shapes the real service emits (blind /next payloads, weighted human
// totals, per-bin report rows). Tests flip `networkDown` to simulate
// the service dropping off the network.

export const BIN_LABELS = ["0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"];
const WEIGHTS = [0.3, 0.3, 0.25, 0.15];

export function binLabelFor(total: number): string {
  const index = total >= 1.0 ? 4 : Math.min(4, Math.floor(total / 0.2));
  return BIN_LABELS[index]!;
}

export interface FakeSample {
  sample: NextSample;
  llmTotal: number;
  scores: number[] | null;
}

export function makeSample(i: number, llmTotal: number, response?: string): FakeSample {
  return {
    sample: {
      sample_id: `as-${String(i).padStart(5, "0")}-item${i}`,
      item_id: `item-${i}`,
      model_family: "prover-demo",
      benchmark: "FIMO",
      question: `Question ${i} with $x_{${i}}$ inline.`,
      response:
        response ??
        `<tech>\nLet's analyze the conditions. Idea ${i}.\n` +
          `<construction>: no\n<theorem call>: lemma ${i}\n<transformation>: no\n</tech>\n` +
          `<sketch>\nPlan ${i}.\n</sketch>\n<proof>\nProof body $${i} + 1$.\n</proof>`,
    },
    llmTotal,
    scores: null,
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export class FakeService {
  networkDown = false;
  scoreCalls = 0;

  constructor(public samples: FakeSample[]) {}

  private humanTotal(scores: number[]): number {
    return scores.reduce((acc, s, i) => acc + s * WEIGHTS[i]!, 0);
  }

  handle(url: string, init?: RequestInit): Response | "network" {
    if (this.networkDown) return "network";
    const { pathname } = new URL(url);

    if (pathname === "/v1/audit/next") {
      const pending = this.samples.find((s) => s.scores === null);
      if (!pending) return json(404, { detail: "no pending samples" });
      return json(200, pending.sample);
    }

    if (pathname === "/v1/audit/score") {
      this.scoreCalls += 1;
      const body = JSON.parse(String(init?.body));
      const found = this.samples.find((s) => s.sample.sample_id === body.sample_id);
      if (!found) return json(404, { detail: `unknown sample ${body.sample_id}` });
      if (found.scores !== null && !body.replace) {
        return json(409, { detail: `sample ${body.sample_id} already scored` });
      }
      if (!Array.isArray(body.scores) || body.scores.length !== 4) {
        return json(400, { detail: "scores must have 4 entries" });
      }
      found.scores = body.scores;
      return json(200, {
        sample_id: body.sample_id,
        status: "scored",
        human_total: this.humanTotal(body.scores),
      });
    }

    if (pathname === "/v1/audit/report") {
      const scored = this.samples.filter((s) => s.scores !== null);
      const byBin = new Map<string, FakeSample[]>();
      for (const s of scored) {
        const label = binLabelFor(s.llmTotal);
        byBin.set(label, [...(byBin.get(label) ?? []), s]);
      }
      const rows = BIN_LABELS.filter((label) => byBin.has(label)).map((label) => {
        const members = byBin.get(label)!;
        const meanLlm = members.reduce((a, s) => a + s.llmTotal, 0) / members.length;
        const meanHuman =
          members.reduce((a, s) => a + this.humanTotal(s.scores!), 0) / members.length;
        return {
          bin: label,
          count: members.length,
          mean_llm: meanLlm,
          mean_human: meanHuman,
          difference: meanLlm - meanHuman,
        };
      });
      return json(200, {
        rows,
        total_scored: scored.length,
        overall_correlation: scored.length >= 2 ? 0.9 : null,
      });
    }

    return json(404, { detail: `no route ${pathname}` });
  }

  client(base = "http://fake.test"): ApiClient {
    const fetchImpl = async (input: RequestInfo | URL, init?: RequestInit) => {
      const out = this.handle(String(input), init);
      if (out === "network") throw new TypeError("fetch failed: connection refused");
      return out;
    };
    return new ApiClient(base, fetchImpl as typeof fetch);
  }
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 5000,
  label = "condition",
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, 20));
  }
  throw new Error(`timed out waiting for ${label}`);
}
