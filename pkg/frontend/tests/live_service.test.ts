import { execFileSync, spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { ReviewController } from "../src/session";
import { ReviewApp } from "../src/view";
import { BIN_LABELS, waitFor } from "./helpers";

// End-to-end: a real service process seeded with five pending samples,
// one per score bin, reviewed to completion through the mounted UI.

const TOTALS = [0.1, 0.3, 0.5, 0.7, 0.9];

const SEED_SCRIPT = `
import sys
from proofkit.audit import AuditSample, AuditStore, bin_index

store = AuditStore(sys.argv[1])
response = (
    "<tech>\\nCount residues modulo $n$.\\n"
    "<construction>: no\\n<theorem call>: pigeonhole\\n<transformation>: no\\n</tech>\\n"
    "<sketch>\\nTwo of $n+1$ numbers share a residue.\\n</sketch>\\n"
    "<proof>\\nAmong $n+1$ integers two are congruent mod $n$, so their "
    "difference is divisible by $n$.\\n</proof>"
)
samples = []
for i, total in enumerate([0.1, 0.3, 0.5, 0.7, 0.9], start=1):
    samples.append(
        AuditSample(
            sample_id=f"as-{i:05d}-live-{i}",
            item_id=f"live-{i}",
            model_family="prover-live",
            benchmark="FIMO",
            llm_total=total,
            score_bin=bin_index(total),
            question=f"Problem {i}: show a divisible difference exists.",
            response=response,
        )
    )
added = store.add_samples(samples)
assert added == 5, added
`;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as net.AddressInfo).port;
      probe.close(() => resolve(port));
    });
  });
}

let storeDir: string;
let server: ChildProcess;
let baseUrl: string;
let serverLog = "";

beforeAll(async () => {
  storeDir = mkdtempSync(path.join(os.tmpdir(), "audit-live-"));
  execFileSync("python3", ["-c", SEED_SCRIPT, storeDir]);

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    [
      "-m",
      "proofkit",
      "serve",
      "--store",
      storeDir,
      "--host",
      "127.0.0.1",
      "--port",
      String(port),
      "--model",
      "verifier-live",
      // The audit routes never call out to a model; any endpoint works.
      "--endpoint",
      "http://127.0.0.1:9/v1/chat/completions",
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout?.on("data", (chunk) => (serverLog += chunk));
  server.stderr?.on("data", (chunk) => (serverLog += chunk));

  const deadline = Date.now() + 30_000;
  for (;;) {
    if (server.exitCode !== null) {
      throw new Error(`service exited early (${server.exitCode}):\n${serverLog}`);
    }
    try {
      const res = await fetch(`${baseUrl}/healthz`);
      if (res.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error(`service never came up:\n${serverLog}`);
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}, 45_000);

afterAll(async () => {
  if (server && server.exitCode === null) {
    server.kill("SIGTERM");
    await new Promise((resolve) => {
      server.once("exit", resolve);
      setTimeout(resolve, 5_000);
    });
  }
  if (storeDir) rmSync(storeDir, { recursive: true, force: true });
});

function q<T extends HTMLElement>(testid: string): T {
  const node = document.querySelector<T>(`[data-testid="${testid}"]`);
  if (!node) throw new Error(`no element with data-testid ${testid}`);
  return node;
}

function enterScore(index: number, value: string): void {
  const input = q<HTMLInputElement>(`score-input-${index}`);
  input.value = value;
  input.dispatchEvent(new Event("change"));
}

function binCount(label: string): number {
  const row = q("report-table").querySelector(`[data-bin="${label}"]`);
  if (!row) return 0;
  return Number(row.querySelector(".bin-count")?.textContent ?? "0");
}

describe("review session against a live service", () => {
  it("scores all five pending samples, one per bin, in under a minute", async () => {
    document.body.innerHTML = '<div id="app"></div>';
    const controller = new ReviewController((endpoint) => new ApiClient(endpoint));
    new ReviewApp(document.querySelector("#app")!, controller);

    const started = Date.now();
    q<HTMLInputElement>("endpoint-input").value = baseUrl;
    q<HTMLInputElement>("reviewer-input").value = "live-reviewer";
    q<HTMLButtonElement>("start-btn").click();
    await waitFor(() => controller.phase === "reviewing", 10_000, "first sample");

    const seenBins: string[] = [];
    for (let round = 0; round < 5; round++) {
      const sample = controller.sample!;
      const index = Number(sample.item_id.split("-")[1]) - 1;
      const expectedBin = BIN_LABELS[index]!;
      const before = binCount(expectedBin);

      // The payload the UI received is blind.
      expect(JSON.stringify(sample)).not.toContain("llm_total");
      expect(JSON.stringify(sample)).not.toContain("score_bin");
      expect(q("section-proof").textContent).toContain("divisible by");

      const submit = q<HTMLButtonElement>("submit-btn");
      enterScore(0, "0.8");
      enterScore(1, "0.7");
      enterScore(2, "0.9");
      expect(submit.disabled).toBe(true); // one dimension still unset
      enterScore(3, "0.6");
      expect(submit.disabled).toBe(false);

      submit.click();
      await waitFor(
        () => controller.lastAck?.sampleId === sample.sample_id,
        10_000,
        `ack for ${sample.sample_id}`,
      );

      // The service filed it where the verifier's total said it would
      // go; the UI learns this only from the report diff.
      expect(binCount(expectedBin)).toBe(before + 1);
      expect(q("ack").textContent).toContain(`filed under bin ${expectedBin}`);
      seenBins.push(expectedBin);

      if (round < 4) {
        await waitFor(
          () => controller.phase === "reviewing" && controller.sample !== null,
          10_000,
          "next sample",
        );
      }
    }

    await waitFor(() => controller.phase === "empty", 10_000, "drained queue");
    expect(q("empty-state").textContent).toBe("queue empty: no pending samples");
    expect([...seenBins].sort()).toEqual([...BIN_LABELS].sort());
    expect(q("report-footer").textContent).toContain("5 scored");

    const elapsed = Date.now() - started;
    expect(elapsed).toBeLessThan(60_000);
  }, 60_000);
});
