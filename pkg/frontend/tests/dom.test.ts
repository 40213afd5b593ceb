import { beforeEach, describe, expect, it } from "vitest";

import { ReviewController } from "../src/session";
import { ReviewApp } from "../src/view";
import { FakeService, makeSample, waitFor } from "./helpers";

// Full view wiring against the in-memory service double: what a
// reviewer actually sees and clicks, without a real network.

let service: FakeService;
let controller: ReviewController;

function q<T extends HTMLElement>(testid: string): T {
  const node = document.querySelector<T>(`[data-testid="${testid}"]`);
  if (!node) throw new Error(`no element with data-testid ${testid}`);
  return node;
}

function visible(testid: string): boolean {
  return !q(testid).classList.contains("hidden");
}

function enterScore(index: number, value: string): void {
  const input = q<HTMLInputElement>(`score-input-${index}`);
  input.value = value;
  input.dispatchEvent(new Event("change"));
}

async function startSession(): Promise<void> {
  q<HTMLInputElement>("endpoint-input").value = "http://fake.test";
  q<HTMLInputElement>("reviewer-input").value = "rev-dom";
  q<HTMLButtonElement>("start-btn").click();
  await waitFor(() => q("status").textContent === "reviewing", 2000, "reviewing phase");
}

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  service = new FakeService([
    makeSample(1, 0.1),
    makeSample(2, 0.35),
    makeSample(3, 0.84),
  ]);
  controller = new ReviewController(() => service.client());
  new ReviewApp(document.querySelector("#app")!, controller);
});

describe("configuration", () => {
  it("starts in the config phase with the form visible", () => {
    expect(q("status").textContent).toBe("configuring");
    expect(visible("config")).toBe(true);
    expect(visible("sample-card")).toBe(false);
  });

  it("shows the precondition error inline when the reviewer id is missing", async () => {
    q<HTMLInputElement>("endpoint-input").value = "http://fake.test";
    q<HTMLInputElement>("reviewer-input").value = "";
    q<HTMLButtonElement>("start-btn").click();
    await waitFor(() => visible("config-error"), 2000, "config error");
    expect(q("config-error").textContent).toBe(
      "endpoint and reviewer id are both required",
    );
    expect(q("status").textContent).toBe("configuring");
  });
});

describe("sample presentation", () => {
  it("renders the sections separately with math marked up, and stays blind", async () => {
    await startSession();
    expect(q("meta").textContent).toBe("prover-demo on FIMO (item-1)");

    const tech = q("section-tech");
    const sketch = q("section-sketch");
    const proof = q("section-proof");
    expect(tech.textContent).toContain("Idea 1");
    expect(tech.textContent).toContain("<theorem call>: lemma 1");
    expect(sketch.textContent).toContain("Plan 1");
    expect(proof.textContent).toContain("Proof body");
    // Section markup is consumed by the splitter, not shown raw.
    expect(proof.textContent).not.toContain("<proof>");

    const math = q("question").querySelector(".math");
    expect(math?.textContent).toBe("x_{1}");
    expect(proof.querySelector(".math")?.textContent).toBe("1 + 1");

    // Blind review: nothing about the verifier's opinion is on screen.
    const cardText = q("sample-card").textContent ?? "";
    expect(cardText).not.toContain("llm_total");
    expect(cardText).not.toContain("score_bin");
    expect(cardText.toLowerCase()).not.toContain("total");
    expect(visible("ack")).toBe(false);
  });

  it("omits a panel when the response lacks that section", async () => {
    service.samples[0] = makeSample(1, 0.1, "just an untagged proof body");
    await startSession();
    expect(document.querySelector('[data-testid="section-tech"]')).toBeNull();
    expect(document.querySelector('[data-testid="section-sketch"]')).toBeNull();
    expect(q("section-proof").textContent).toContain("just an untagged proof body");
  });
});

describe("score entry", () => {
  it("keeps submit disabled until all four scores are set", async () => {
    await startSession();
    const submit = q<HTMLButtonElement>("submit-btn");
    expect(submit.disabled).toBe(true);
    enterScore(0, "0.5");
    enterScore(1, "0.5");
    enterScore(2, "0.5");
    expect(submit.disabled).toBe(true);
    enterScore(3, "0");
    expect(submit.disabled).toBe(false);
    enterScore(2, "");
    expect(submit.disabled).toBe(true);
  });

  it("snaps typed values back into the input on the 0.1 grid", async () => {
    await startSession();
    enterScore(0, "0.234");
    expect(q<HTMLInputElement>("score-input-0").value).toBe("0.2");
    enterScore(1, "0.25");
    expect(q<HTMLInputElement>("score-input-1").value).toBe("0.3");
    enterScore(2, "7");
    expect(q<HTMLInputElement>("score-input-2").value).toBe("1");
    expect(controller.slots.slice(0, 3)).toEqual([0.2, 0.3, 1.0]);
  });
});

describe("submission loop", () => {
  async function scoreCurrent(values: [string, string, string, string]): Promise<string> {
    const scoredId = controller.sample!.sample_id;
    values.forEach((v, i) => enterScore(i, v));
    q<HTMLButtonElement>("submit-btn").click();
    await waitFor(
      () => controller.sample?.sample_id !== scoredId || controller.phase === "empty",
      2000,
      "advance past " + scoredId,
    );
    return scoredId;
  }

  it("acknowledges with the revealed bin and a bumped report count", async () => {
    await startSession();
    expect(q("report-table").querySelector('[data-testid="placeholder-row"]')).not.toBeNull();
    expect(q("report-footer").textContent).toBe("0 scored");

    await scoreCurrent(["0.8", "0.9", "0.7", "1"]);
    expect(visible("ack")).toBe(true);
    expect(q("ack").textContent).toBe(
      "scored as-00001-item1: weighted total 0.8350 filed under bin 0.0-0.2",
    );

    const row = q("report-table").querySelector('[data-bin="0.0-0.2"]');
    expect(row?.querySelector(".bin-count")?.textContent).toBe("1");
    expect(q("meta").textContent).toContain("item-2");
    expect(q<HTMLInputElement>("score-input-0").value).toBe("");
  });

  it("walks the queue to empty, updating the report after each submission", async () => {
    await startSession();
    await scoreCurrent(["0.1", "0.2", "0.1", "0.2"]);
    await scoreCurrent(["0.4", "0.3", "0.4", "0.3"]);
    expect(q("ack").textContent).toContain("filed under bin 0.2-0.4");
    await scoreCurrent(["0.9", "0.8", "0.9", "0.8"]);
    expect(q("ack").textContent).toContain("filed under bin 0.8-1.0");

    await waitFor(() => controller.phase === "empty", 2000, "empty queue");
    expect(q("empty-state").textContent).toBe("queue empty: no pending samples");
    const counts = Array.from(
      q("report-table").querySelectorAll(".bin-count"),
      (n) => n.textContent,
    );
    expect(counts).toEqual(["1", "1", "1"]);
    expect(q("report-footer").textContent).toBe("3 scored, correlation 0.900");
  });

  it("shows the retry banner on network failure and resumes where it held", async () => {
    await startSession();
    ["0.6", "0.6", "0.6", "0.6"].forEach((v, i) => enterScore(i, v));

    service.networkDown = true;
    q<HTMLButtonElement>("submit-btn").click();
    await waitFor(() => visible("banner"), 2000, "retry banner");
    expect(q("banner").textContent).toBe(
      "1 submission(s) queued, service unreachable; retrying",
    );

    service.networkDown = false;
    await controller.retry();
    await waitFor(() => !visible("banner"), 2000, "banner cleared");
    expect(q("ack").textContent).toContain("scored as-00001-item1");
    expect(q("ack").textContent).toContain("filed under bin 0.0-0.2");
    expect(q("meta").textContent).toContain("item-2");
  });

  it("lists a visible notice when a queued submission is rejected on retry", async () => {
    await startSession();
    ["0.6", "0.6", "0.6", "0.6"].forEach((v, i) => enterScore(i, v));
    service.networkDown = true;
    q<HTMLButtonElement>("submit-btn").click();
    await waitFor(() => visible("banner"), 2000, "retry banner");

    service.samples[0]!.scores = [1, 1, 1, 1];
    service.networkDown = false;
    await controller.retry();
    await waitFor(() => q("notices").children.length === 1, 2000, "notice listed");
    expect(q("notices").textContent).toContain("as-00001-item1");
    expect(q("notices").textContent).toContain("rejected after retry");
  });

  it("shows an inline error and stays on the sample after a 400", async () => {
    await startSession();
    const realHandle = service.handle.bind(service);
    service.handle = (url, init) => {
      if (new URL(url).pathname === "/v1/audit/score") {
        return new Response(JSON.stringify({ detail: "scores must be on the grid" }), {
          status: 400,
        });
      }
      return realHandle(url, init);
    };
    ["0.6", "0.6", "0.6", "0.6"].forEach((v, i) => enterScore(i, v));
    q<HTMLButtonElement>("submit-btn").click();
    await waitFor(() => visible("error-line"), 2000, "inline error");
    expect(q("error-line").textContent).toContain("scores must be on the grid");
    expect(q("meta").textContent).toContain("item-1");
  });
});

describe("calibration card", () => {
  it("flags stale data when a report poll fails and recovers on the next", async () => {
    await startSession();
    expect(document.querySelector('[data-testid="stale"]')).toBeNull();

    service.networkDown = true;
    await controller.refreshReport();
    expect(q("stale").textContent).toBe("showing stale data (poll failed)");
    // The last good table is still shown alongside the flag.
    expect(q("report-table").querySelector('[data-testid="placeholder-row"]')).not.toBeNull();

    service.networkDown = false;
    await controller.refreshReport();
    expect(document.querySelector('[data-testid="stale"]')).toBeNull();
  });
});
