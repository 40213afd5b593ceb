import { DIMENSIONS } from "./grid";
import { splitMath, splitSections } from "./sections";
import { ReviewController } from "./session";

// Plain-DOM view over the controller. The sample card is rebuilt only
// when the sample changes; everything else updates in place so score
// inputs keep focus while the reviewer types.

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function mathBlock(text: string): HTMLElement {
  const container = el("div", { class: "prose" });
  for (const piece of splitMath(text)) {
    if (piece.kind === "math") {
      container.appendChild(el("span", { class: "math", title: piece.value }, piece.value));
    } else {
      container.appendChild(document.createTextNode(piece.value));
    }
  }
  return container;
}

export class ReviewApp {
  private root: HTMLElement;
  private controller: ReviewController;
  private renderedSampleId: string | null = null;

  private banner!: HTMLElement;
  private noticeList!: HTMLElement;
  private configForm!: HTMLElement;
  private sampleCard!: HTMLElement;
  private ackStrip!: HTMLElement;
  private reportCard!: HTMLElement;
  private statusLine!: HTMLElement;

  constructor(root: HTMLElement, controller: ReviewController) {
    this.root = root;
    this.controller = controller;
    this.buildShell();
    controller.onChange(() => this.render());
    this.render();
  }

  private buildShell(): void {
    this.root.textContent = "";
    const header = el("header");
    header.appendChild(el("h1", {}, "proof audit"));
    this.statusLine = el("span", { "data-testid": "status", class: "status" });
    header.appendChild(this.statusLine);
    this.root.appendChild(header);

    this.banner = el("div", { class: "banner hidden", "data-testid": "banner" });
    this.root.appendChild(this.banner);
    this.noticeList = el("ul", { class: "notices", "data-testid": "notices" });
    this.root.appendChild(this.noticeList);

    this.configForm = this.buildConfigForm();
    this.root.appendChild(this.configForm);

    this.ackStrip = el("div", { class: "ack hidden", "data-testid": "ack" });
    this.root.appendChild(this.ackStrip);

    this.sampleCard = el("section", { class: "card hidden", "data-testid": "sample-card" });
    this.root.appendChild(this.sampleCard);

    this.reportCard = el("section", { class: "card", "data-testid": "report-card" });
    this.root.appendChild(this.reportCard);
  }

  private buildConfigForm(): HTMLElement {
    const form = el("section", { class: "card", "data-testid": "config" });
    form.appendChild(el("h2", {}, "session"));
    const endpoint = el("input", {
      type: "url",
      placeholder: "http://localhost:8080",
      "data-testid": "endpoint-input",
    });
    endpoint.value = defaultEndpoint();
    const reviewer = el("input", {
      type: "text",
      placeholder: "reviewer id",
      "data-testid": "reviewer-input",
    });
    const start = el("button", { "data-testid": "start-btn" }, "start reviewing");
    start.addEventListener("click", () => {
      void this.controller.start(endpoint.value, reviewer.value);
    });
    for (const node of [endpoint, reviewer, start]) form.appendChild(node);
    form.appendChild(el("p", { class: "error hidden", "data-testid": "config-error" }));
    return form;
  }

  private render(): void {
    const c = this.controller;
    this.statusLine.textContent = c.phase;

    this.configForm.classList.toggle("hidden", c.phase !== "configuring");
    const configError = this.configForm.querySelector<HTMLElement>(
      '[data-testid="config-error"]',
    );
    if (configError) {
      const show = c.phase === "configuring" && c.error !== null;
      configError.textContent = show ? c.error! : "";
      configError.classList.toggle("hidden", !show);
    }

    // Banner: retry queue state, plus load failures while waiting.
    if (c.phase === "waiting-retry") {
      this.banner.classList.remove("hidden");
      this.banner.textContent =
        c.queuedCount > 0
          ? `${c.queuedCount} submission(s) queued, service unreachable; retrying`
          : (c.error ?? "service unreachable; retrying");
    } else {
      this.banner.classList.add("hidden");
    }

    this.noticeList.textContent = "";
    for (const notice of c.notices) {
      this.noticeList.appendChild(el("li", {}, notice));
    }

    // Last acknowledgment, with the bin revealed only after the fact.
    if (c.lastAck) {
      this.ackStrip.classList.remove("hidden");
      const bin = c.lastAck.bin ? ` filed under bin ${c.lastAck.bin}` : "";
      this.ackStrip.textContent =
        `scored ${c.lastAck.sampleId}: weighted total ` +
        `${c.lastAck.humanTotal.toFixed(4)}${bin}`;
    } else {
      this.ackStrip.classList.add("hidden");
    }

    this.renderSample();
    this.renderReport();
  }

  private renderSample(): void {
    const c = this.controller;
    const currentId = c.sample?.sample_id ?? null;

    if (c.phase === "empty") {
      this.sampleCard.classList.remove("hidden");
      this.sampleCard.textContent = "";
      this.sampleCard.appendChild(el("h2", {}, "review"));
      this.sampleCard.appendChild(
        el("p", { "data-testid": "empty-state" }, "queue empty: no pending samples"),
      );
      if (c.error) {
        this.sampleCard.appendChild(el("p", { class: "error", "data-testid": "error-line" }, c.error));
      }
      this.renderedSampleId = null;
      return;
    }

    if (!c.sample) {
      this.sampleCard.classList.toggle("hidden", c.phase === "configuring");
      if (c.phase !== "configuring" && this.renderedSampleId !== null) {
        this.sampleCard.textContent = "loading…";
        this.renderedSampleId = null;
      }
      return;
    }

    this.sampleCard.classList.remove("hidden");
    if (this.renderedSampleId !== currentId) {
      this.buildSampleCard();
      this.renderedSampleId = currentId;
    }

    const submit = this.sampleCard.querySelector<HTMLButtonElement>(
      '[data-testid="submit-btn"]',
    );
    if (submit) submit.disabled = !c.canSubmit;

    const errorLine = this.sampleCard.querySelector<HTMLElement>(
      '[data-testid="error-line"]',
    );
    if (errorLine) {
      errorLine.textContent = c.error ?? "";
      errorLine.classList.toggle("hidden", c.error === null);
    }
  }

  private buildSampleCard(): void {
    const c = this.controller;
    const sample = c.sample!;
    this.sampleCard.textContent = "";
    this.sampleCard.appendChild(el("h2", {}, "review"));

    // Metadata shown blind: model family and benchmark, never the
    // verifier's total or its bin.
    const meta = el("p", { class: "meta", "data-testid": "meta" });
    meta.textContent = `${sample.model_family} on ${sample.benchmark} (${sample.item_id})`;
    this.sampleCard.appendChild(meta);

    this.sampleCard.appendChild(el("h3", {}, "question"));
    const question = mathBlock(sample.question);
    question.setAttribute("data-testid", "question");
    this.sampleCard.appendChild(question);

    const sections = splitSections(sample.response);
    const panels: Array<[string, string | null, string]> = [
      ["techniques", sections.tech, "section-tech"],
      ["sketch", sections.sketch, "section-sketch"],
      ["proof", sections.proof, "section-proof"],
    ];
    for (const [title, body, testid] of panels) {
      if (body === null) continue;
      const panel = el("div", { class: `panel panel-${testid}`, "data-testid": testid });
      panel.appendChild(el("h3", {}, title));
      panel.appendChild(mathBlock(body));
      this.sampleCard.appendChild(panel);
    }

    const scores = el("div", { class: "scores" });
    DIMENSIONS.forEach((dimension, index) => {
      const label = el("label", {}, dimension);
      const input = el("input", {
        type: "number",
        min: "0",
        max: "1",
        step: "0.1",
        "data-testid": `score-input-${index}`,
      });
      input.addEventListener("change", () => {
        if (input.value === "") {
          c.setScore(index, null);
          return;
        }
        c.setScore(index, Number(input.value));
        const snapped = c.slots[index];
        if (snapped !== null) input.value = String(snapped);
      });
      label.appendChild(input);
      scores.appendChild(label);
    });
    this.sampleCard.appendChild(scores);

    const submit = el("button", { "data-testid": "submit-btn" }, "submit scores");
    submit.disabled = true;
    submit.addEventListener("click", () => void c.submit());
    this.sampleCard.appendChild(submit);

    this.sampleCard.appendChild(
      el("p", { class: "error hidden", "data-testid": "error-line" }),
    );
  }

  private renderReport(): void {
    const c = this.controller;
    this.reportCard.textContent = "";
    this.reportCard.appendChild(el("h2", {}, "calibration"));
    if (c.reportStale) {
      this.reportCard.appendChild(
        el("p", { class: "stale", "data-testid": "stale" }, "showing stale data (poll failed)"),
      );
    }

    const table = el("table", { "data-testid": "report-table" });
    const head = el("tr");
    for (const column of ["bin", "n", "LLM mean", "human mean", "diff"]) {
      head.appendChild(el("th", {}, column));
    }
    table.appendChild(head);

    const rows = c.report?.rows ?? [];
    if (rows.length === 0) {
      const row = el("tr", { "data-testid": "placeholder-row" });
      const cell = el("td", { colspan: "5" }, "no scored samples yet");
      row.appendChild(cell);
      table.appendChild(row);
    }
    for (const entry of rows) {
      const row = el("tr", { "data-bin": entry.bin });
      row.appendChild(el("td", {}, entry.bin));
      row.appendChild(el("td", { class: "bin-count" }, String(entry.count)));
      row.appendChild(el("td", {}, entry.mean_llm.toFixed(3)));
      row.appendChild(el("td", {}, entry.mean_human.toFixed(3)));
      row.appendChild(el("td", {}, entry.difference.toFixed(3)));
      table.appendChild(row);
    }
    this.reportCard.appendChild(table);

    const footer = el("p", { class: "meta", "data-testid": "report-footer" });
    const total = c.report?.total_scored ?? 0;
    const correlation = c.report?.overall_correlation;
    footer.textContent =
      `${total} scored` +
      (correlation === null || correlation === undefined
        ? ""
        : `, correlation ${correlation.toFixed(3)}`);
    this.reportCard.appendChild(footer);
  }
}

export function defaultEndpoint(): string {
  const params = new URLSearchParams(globalThis.location?.search ?? "");
  return params.get("endpoint") ?? "http://localhost:8080";
}
