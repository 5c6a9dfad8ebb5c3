/** DOM wiring: render the latest snapshot, open candidate panels, and
 * submit steering actions. All rendering goes through render(), which
 * rebuilds the page from (snapshot, optimistic actions) alone — there is
 * no other client state to drift out of sync. */

import { ApiClient, ConflictError } from "./api.js";
import { ActionTracker } from "./optimistic.js";
import { Poller, type PollResult, type Snapshot } from "./poll.js";
import type { CandidatesPayload } from "./types.js";
import {
  buildPanel,
  buildTimeline,
  chainDownstream,
  disconnected,
  statusLine,
  summarizeManifest,
  type CandidateVM,
  type PanelVM,
  type ShotVM,
  type SubclipVM,
  type TimelineVM,
} from "./viewmodel.js";

type Child = Node | string | null;

function h(tag: string, attrs: Record<string, string> = {}, ...children: Child[]): HTMLElement {
  const el = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) el.setAttribute(key, value);
  for (const child of children) {
    if (child === null) continue;
    el.append(typeof child === "string" ? document.createTextNode(child) : child);
  }
  return el;
}

export class App {
  readonly tracker = new ActionTracker();
  readonly poller: Poller;
  private result: PollResult | null = null;
  private panelSubclip: string | null = null;
  private panelPayload: CandidatesPayload | null = null;

  constructor(
    private readonly root: HTMLElement,
    readonly api: ApiClient,
  ) {
    this.poller = new Poller(api, this.tracker, (result) => {
      void this.onPoll(result);
    });
  }

  start(): void {
    this.poller.start();
  }

  async onPoll(result: PollResult): Promise<void> {
    this.result = result;
    if (result.ok && this.panelSubclip) {
      try {
        this.panelPayload = await this.api.candidates(this.panelSubclip);
      } catch {
        this.panelPayload = null;
      }
    }
    this.render();
  }

  async openPanel(subclipId: string): Promise<void> {
    this.panelSubclip = subclipId;
    try {
      this.panelPayload = await this.api.candidates(subclipId);
    } catch {
      this.panelPayload = null;
    }
    this.render();
  }

  closePanel(): void {
    this.panelSubclip = null;
    this.panelPayload = null;
    this.render();
  }

  private downstreamOf(subclipId: string): string[] {
    if (!this.result?.ok || !this.result.snapshot.shots) return [];
    return chainDownstream(this.result.snapshot.shots.subclips, subclipId);
  }

  /** Optimistic submit: badges flip before the request settles, and a
   * double click reuses the in-flight action instead of posting again. */
  async regenerate(subclipId: string): Promise<void> {
    const { action, created } = this.tracker.begin(
      "regenerate",
      subclipId,
      this.downstreamOf(subclipId),
    );
    this.render();
    if (!created) return;
    try {
      await this.api.regenerate(subclipId, action.token);
    } catch (err) {
      this.tracker.fail(action.token, this.describe(err));
      this.render();
    }
  }

  async approve(subclipId: string, candidateId: string): Promise<void> {
    const { action, created } = this.tracker.begin(
      "approve",
      subclipId,
      this.downstreamOf(subclipId),
      candidateId,
    );
    this.render();
    if (!created) return;
    try {
      await this.api.approve(subclipId, candidateId, action.token);
    } catch (err) {
      this.tracker.fail(action.token, this.describe(err));
      this.render();
    }
  }

  async startRun(): Promise<void> {
    try {
      await this.api.run(`run-${Date.now()}`);
    } catch (err) {
      // surfaced on the next poll's status banner; conflicts mean a run
      // is already going, which the status line shows anyway
      if (!(err instanceof ConflictError)) throw err;
    }
    this.render();
  }

  private describe(err: unknown): string {
    if (err instanceof ConflictError) return `conflict: ${err.detail} (retry when idle)`;
    return err instanceof Error ? err.message : String(err);
  }

  // --- rendering -----------------------------------------------------------

  render(): void {
    this.root.replaceChildren();
    if (!this.result) {
      this.root.append(h("div", { class: "banner" }, "connecting..."));
      return;
    }
    if (!this.result.ok) {
      // explicit error state; never leave a stale timeline up
      const vm = disconnected(this.result.error);
      this.root.append(h("div", { class: "banner banner-error" }, vm.error));
      return;
    }
    const snapshot = this.result.snapshot;
    this.root.append(this.renderHeader(snapshot));
    for (const rejected of this.tracker.rejected()) {
      const dismiss = h("button", { class: "dismiss" }, "dismiss");
      dismiss.addEventListener("click", () => {
        this.tracker.dismiss(rejected.token);
        this.render();
      });
      this.root.append(
        h(
          "div",
          { class: "banner banner-warn" },
          `${rejected.kind} ${rejected.subclipId}: ${rejected.message ?? "rejected"} `,
          dismiss,
        ),
      );
    }
    if (!snapshot.shots) {
      this.root.append(h("div", { class: "banner" }, "no plan yet — start a run"));
      return;
    }
    const vm = buildTimeline(snapshot.shots, this.tracker.overlay());
    this.root.append(this.renderSections(vm));
    this.root.append(this.renderTimeline(vm));
    if (this.panelSubclip && this.panelPayload) {
      this.root.append(this.renderPanel(buildPanel(this.panelPayload)));
    }
    if (snapshot.manifest) {
      const m = summarizeManifest(snapshot.manifest);
      this.root.append(
        h(
          "footer",
          { class: "manifest" },
          `manifest: ${m.entries} entries, ${m.gaps} gaps, ` +
            `${m.overrides.length} overrides, ${m.fallbacks.length} fallbacks`,
        ),
      );
    }
  }

  private renderHeader(snapshot: Snapshot): HTMLElement {
    const run = h("button", { class: "run" }, "run pipeline");
    run.addEventListener("click", () => void this.startRun());
    return h(
      "header",
      {},
      h("h1", {}, snapshot.status.song_id ?? "no song"),
      h("span", { class: "status-line" }, statusLine(snapshot.status)),
      run,
    );
  }

  private renderSections(vm: TimelineVM): HTMLElement {
    const bar = h("div", { class: "sections" });
    for (const seg of vm.sections) {
      const width = ((seg.end - seg.start) / vm.totalFrames) * 100;
      bar.append(
        h(
          "div",
          {
            class: "section",
            style: `width:${width}%;background:${seg.color}`,
            title: `${seg.label} [${seg.start}, ${seg.end})`,
          },
          seg.label,
        ),
      );
    }
    return bar;
  }

  private renderTimeline(vm: TimelineVM): HTMLElement {
    const row = h("div", { class: "timeline" });
    for (const shot of vm.shots) row.append(this.renderShot(vm, shot));
    return row;
  }

  private renderShot(vm: TimelineVM, shot: ShotVM): HTMLElement {
    const width = ((shot.end - shot.start) / vm.totalFrames) * 100;
    const marks = [shot.lipsync ? "L" : "", shot.continuity ? "C" : ""].join("");
    const block = h(
      "div",
      {
        class: "shot",
        style: `width:${width}%;border-top-color:${shot.color}`,
        "data-shot": shot.id,
        title: `${shot.id} ${shot.label} [${shot.start}, ${shot.end}) ${marks}`,
      },
      h("div", { class: "shot-label" }, `${shot.id.replace("shot_", "s")}${marks ? " " + marks : ""}`),
    );
    const chips = h("div", { class: "chips" });
    for (const sub of shot.subclips) chips.append(this.renderChip(sub));
    block.append(chips);
    if (shot.lyrics.length) {
      block.append(h("div", { class: "lyrics", title: shot.lyrics.join("\n") }, shot.lyrics[0]));
    }
    return block;
  }

  private renderChip(sub: SubclipVM): HTMLElement {
    const classes = ["chip", `badge-${sub.badge}`];
    if (sub.optimistic) classes.push("optimistic");
    const chip = h(
      "button",
      {
        class: classes.join(" "),
        "data-subclip": sub.id,
        title: `${sub.id} [${sub.start}, ${sub.end}) ${sub.badge}${sub.error ? `: ${sub.error}` : ""}`,
      },
      sub.chained ? "⤷" : "□",
    );
    if (sub.override) chip.append(h("span", { class: "marker marker-override" }, "H"));
    if (sub.fallback) chip.append(h("span", { class: "marker marker-fallback" }, "F"));
    chip.addEventListener("click", () => void this.openPanel(sub.id));
    return chip;
  }

  private renderPanel(panel: PanelVM): HTMLElement {
    const close = h("button", { class: "close" }, "close");
    close.addEventListener("click", () => this.closePanel());
    const regen = h("button", { class: "regenerate" }, "regenerate");
    regen.addEventListener("click", () => void this.regenerate(panel.subclipId));

    const el = h(
      "section",
      { class: "panel", "data-panel": panel.subclipId },
      h(
        "div",
        { class: "panel-head" },
        h("strong", {}, panel.subclipId),
        h("span", { class: `badge-${panel.state}` }, panel.state),
        panel.backend ? h("span", { class: "backend" }, panel.backend) : null,
        regen,
        close,
      ),
      panel.error ? h("div", { class: "banner banner-error" }, panel.error) : null,
    );
    el.append(this.renderCandidateList("clips", panel, panel.candidates, true));
    if (panel.keyframes.length) {
      el.append(this.renderCandidateList("keyframes", panel, panel.keyframes, false));
    }
    return el;
  }

  private renderCandidateList(
    title: string,
    panel: PanelVM,
    candidates: CandidateVM[],
    approvable: boolean,
  ): HTMLElement {
    const list = h("div", { class: "candidates" }, h("h2", {}, title));
    for (const cand of candidates) {
      const row = h(
        "div",
        { class: `candidate${cand.selected ? " selected" : ""}`, "data-candidate": cand.id },
        h("code", {}, cand.id),
        h("span", { class: "provenance" }, `${cand.backend} b${cand.batch} a${cand.attempt}`),
        this.renderVerdict(cand),
        // mock artifacts are JSON stubs, so show the locator as a card
        // instead of pretending it is playable media
        h("span", { class: "artifact", title: cand.artifact }, cand.artifact),
      );
      if (approvable && !cand.selected) {
        const approve = h("button", { class: "approve" }, "approve");
        approve.addEventListener("click", () => void this.approve(panel.subclipId, cand.id));
        row.append(approve);
      }
      list.append(row);
    }
    return list;
  }

  private renderVerdict(cand: CandidateVM): HTMLElement {
    if (!cand.verdict) return h("span", { class: "verdict verdict-none" }, "unjudged");
    const v = cand.verdict;
    const scores = v.scores.map((s) => `${s.name} ${s.value}`).join(", ");
    return h(
      "span",
      { class: `verdict ${v.pass ? "verdict-pass" : "verdict-fail"}`, title: v.rationale },
      `${v.pass ? "pass" : "fail"}${scores ? ` (${scores})` : ""}`,
    );
  }
}
