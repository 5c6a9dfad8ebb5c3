/** Pure projections from API payloads to what the page renders. No
 * timing is re-derived here: frame numbers pass through verbatim and
 * layout is proportional to the spans the server reports. */

import type {
  CandidateDto,
  CandidatesPayload,
  ManifestPayload,
  ShotsPayload,
  StatusPayload,
  SubclipDto,
  VerdictDto,
} from "./types.js";
import type { OptimisticAction } from "./optimistic.js";

export type Badge = "pending" | "running" | "done" | "failed" | "blocked";

export interface SubclipVM {
  id: string;
  parentShot: string;
  start: number;
  end: number;
  chained: boolean;
  badge: Badge;
  selectedCandidate: string | null;
  fallback: boolean;
  override: boolean;
  error: string | null;
  /** true when the badge comes from an in-flight action, not the server */
  optimistic: boolean;
}

export interface ShotVM {
  id: string;
  start: number;
  end: number;
  label: string;
  color: string;
  lipsync: boolean;
  continuity: boolean;
  lyrics: string[];
  subclips: SubclipVM[];
}

export interface TimelineVM {
  connected: true;
  songId: string;
  fps: number;
  totalFrames: number;
  sections: { label: string; start: number; end: number; color: string }[];
  shots: ShotVM[];
}

export interface DisconnectedVM {
  connected: false;
  error: string;
}

const SECTION_COLORS: Record<string, string> = {
  intro: "#5b8dbf",
  verse: "#4f9d69",
  pre_chorus: "#b08f3c",
  chorus: "#c05d5d",
  bridge: "#8a63b8",
  instrumental: "#4e9a9a",
  outro: "#7d7d8f",
};

export function sectionColor(label: string): string {
  const known = SECTION_COLORS[label];
  if (known) return known;
  // stable fallback hue for labels the palette does not know
  let h = 0;
  for (const ch of label) h = (h * 31 + ch.charCodeAt(0)) % 360;
  return `hsl(${h}, 45%, 55%)`;
}

const BADGES: ReadonlySet<string> = new Set(["pending", "running", "done", "failed", "blocked"]);

function badgeOf(state: string): Badge {
  return (BADGES.has(state) ? state : "pending") as Badge;
}

/** Subclips chained after `subclipId` via last-frame keyframes: everything
 * that follows it, in server order, until the next fresh-keyframe subclip
 * starts a new chain. Mirrors the server's invalidation rule. */
export function chainDownstream(subclips: SubclipDto[], subclipId: string): string[] {
  const index = subclips.findIndex((s) => s.subclip_id === subclipId);
  if (index < 0) return [];
  const out: string[] = [];
  for (let i = index + 1; i < subclips.length; i++) {
    if (subclips[i].keyframe_source === "generated_image") break;
    out.push(subclips[i].subclip_id);
  }
  return out;
}

function overlayBadge(sub: SubclipDto, actions: OptimisticAction[]): Badge | null {
  for (const action of actions) {
    if (action.state !== "inflight") continue;
    if (action.subclipId === sub.subclip_id) return "running";
    if (action.downstream.includes(sub.subclip_id)) return "blocked";
  }
  return null;
}

export function buildTimeline(payload: ShotsPayload, actions: OptimisticAction[]): TimelineVM {
  const byShot = new Map<string, SubclipVM[]>();
  for (const sub of payload.subclips) {
    const overlaid = overlayBadge(sub, actions);
    const vm: SubclipVM = {
      id: sub.subclip_id,
      parentShot: sub.parent_shot,
      start: sub.start,
      end: sub.end,
      chained: sub.keyframe_source === "previous_last_frame",
      badge: overlaid ?? badgeOf(sub.state),
      selectedCandidate: sub.selected_candidate,
      fallback: sub.fallback_accepted,
      override: sub.human_override,
      error: sub.error,
      optimistic: overlaid !== null,
    };
    const bucket = byShot.get(sub.parent_shot);
    if (bucket) bucket.push(vm);
    else byShot.set(sub.parent_shot, [vm]);
  }
  return {
    connected: true,
    songId: payload.song_id,
    fps: payload.fps,
    totalFrames: payload.total_frames,
    sections: payload.structure.map((seg) => ({
      label: seg.label,
      start: seg.start,
      end: seg.end,
      color: sectionColor(seg.label),
    })),
    shots: payload.shots.map((shot) => ({
      id: shot.shot_id,
      start: shot.start,
      end: shot.end,
      label: shot.section_label,
      color: sectionColor(shot.section_label),
      lipsync: shot.lipsync,
      continuity: shot.continuity_from_previous,
      lyrics: shot.lyric_lines.map((l) => l.text),
      subclips: byShot.get(shot.shot_id) ?? [],
    })),
  };
}

export function disconnected(error: string): DisconnectedVM {
  return { connected: false, error };
}

// --- candidate panel -------------------------------------------------------

export interface CandidateVM {
  id: string;
  artifact: string;
  backend: string;
  batch: number;
  attempt: number;
  selected: boolean;
  verdict: {
    pass: boolean;
    scores: { name: string; value: number }[];
    rationale: string;
  } | null;
}

export interface PanelVM {
  subclipId: string;
  state: Badge;
  backend: string | null;
  selectedCandidate: string | null;
  fallback: boolean;
  override: boolean;
  error: string | null;
  candidates: CandidateVM[];
  keyframes: CandidateVM[];
}

function verdictVM(verdict: VerdictDto | null): CandidateVM["verdict"] {
  if (!verdict) return null;
  if (verdict.kind === "image") {
    return {
      pass: verdict.realism_pass,
      scores: [{ name: "adherence", value: verdict.adherence_score }],
      rationale: verdict.rationale,
    };
  }
  return {
    pass: verdict.feasibility_pass,
    scores: [
      { name: "alignment", value: verdict.alignment_score },
      { name: "identity", value: verdict.identity_score },
    ],
    rationale: verdict.rationale,
  };
}

function candidateVM(rec: CandidateDto, selectedId: string | null): CandidateVM {
  return {
    id: rec.candidate_id,
    artifact: rec.artifact,
    backend: rec.provenance.backend,
    batch: rec.provenance.batch,
    attempt: rec.provenance.attempt,
    selected: rec.selected ?? rec.candidate_id === selectedId,
    verdict: verdictVM(rec.verdict),
  };
}

/** Candidates stay in the order the server reports, which is verifier
 * history order; the panel must not re-sort them. */
export function buildPanel(payload: CandidatesPayload): PanelVM {
  return {
    subclipId: payload.subclip_id,
    state: badgeOf(payload.state),
    backend: payload.backend,
    selectedCandidate: payload.selected_candidate,
    fallback: payload.fallback_accepted,
    override: payload.human_override,
    error: payload.error,
    candidates: payload.candidates.map((c) => candidateVM(c, payload.selected_candidate)),
    keyframes: payload.keyframes.map((c) => candidateVM(c, null)),
  };
}

// --- summaries -------------------------------------------------------------

export interface ManifestVM {
  entries: number;
  gaps: number;
  overrides: string[];
  fallbacks: string[];
}

export function summarizeManifest(manifest: ManifestPayload): ManifestVM {
  return {
    entries: manifest.entries.length,
    gaps: manifest.entries.filter((e) => e.gap).length,
    overrides: manifest.entries.filter((e) => e.human_override).map((e) => e.subclip_id),
    fallbacks: manifest.entries.filter((e) => e.fallback_accepted).map((e) => e.subclip_id),
  };
}

export function statusLine(status: StatusPayload): string {
  const states = Object.values(status.subclip_states);
  const done = states.filter((s) => s === "done").length;
  const failed = states.filter((s) => s === "failed").length;
  const parts = [`stage: ${status.stage}`];
  if (states.length) parts.push(`${done}/${states.length} subclips done`);
  if (failed) parts.push(`${failed} failed`);
  if (status.active_mutations.length) parts.push(`${status.active_mutations.length} mutating`);
  if (status.error) parts.push(`error: ${status.error}`);
  return parts.join(" · ");
}
