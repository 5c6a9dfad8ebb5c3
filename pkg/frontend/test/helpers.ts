/** Shared payload fixtures plus a canned-response fetch. The fixture
 * song has three shots and four subclips with one chain that crosses a
 * shot boundary (s0c0 -> s1c0 -> s1c1) and a fresh head on the last
 * shot, so downstream walks get exercised both ways. */

import type { FetchLike } from "../src/api.js";
import type {
  CandidatesPayload,
  ManifestPayload,
  ShotsPayload,
  StatusPayload,
  SubclipDto,
} from "../src/types.js";

function sub(
  id: string,
  parent: string,
  start: number,
  end: number,
  source: SubclipDto["keyframe_source"],
  state: string,
  extra: Partial<SubclipDto> = {},
): SubclipDto {
  return {
    subclip_id: id,
    parent_shot: parent,
    start,
    end,
    keyframe_source: source,
    state,
    selected_candidate: null,
    fallback_accepted: false,
    human_override: false,
    error: null,
    ...extra,
  };
}

export function fixtureStatus(overrides: Partial<StatusPayload> = {}): StatusPayload {
  return {
    song_id: "synth_0042",
    stage: "done",
    subclip_states: { s0c0: "done", s1c0: "done", s1c1: "done", s2c0: "failed" },
    warnings: [],
    error: null,
    stage_history: [],
    poll_interval_s: 1.0,
    active_mutations: [],
    ...overrides,
  };
}

export function fixtureShots(): ShotsPayload {
  return {
    song_id: "synth_0042",
    fps: 24,
    total_frames: 420,
    structure: [
      { label: "intro", start: 0, end: 120 },
      { label: "chorus", start: 120, end: 336 },
      { label: "outro", start: 336, end: 420 },
    ],
    lyrics: [{ text: "hold the light", start: 130, end: 200, confidence: 0.92 }],
    shots: [
      {
        shot_id: "shot_000",
        start: 0,
        end: 120,
        section_label: "intro",
        lyric_lines: [],
        description_slot: "neon alley, slow push in",
        lipsync: false,
        continuity_from_previous: false,
      },
      {
        shot_id: "shot_001",
        start: 120,
        end: 336,
        section_label: "chorus",
        lyric_lines: [{ text: "hold the light", start: 130, end: 200, confidence: 0.92 }],
        description_slot: null,
        lipsync: true,
        continuity_from_previous: true,
      },
      {
        shot_id: "shot_002",
        start: 336,
        end: 420,
        section_label: "outro",
        lyric_lines: [],
        description_slot: null,
        lipsync: false,
        continuity_from_previous: false,
      },
    ],
    subclips: [
      sub("s0c0", "shot_000", 0, 120, "generated_image", "done", {
        selected_candidate: "s0c0-clip-b0-c1",
      }),
      sub("s1c0", "shot_001", 120, 228, "previous_last_frame", "done", {
        selected_candidate: "s1c0-clip-b0-c0",
        human_override: true,
      }),
      sub("s1c1", "shot_001", 228, 336, "previous_last_frame", "done", {
        selected_candidate: "s1c1-clip-b0-c2",
        fallback_accepted: true,
      }),
      sub("s2c0", "shot_002", 336, 420, "generated_image", "failed", {
        error: "no viable candidate",
      }),
    ],
  };
}

export function fixtureCandidates(): CandidatesPayload {
  return {
    subclip_id: "s1c0",
    state: "done",
    backend: "general_render",
    selected_candidate: "s1c0-clip-b0-c0",
    fallback_accepted: false,
    human_override: true,
    error: null,
    candidates: [
      {
        candidate_id: "s1c0-clip-b0-c0",
        subclip_id: "s1c0",
        artifact: "artifacts/clip_aaaa.json",
        last_frame: "frame:aaaa",
        duration_frames: 108,
        provenance: { backend: "general_render", batch: 0, attempt: 1 },
        verdict: {
          kind: "video",
          candidate_id: "s1c0-clip-b0-c0",
          feasibility_pass: true,
          alignment_score: 0.81,
          identity_score: 0.9,
          rationale: "motion tracks the brief",
        },
        selected: true,
      },
      {
        candidate_id: "s1c0-clip-b0-c1",
        subclip_id: "s1c0",
        artifact: "artifacts/clip_bbbb.json",
        last_frame: "frame:bbbb",
        duration_frames: 108,
        provenance: { backend: "general_render", batch: 0, attempt: 2 },
        verdict: {
          kind: "video",
          candidate_id: "s1c0-clip-b0-c1",
          feasibility_pass: false,
          alignment_score: 0.4,
          identity_score: 0.7,
          rationale: "warped hands",
        },
        selected: false,
      },
      {
        candidate_id: "s1c0-clip-b1-c0",
        subclip_id: "s1c0",
        artifact: "artifacts/clip_cccc.json",
        provenance: { backend: "general_render", batch: 1, attempt: 1 },
        verdict: null,
        selected: false,
      },
    ],
    keyframes: [
      {
        candidate_id: "s1c0-key-b0-c0",
        artifact: "artifacts/key_dddd.json",
        provenance: { backend: "image_gen", batch: 0, attempt: 1 },
        verdict: {
          kind: "image",
          candidate_id: "s1c0-key-b0-c0",
          realism_pass: true,
          adherence_score: 0.66,
          rationale: "clean plate",
        },
      },
    ],
  };
}

export function fixtureManifest(): ManifestPayload {
  return {
    manifest_schema: 1,
    song_id: "synth_0042",
    total_frames: 420,
    audio: { path: "audio.wav" },
    entries: [
      {
        subclip_id: "s0c0",
        start: 0,
        end: 120,
        artifact: "artifacts/clip_s0.json",
        backend: "general_render",
        fallback_accepted: false,
        human_override: false,
        gap: false,
        failure: null,
      },
      {
        subclip_id: "s1c0",
        start: 120,
        end: 228,
        artifact: "artifacts/clip_s1a.json",
        backend: "general_render",
        fallback_accepted: false,
        human_override: true,
        gap: false,
        failure: null,
      },
      {
        subclip_id: "s1c1",
        start: 228,
        end: 336,
        artifact: "artifacts/clip_s1b.json",
        backend: "general_render",
        fallback_accepted: true,
        human_override: false,
        gap: false,
        failure: null,
      },
      {
        subclip_id: "s2c0",
        start: 336,
        end: 420,
        artifact: null,
        backend: null,
        fallback_accepted: false,
        human_override: false,
        gap: true,
        failure: "no viable candidate",
      },
    ],
  };
}

// --- canned fetch ----------------------------------------------------------

export interface RecordedRequest {
  url: string;
  init?: RequestInit;
}

export type Route =
  | { status: number; body: unknown }
  | ((init?: RequestInit) => { status: number; body: unknown });

/** Routes are exact path matches; anything else 404s like the server
 * does for artifacts that do not exist yet. */
export function routedFetch(routes: Record<string, Route>, log?: RecordedRequest[]): FetchLike {
  return async (url, init) => {
    log?.push({ url, init });
    const route = routes[url];
    const resolved =
      route === undefined
        ? { status: 404, body: { detail: `no route for ${url}` } }
        : typeof route === "function"
          ? route(init)
          : route;
    return new Response(JSON.stringify(resolved.body), {
      status: resolved.status,
      headers: { "content-type": "application/json" },
    });
  };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
