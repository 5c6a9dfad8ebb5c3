/** Wire types for the /v1 pipeline API. Field names mirror the server
 * payloads exactly; the client never re-derives timing from them. */

export interface StatusPayload {
  song_id: string | null;
  stage: string;
  subclip_states: Record<string, string>;
  warnings: string[];
  error: string | null;
  stage_history: Record<string, unknown>[];
  poll_interval_s: number;
  active_mutations: string[];
}

export interface LyricLineDto {
  text: string;
  start: number;
  end: number;
  confidence: number;
}

export interface StructureSegmentDto {
  label: string;
  start: number;
  end: number;
}

export interface ShotDto {
  shot_id: string;
  start: number;
  end: number;
  section_label: string;
  lyric_lines: LyricLineDto[];
  description_slot: string | null;
  lipsync: boolean;
  continuity_from_previous: boolean;
}

export interface SubclipDto {
  subclip_id: string;
  parent_shot: string;
  start: number;
  end: number;
  keyframe_source: "generated_image" | "previous_last_frame";
  state: string;
  selected_candidate: string | null;
  fallback_accepted: boolean;
  human_override: boolean;
  error: string | null;
}

export interface ShotsPayload {
  song_id: string;
  fps: number;
  total_frames: number;
  structure: StructureSegmentDto[];
  lyrics: LyricLineDto[];
  shots: ShotDto[];
  subclips: SubclipDto[];
}

export interface ImageVerdictDto {
  kind: "image";
  candidate_id: string;
  realism_pass: boolean;
  adherence_score: number;
  rationale: string;
}

export interface VideoVerdictDto {
  kind: "video";
  candidate_id: string;
  feasibility_pass: boolean;
  alignment_score: number;
  identity_score: number;
  rationale: string;
}

export type VerdictDto = ImageVerdictDto | VideoVerdictDto;

export interface CandidateDto {
  candidate_id: string;
  subclip_id?: string;
  artifact: string;
  last_frame?: string;
  duration_frames?: number;
  provenance: { backend: string; batch: number; attempt: number };
  verdict: VerdictDto | null;
  selected?: boolean;
}

export interface CandidatesPayload {
  subclip_id: string;
  state: string;
  backend: string | null;
  selected_candidate: string | null;
  fallback_accepted: boolean;
  human_override: boolean;
  error: string | null;
  candidates: CandidateDto[];
  keyframes: CandidateDto[];
}

export interface ManifestEntryDto {
  subclip_id: string;
  start: number;
  end: number;
  artifact: string | null;
  backend: string | null;
  fallback_accepted: boolean;
  human_override: boolean;
  gap: boolean;
  failure: string | null;
}

export interface ManifestPayload {
  manifest_schema: number;
  song_id: string;
  total_frames: number;
  audio: Record<string, unknown>;
  entries: ManifestEntryDto[];
}

export interface ScoreCardDto {
  video_id: string;
  rater: string;
  scores: Record<string, number>;
  categories: Record<string, string>;
}

export interface ScoresPayload {
  cards: ScoreCardDto[];
}

/** Mutation acceptance / token records. Event-sourced records from
 * finished runs omit `status`; treat those as completed. */
export interface TokenPayload {
  token: string;
  action?: string;
  status?: string;
  duplicate?: boolean;
  subclip_id?: string;
  candidate_id?: string;
  downstream?: string[];
  error?: string;
  [key: string]: unknown;
}
