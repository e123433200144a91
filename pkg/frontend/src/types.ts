// Wire types mirroring the service's JSON payloads. The UI never recomputes
// scores: everything rendered is one of these fields.

export interface CandidateScorePayload {
  p_norm: number;
  s_rel: number;
  s_grd: number;
  s_utl: number;
  composite: number;
  p_unavailable?: boolean;
}

export interface SegmentPayload {
  text: string;
  score: CandidateScorePayload;
}

export interface CandidateBreakdown {
  p_norm: number;
  s_rel: number;
  s_grd: number;
  s_utl: number;
}

export interface CandidatePayload {
  passage_id: string | null;
  rank: number;
  failed: boolean;
  error: string | null;
  segments: SegmentPayload[];
  total: number;
  text: string;
  breakdown: CandidateBreakdown;
}

export interface RetrievedEntry {
  id: string;
  score: number;
}

export interface DecisionPayload {
  choice: string;
  probs: Record<string, number>;
}

export interface QueryPayload {
  summary: string;
  question: string;
  combined: string;
}

export interface SelectedPayload {
  index: number;
  text: string;
  total: number;
}

export interface StreamEvent {
  stream_seq: number;
  turn_index: number;
  seq: number;
  kind: "decision" | "query" | "retrieved" | "candidate" | "selected" | "error";
  payload: DecisionPayload | QueryPayload | { entries: RetrievedEntry[] } | CandidatePayload | SelectedPayload | Record<string, unknown>;
}

export interface TurnResultPayload {
  decision: DecisionPayload;
  query: QueryPayload | null;
  retrieved: RetrievedEntry[];
  candidates: CandidatePayload[];
  selected_index: number;
  selected_text: string;
  events: { seq: number; kind: string; payload: unknown }[];
}

export interface TurnRecord {
  turn_index: number;
  user_text: string;
  ts: number;
  result: TurnResultPayload;
}

export interface WeightsConfig {
  w1: number;
  w2: number;
  w3: number;
}

export interface PipelineConfigPayload {
  top_k: number;
  beam_size: number;
  weights: WeightsConfig;
  max_segments: number;
  retriever_kind: string;
  continue_window: number;
  score_mode: string;
  p_unavailable: number;
}

export interface SessionInfo {
  id: string;
  created_at: number;
  config: PipelineConfigPayload;
  conversation: { id: string; turns: { role: string; text: string }[] };
  turn_count: number;
  in_flight: boolean;
}

export interface ErrorBody {
  code: string;
  message: string;
  detail: unknown;
}
