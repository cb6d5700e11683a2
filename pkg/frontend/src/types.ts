/**
 * Wire types mirroring the inference service's JSON payloads, plus the
 * client-side composer state. The client never computes model quantities:
 * every number it displays arrives in one of these payloads.
 */

export interface Draft {
  subject: string;
  body: string;
  recipient_org?: string | null;
  interests?: string[] | null;
  parse_block?: string | null;
}

export interface PredictResponse {
  probability: number;
  predicted_label: number;
  model_version: string;
  structural_view: 'ok' | 'degraded';
}

export interface PrototypeEvidence {
  prototype_index: number;
  class_label: number;
  similarity: number;
  mean_similarity: number;
  contribution: number;
  matched_unit_index: number | null;
  matched_unit_text: string | null;
  source_id: string;
  source_unit_index: number;
  source_text: string;
  source_distance: number;
}

export type Granularity = 'document' | 'sentence' | 'phrase';

export interface ExplainResponse {
  email_id: string;
  predicted_label: number;
  probabilities: [number, number];
  structural_degraded: boolean;
  similarity_vector: Record<string, number[]>;
  evidence: Record<Granularity, PrototypeEvidence[]>;
  model_version: string;
}

export interface EditSuggestion {
  position: string;
  sentence_index: number; // -1 targets the subject
  original_span: string;
  replacement: string;
  edited_text: string;
  prototype_index: number;
  source_id: string;
  source_text: string;
  before_probability: number;
  after_probability: number;
  topic_match: number;
  random_fallback: boolean;
}

export interface SuggestResponse {
  model_version: string;
  position: string;
  suggestions: EditSuggestion[];
}

/** A suggestion pinned to the draft version it was generated for. */
export interface PendingSuggestion extends EditSuggestion {
  draft_version: string;
}

export interface HistoryEntry {
  version: string;
  draft: Draft;
  probability: number | null;
  structural_view: 'ok' | 'degraded' | null;
}

export interface ComposerState {
  draft: Draft;
  /** Append-only trail of (text version, probability) pairs. */
  history: HistoryEntry[];
  lastExplanation: ExplainResponse | null;
  pendingSuggestions: PendingSuggestion[];
  /** Monotone counter implementing latest-wins request de-duplication. */
  requestSeq: number;
  predictionPending: boolean;
  error: string | null;
  notice: string | null;
}
