/**
 * Orchestrates the API client and the composer state: every service call
 * goes through the latest-wins sequence counter, and every state change the
 * UI needs is funneled through these functions.
 */

import { ApiClient, ServiceError } from './api.js';
import {
  applyPrediction,
  applySuggestion,
  beginRequest,
  currentVersion,
  recordError,
  setDraft,
  storeSuggestions,
  undo,
} from './state.js';
import type { ComposerState, Draft, PendingSuggestion } from './types.js';

export class Controller {
  constructor(
    readonly api: ApiClient,
    readonly state: ComposerState,
    private readonly onChange: () => void = () => {},
  ) {}

  /** Update the draft from the form and re-predict (rapid calls: latest wins). */
  async composeAndPredict(draft?: Draft): Promise<void> {
    if (draft) {
      setDraft(this.state, draft);
    }
    const seq = beginRequest(this.state);
    const version = currentVersion(this.state);
    this.onChange();
    try {
      const response = await this.api.predict(this.state.draft);
      applyPrediction(this.state, seq, version, response);
    } catch (err) {
      recordError(this.state, seq, err instanceof ServiceError ? err.message : String(err));
    }
    this.onChange();
  }

  async showExplanations(topN: number): Promise<void> {
    try {
      this.state.lastExplanation = await this.api.explain(this.state.draft, topN);
      this.state.error = null;
    } catch (err) {
      this.state.error = err instanceof ServiceError ? err.message : String(err);
    }
    this.onChange();
  }

  async fetchSuggestions(position: string, seed = 0): Promise<void> {
    try {
      const response = await this.api.suggest(this.state.draft, position, seed);
      storeSuggestions(this.state, response.suggestions);
      this.state.error = null;
    } catch (err) {
      this.state.error = err instanceof ServiceError ? err.message : String(err);
    }
    this.onChange();
  }

  /** Apply a suggestion; on success the new draft is re-predicted. */
  async applySuggestion(suggestion: PendingSuggestion): Promise<boolean> {
    const result = applySuggestion(this.state, suggestion);
    if (!result.ok) {
      this.state.notice = result.reason ?? 'suggestion could not be applied';
      this.onChange();
      return false;
    }
    await this.composeAndPredict();
    return true;
  }

  undoLast(): void {
    if (undo(this.state)) {
      this.onChange();
    }
  }
}
