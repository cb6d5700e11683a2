/**
 * Thin client over the inference service. The fetch implementation is
 * injectable so tests run against a mock service with no network.
 */

import type { Draft, ExplainResponse, PredictResponse, SuggestResponse } from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => globalThis.fetch(...args),
  ) {}

  private async post<T>(path: string, payload: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(payload),
      });
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      const detail = await response.text();
      throw new ServiceError(`${path} failed (${response.status}): ${detail}`, response.status);
    }
    return (await response.json()) as T;
  }

  private async get<T>(path: string): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`);
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      throw new ServiceError(`${path} failed (${response.status})`, response.status);
    }
    return (await response.json()) as T;
  }

  health(): Promise<{ status: string; model_version: string }> {
    return this.get('/health');
  }

  predict(draft: Draft): Promise<PredictResponse> {
    return this.post('/predict', draft);
  }

  explain(draft: Draft, topN: number): Promise<ExplainResponse> {
    return this.post('/explain', { ...draft, top_n: topN });
  }

  suggest(draft: Draft, position: string, seed = 0): Promise<SuggestResponse> {
    return this.post('/suggest', { ...draft, position, seed });
  }

  prototypes(): Promise<{ model_version: string; prototypes: Record<string, unknown[]> }> {
    return this.get('/prototypes');
  }
}
