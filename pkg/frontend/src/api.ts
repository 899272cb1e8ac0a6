/** Typed client for the annotation service. All mutations go through the
 * documented endpoints; nothing is computed client-side. */

import type {
  AdjudicationsDoc,
  ConsistencyDoc,
  DegenerateOption,
  DegenerateSplitBody,
  LabelSubmission,
  RefineResult,
  RunDoc,
  SessionDoc,
} from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx response carrying the parsed error payload. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
    message?: string,
  ) {
    super(message ?? `HTTP ${status}`);
  }
}

/** Refine returned 422 degenerate_split: the operator must pick an option. */
export class DegenerateSplitError extends ApiError {
  constructor(readonly payload: DegenerateSplitBody) {
    super(422, payload, `degenerate split in cluster ${payload.cluster}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { 'Content-Type': 'application/json' } : {}),
      },
      ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
    };
    return this.fetchFn(this.baseUrl + path, init);
  }

  private async json<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.request(method, path, body);
    const payload = response.status === 204 ? null : await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, payload);
    }
    return payload as T;
  }

  runInfo(runId: string): Promise<RunDoc> {
    return this.json('GET', `/runs/${runId}`);
  }

  createSession(runId: string): Promise<SessionDoc> {
    return this.json('POST', `/runs/${runId}/sessions`);
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.json('GET', `/sessions/${sessionId}`);
  }

  /** Resolves only on 204; non-2xx raises ApiError (409/422 intact). */
  async submitLabel(sessionId: string, label: LabelSubmission): Promise<void> {
    const response = await this.request('POST', `/sessions/${sessionId}/labels`, label);
    if (response.status !== 204) {
      const payload = await response.json().catch(() => null);
      throw new ApiError(response.status, payload);
    }
  }

  getAdjudications(sessionId: string): Promise<AdjudicationsDoc> {
    return this.json('GET', `/sessions/${sessionId}/adjudications`);
  }

  async adjudicate(sessionId: string, imageId: string, theme: string): Promise<void> {
    const response = await this.request('POST', `/sessions/${sessionId}/adjudications`, {
      image_id: imageId,
      theme,
    });
    if (response.status !== 204) {
      const payload = await response.json().catch(() => null);
      throw new ApiError(response.status, payload);
    }
  }

  getConsistency(sessionId: string): Promise<ConsistencyDoc> {
    return this.json('GET', `/sessions/${sessionId}/consistency`);
  }

  async runRefine(runId: string, onDegenerate?: DegenerateOption): Promise<RefineResult> {
    const body = onDegenerate ? { on_degenerate: onDegenerate } : undefined;
    const response = await this.request('POST', `/runs/${runId}/refine`, body);
    const payload = response.status === 204 ? null : await response.json();
    if (response.status === 422 && (payload as DegenerateSplitBody)?.code === 'degenerate_split') {
      throw new DegenerateSplitError(payload as DegenerateSplitBody);
    }
    if (!response.ok) {
      throw new ApiError(response.status, payload);
    }
    return payload as RefineResult;
  }

  thumbnailUrl(runId: string, imageId: string): string {
    return `${this.baseUrl}/runs/${runId}/images/${imageId}/thumbnail`;
  }
}
