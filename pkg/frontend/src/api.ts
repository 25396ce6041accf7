// Thin client over the review service. All state lives server-side; the UI
// only ever reads and posts.

import type { CandidateSet, Decision, Progress } from './types.js';

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export class EndOfQueue extends Error {
  constructor() {
    super('no unannotated tasks remain');
  }
}

async function detailOf(response: Response): Promise<string> {
  try {
    const body = await response.json();
    return typeof body.detail === 'string' ? body.detail : JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ReviewApi {
  constructor(private readonly baseUrl: string = '') {}

  async fetchNextTask(kind: string, annotator: string): Promise<CandidateSet> {
    const params = new URLSearchParams();
    if (kind) params.set('kind', kind);
    if (annotator) params.set('annotator', annotator);
    const query = params.toString();
    const response = await fetch(
      `${this.baseUrl}/api/tasks/next${query ? `?${query}` : ''}`,
    );
    if (response.status === 404) throw new EndOfQueue();
    if (!response.ok) throw new ApiError(await detailOf(response), response.status);
    return (await response.json()) as CandidateSet;
  }

  async fetchCandidates(candidateSetId: string): Promise<CandidateSet> {
    const response = await fetch(
      `${this.baseUrl}/api/candidates/${encodeURIComponent(candidateSetId)}`,
    );
    if (!response.ok) throw new ApiError(await detailOf(response), response.status);
    return (await response.json()) as CandidateSet;
  }

  async submitAnnotation(
    candidateSetId: string,
    decision: Decision,
    annotator: string,
  ): Promise<void> {
    const response = await fetch(`${this.baseUrl}/api/annotations`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({
        candidate_set_id: candidateSetId,
        decision,
        annotator,
      }),
    });
    if (response.status === 201) return;
    throw new ApiError(await detailOf(response), response.status);
  }

  async fetchProgress(): Promise<Progress> {
    const response = await fetch(`${this.baseUrl}/api/progress`);
    if (!response.ok) throw new ApiError(await detailOf(response), response.status);
    return (await response.json()) as Progress;
  }
}
