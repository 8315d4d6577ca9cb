/**
 * Thin typed client for the review service. The transport is injectable so
 * tests can run against an in-memory fake server.
 */
import type { Candidate, CandidateDetail, CandidatePage, Progress } from './types.js';

export type Transport = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ReviewApi {
  constructor(private readonly transport: Transport = (url, init) => fetch(url, init)) {}

  private async request<T>(url: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.transport(url, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      throw new ApiError(`${url} -> HTTP ${response.status}`, response.status);
    }
    return (await response.json()) as T;
  }

  progress(): Promise<Progress> {
    return this.request<Progress>('/progress');
  }

  async pendingCandidates(): Promise<Candidate[]> {
    const pageSize = 200;
    const items: Candidate[] = [];
    for (let offset = 0; ; offset += pageSize) {
      const page = await this.request<CandidatePage>(
        `/candidates?status=pending&offset=${offset}&limit=${pageSize}`,
      );
      items.push(...page.items);
      if (offset + pageSize >= page.total || page.items.length === 0) {
        break;
      }
    }
    return items;
  }

  candidate(a: string, b: string): Promise<CandidateDetail> {
    return this.request<CandidateDetail>(
      `/candidates/${encodeURIComponent(a)}/${encodeURIComponent(b)}`,
    );
  }

  postDecision(
    a: string,
    b: string,
    decision: 'same_person' | 'different_person',
    decidedBy: string,
  ): Promise<Candidate> {
    return this.request<Candidate>(
      `/candidates/${encodeURIComponent(a)}/${encodeURIComponent(b)}/decision`,
      {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify({ decision, decided_by: decidedBy }),
      },
    );
  }
}
