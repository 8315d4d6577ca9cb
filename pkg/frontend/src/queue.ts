/**
 * Review queue state machine.
 *
 * The server is the source of truth: the queue only caches pending pairs in
 * server order (mean score descending), every decision is posted immediately
 * and confirmed by re-fetching the candidate, and progress always comes from
 * GET /progress. Skipped candidates go to the queue tail; nothing is ever
 * decided client-side only.
 */
import { ReviewApi } from './api.js';
import type { Candidate, Progress } from './types.js';

export interface QueueState {
  current: Candidate | null;
  position: number;
  remaining: number;
  progress: Progress;
  offline: boolean;
  lastError: string | null;
}

export class ReviewQueue {
  private pending: Candidate[] = [];
  private progressInfo: Progress = { total: 0, decided: 0, complete: false };
  private offline = false;
  private lastError: string | null = null;

  constructor(
    private readonly api: ReviewApi,
    private readonly operator: string = 'reviewer',
  ) {}

  /** Load pending candidates and progress from the server. */
  async load(): Promise<QueueState> {
    try {
      this.pending = await this.api.pendingCandidates();
      this.progressInfo = await this.api.progress();
      this.offline = false;
      this.lastError = null;
    } catch (err) {
      this.offline = true;
      this.lastError = String(err);
    }
    return this.state();
  }

  state(): QueueState {
    return {
      current: this.pending[0] ?? null,
      position: this.progressInfo.decided + 1,
      remaining: this.pending.length,
      progress: this.progressInfo,
      offline: this.offline,
      lastError: this.lastError,
    };
  }

  /** Move the current candidate to the queue tail. */
  skip(): QueueState {
    const current = this.pending.shift();
    if (current !== undefined) {
      this.pending.push(current);
    }
    return this.state();
  }

  /**
   * Post a decision for the current candidate, confirm it round-tripped,
   * then advance. On any failure the queue is left untouched so no decision
   * can be silently lost.
   */
  async decide(decision: 'same_person' | 'different_person'): Promise<QueueState> {
    const current = this.pending[0];
    if (current === undefined) {
      return this.state();
    }
    try {
      await this.api.postDecision(
        current.subject_a,
        current.subject_b,
        decision,
        this.operator,
      );
      const stored = await this.api.candidate(current.subject_a, current.subject_b);
      if (stored.decision !== decision) {
        throw new Error(
          `server did not persist decision for ` +
            `(${current.subject_a}, ${current.subject_b}): got ${stored.decision}`,
        );
      }
      this.pending.shift();
      this.progressInfo = await this.api.progress();
      this.offline = false;
      this.lastError = null;
    } catch (err) {
      this.offline = true;
      this.lastError = String(err);
    }
    return this.state();
  }
}
