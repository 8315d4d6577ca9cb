import { describe, expect, it } from 'vitest';

import { ApiError, ReviewApi } from '../src/api.js';
import { FakeServer, makeCandidates } from './fake_server.js';

describe('review api client', () => {
  it('pages through large pending lists', async () => {
    const server = new FakeServer(makeCandidates(250));
    const api = new ReviewApi(server.transport);
    const items = await api.pendingCandidates();
    expect(items).toHaveLength(250);
    const scores = items.map((c) => c.mean_score);
    expect(scores).toEqual([...scores].sort((a, b) => b - a));
  });

  it('wraps transport failures in ApiError', async () => {
    const server = new FakeServer(makeCandidates(1));
    server.down = true;
    const api = new ReviewApi(server.transport);
    await expect(api.progress()).rejects.toBeInstanceOf(ApiError);
  });

  it('surfaces HTTP status codes', async () => {
    const server = new FakeServer(makeCandidates(1));
    const api = new ReviewApi(server.transport);
    await expect(api.candidate('nope', 'nah')).rejects.toMatchObject({ status: 404 });
  });

  it('posts decisions and returns the stored candidate', async () => {
    const server = new FakeServer(makeCandidates(2));
    const api = new ReviewApi(server.transport);
    const [first] = await api.pendingCandidates();
    const stored = await api.postDecision(
      first.subject_a,
      first.subject_b,
      'same_person',
      'op',
    );
    expect(stored.decision).toBe('same_person');
    expect(stored.decided_by).toBe('op');
    const detail = await api.candidate(first.subject_a, first.subject_b);
    expect(detail.decision).toBe('same_person');
    expect(Object.keys(detail.images)).toEqual([first.subject_a, first.subject_b]);
  });
});
