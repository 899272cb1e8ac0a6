/** Replays the full recorded coder workflow through the typed client: the
 * stub enforces that every request matches the recording byte for byte,
 * and the assertions check the parsed responses. */

import { describe, expect, it } from 'vitest';

import { ApiClient, DegenerateSplitError } from '../src/api.js';
import type { SessionDoc } from '../src/types.js';
import { loadRecording, ReplayFetch } from './stub.js';

function labelPairsFromRecording(session: SessionDoc) {
  // the recorded scenario labels clusters in sorted order, alice then bob
  const clusters = Object.keys(session.samples).sort();
  return clusters.flatMap((cluster) =>
    (session.samples[cluster] ?? []).map((imageId) => ({ cluster, imageId })),
  );
}

describe('recorded service replay', () => {
  it('drives the whole happy path plus the degenerate split', async () => {
    const recording = loadRecording();
    const replay = new ReplayFetch(recording);
    const api = new ApiClient('', recording.token, replay.fetch);

    // --- run info and session creation --------------------------------
    const run = await api.runInfo('rec');
    expect(run.status).toBe('labeling');
    expect(run.session_open).toBe(false);

    const session = await api.createSession('rec');
    expect(session.session_id).toBe('rec-r0');
    expect(Object.keys(session.samples).sort()).toEqual(['0', '1']);
    expect(session.n_sampled).toBe(24);
    expect(session.suggested_themes).toContain('Posters');

    // --- both coders label everything (one scripted disagreement) -----
    const disputed = session.samples['0']![2]!;
    for (const { cluster, imageId } of labelPairsFromRecording(session)) {
      const theme = cluster === '0' ? 'Food' : 'Posters';
      await api.submitLabel(session.session_id, {
        coder_id: 'alice',
        image_id: imageId,
        theme,
      });
      await api.submitLabel(session.session_id, {
        coder_id: 'bob',
        image_id: imageId,
        theme: imageId === disputed ? 'People' : theme,
      });
    }

    // --- the disagreement routes to adjudication -----------------------
    const adjudications = await api.getAdjudications(session.session_id);
    expect(adjudications.pending.map((p) => p.image_id)).toEqual([disputed]);
    expect(adjudications.pending[0]!.labels).toEqual({
      alice: 'Food',
      bob: 'People',
    });

    const before = await api.getConsistency(session.session_id);
    expect(before.ready).toBe(false);
    expect(before.n_double_labeled).toBe(24);

    await api.adjudicate(session.session_id, disputed, 'Food');

    const after = await api.getConsistency(session.session_id);
    expect(after.ready).toBe(true);
    expect(after.reports).toHaveLength(2);
    for (const report of after.reports) {
      expect(report.consistent).toBe(true);
      const total = Object.values(report.prevalences).reduce((a, b) => a + b, 0);
      expect(total).toBeCloseTo(1.0, 12);
    }
    expect(after.kappa).not.toBeNull();

    // --- refine: converged, actions rendered-ready ---------------------
    const result = await api.runRefine('rec');
    expect(result.status).toBe('converged');
    expect(result.actions.every((a) => a.kind === 'keep' || a.kind === 'merge')).toBe(true);
    expect(result.themes).toEqual({ '0': 'Food', '1': 'Posters' });

    const finalRun = await api.runInfo('rec');
    expect(finalRun.status).toBe('converged');
    expect(finalRun.average_consistency).toBe(1.0);

    // --- degenerate run: 422 with three options, then forced split -----
    const degenSession = await api.createSession('degen');
    for (const cluster of Object.keys(degenSession.samples).sort()) {
      const ids = degenSession.samples[cluster]!;
      for (const [pos, imageId] of ids.entries()) {
        const theme =
          cluster === '0'
            ? pos < 11
              ? 'A'
              : ['B', 'C', 'D'][pos % 3]!
            : 'Posters';
        for (const coder of ['alice', 'bob'] as const) {
          await api.submitLabel(degenSession.session_id, {
            coder_id: coder,
            image_id: imageId,
            theme,
          });
        }
      }
    }
    let degenerate: DegenerateSplitError | null = null;
    try {
      await api.runRefine('degen');
    } catch (error) {
      if (error instanceof DegenerateSplitError) {
        degenerate = error;
      } else {
        throw error;
      }
    }
    expect(degenerate).not.toBeNull();
    expect(degenerate!.payload.options).toEqual([
      'force_split_2',
      'enlarge_sample',
      'accept',
    ]);
    expect(degenerate!.payload.cluster).toBe(0);

    const forced = await api.runRefine('degen', 'force_split_2');
    const splits = forced.actions.filter((a) => a.kind === 'split');
    expect(splits).toHaveLength(1);
    expect(splits[0]!.children).toHaveLength(2);
    expect(splits[0]!.note).toBe('forced_k2');

    replay.assertDrained();
  });
});
