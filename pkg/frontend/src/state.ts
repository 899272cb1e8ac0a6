/** View state shared by all panels.
 *
 * Invariant: the consistency panel always holds the most recent
 * GET /consistency response verbatim. The client never recomputes
 * prevalences, verdicts, or kappa; the service is the single source of
 * truth for statistics. */

import type {
  AdjudicationsDoc,
  ConsistencyDoc,
  PendingAdjudication,
  SessionDoc,
} from './types.js';

export interface ViewState {
  session: SessionDoc | null;
  activeCluster: string | null;
  /** image -> theme acks per coder, mirrors server-acknowledged labels */
  labeled: Record<string, Record<string, string>>;
  consistency: ConsistencyDoc | null;
  pendingAdjudications: PendingAdjudication[];
  notice: string | null;
}

export function initialState(): ViewState {
  return {
    session: null,
    activeCluster: null,
    labeled: {},
    consistency: null,
    pendingAdjudications: [],
    notice: null,
  };
}

export function applySession(state: ViewState, session: SessionDoc): ViewState {
  const clusters = Object.keys(session.samples).sort();
  return {
    ...state,
    session,
    activeCluster:
      state.activeCluster && clusters.includes(state.activeCluster)
        ? state.activeCluster
        : (clusters[0] ?? null),
  };
}

/** Store the panel data exactly as served; no client-side statistics. */
export function applyConsistency(state: ViewState, doc: ConsistencyDoc): ViewState {
  return { ...state, consistency: doc };
}

export function applyAdjudications(state: ViewState, doc: AdjudicationsDoc): ViewState {
  return { ...state, pendingAdjudications: doc.pending };
}

export function recordAck(
  state: ViewState,
  coderId: string,
  imageId: string,
  theme: string,
): ViewState {
  const mine = { ...(state.labeled[coderId] ?? {}), [imageId]: theme };
  return { ...state, labeled: { ...state.labeled, [coderId]: mine } };
}

export function progressFor(state: ViewState, coderId: string): { done: number; total: number } {
  const total = state.session?.n_sampled ?? 0;
  return { done: Object.keys(state.labeled[coderId] ?? {}).length, total };
}

/** Per-cluster counts of sampled images still lacking adjudicated labels;
 * used to render a 409 "labels incomplete" response. */
export function labelGaps(
  session: SessionDoc,
  consistency: ConsistencyDoc | null,
): Record<string, number> {
  const adjudicatedPerCluster: Record<string, number> = {};
  for (const report of consistency?.reports ?? []) {
    adjudicatedPerCluster[String(report.cluster_index)] = report.sample_n;
  }
  const gaps: Record<string, number> = {};
  for (const [cluster, ids] of Object.entries(session.samples)) {
    const have = adjudicatedPerCluster[cluster] ?? 0;
    const missing = ids.length - have;
    if (missing > 0) {
      gaps[cluster] = missing;
    }
  }
  return gaps;
}
