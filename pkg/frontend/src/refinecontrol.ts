/** Split/merge trigger and result modeling.
 *
 * POST /refine outcomes map onto three view models: a round result with a
 * before/after cluster tree, a degenerate-split dialog (the service's 422
 * options verbatim), or a "labels incomplete" notice with per-cluster
 * gaps (409). */

import { ApiClient, ApiError, DegenerateSplitError } from './api.js';
import { labelGaps } from './state.js';
import type {
  ConsistencyDoc,
  DegenerateOption,
  DegenerateSplitBody,
  RefineResult,
  SessionDoc,
} from './types.js';

export interface TreeNode {
  cluster: number;
  size: number | null;
  children: TreeNode[];
  theme?: string;
  note?: string;
}

export type RefineOutcome =
  | { kind: 'result'; result: RefineResult; tree: TreeNode[]; converged: boolean }
  | { kind: 'degenerate'; payload: DegenerateSplitBody }
  | { kind: 'incomplete'; gaps: Record<string, number>; detail: unknown };

/** Before/after tree: one root per pre-round cluster, split children and
 * merge targets attached underneath. */
export function buildClusterTree(
  before: Record<string, number>,
  result: RefineResult,
): TreeNode[] {
  const afterSizes = result.clusters;
  const roots: TreeNode[] = [];
  for (const action of result.actions) {
    if (action.kind === 'split' && action.cluster !== undefined) {
      roots.push({
        cluster: action.cluster,
        size: before[String(action.cluster)] ?? null,
        note: action.note,
        children: (action.children ?? []).map((child) => ({
          cluster: child,
          size: afterSizes[String(child)] ?? null,
          children: [],
        })),
      });
    } else if (action.kind === 'merge') {
      for (const member of action.members ?? []) {
        roots.push({
          cluster: member,
          size: before[String(member)] ?? null,
          theme: action.theme,
          children: [
            {
              cluster: action.merged_into ?? -1,
              size: afterSizes[String(action.merged_into)] ?? null,
              theme: action.theme,
              children: [],
            },
          ],
        });
      }
    } else if (action.kind === 'keep' && action.cluster !== undefined) {
      roots.push({
        cluster: action.cluster,
        size: before[String(action.cluster)] ?? null,
        theme: action.theme,
        note: action.note,
        children: [],
      });
    }
  }
  return roots.sort((a, b) => a.cluster - b.cluster);
}

export class RefineControl {
  constructor(
    private readonly api: ApiClient,
    private readonly runId: string,
  ) {}

  async trigger(
    session: SessionDoc,
    consistency: ConsistencyDoc | null,
    beforeSizes: Record<string, number>,
    onDegenerate?: DegenerateOption,
  ): Promise<RefineOutcome> {
    try {
      const result = await this.api.runRefine(this.runId, onDegenerate);
      return {
        kind: 'result',
        result,
        tree: buildClusterTree(beforeSizes, result),
        converged: result.status === 'converged',
      };
    } catch (error) {
      if (error instanceof DegenerateSplitError) {
        return { kind: 'degenerate', payload: error.payload };
      }
      if (error instanceof ApiError && error.status === 409) {
        return {
          kind: 'incomplete',
          gaps: labelGaps(session, consistency),
          detail: error.body,
        };
      }
      throw error;
    }
  }
}
