/** Wire types mirrored from the annotation service's JSON responses. */

export interface RunDoc {
  run_id: string;
  status: 'labeling' | 'converged' | 'max_rounds';
  round: number;
  session_open: boolean;
  clusters: Record<string, number>;
  themes: Record<string, string> | null;
  rounds_completed: number;
  average_consistency: number | null;
}

export interface SessionDoc {
  session_id: string;
  run_id: string;
  round: number;
  samples: Record<string, string[]>;
  status: 'labeling' | 'awaiting-adjudication' | 'ready';
  suggested_themes: string[];
  n_sampled: number;
  n_adjudicated: number;
}

export interface ConsistencyReport {
  cluster_index: number;
  sample_n: number;
  prevalences: Record<string, number>;
  dominant_theme: string;
  consistent: boolean;
  significant_themes: string[];
}

export interface ConsistencyDoc {
  reports: ConsistencyReport[];
  kappa: number | null;
  n_double_labeled: number;
  ready: boolean;
}

export interface PendingAdjudication {
  image_id: string;
  labels: Record<string, string>;
}

export interface AdjudicationsDoc {
  pending: PendingAdjudication[];
}

export interface RefineAction {
  kind: 'split' | 'merge' | 'keep';
  cluster?: number;
  children?: number[];
  theme?: string;
  members?: number[];
  merged_into?: number;
  note?: string;
}

export interface RefineResult {
  round: number;
  status: 'labeling' | 'converged' | 'max_rounds';
  average_consistency: number;
  actions: RefineAction[];
  clusters: Record<string, number>;
  themes: Record<string, string> | null;
}

export type DegenerateOption = 'force_split_2' | 'enlarge_sample' | 'accept';

export interface DegenerateSplitBody {
  code: 'degenerate_split';
  cluster: number;
  significant_themes: string[];
  options: DegenerateOption[];
}

export interface LabelSubmission {
  coder_id: string;
  image_id: string;
  theme: string;
}
