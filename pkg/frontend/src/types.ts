// Shapes mirror the review service's JSON API exactly.

export type PerturbationKind = 'TB' | 'RD' | 'RS' | 'CS' | 'CI' | 'RB' | 'DB';

export const ALL_KINDS: PerturbationKind[] = ['TB', 'RD', 'RS', 'CS', 'CI', 'RB', 'DB'];

export interface RankedCandidate {
  original_id: string;
  kind: PerturbationKind;
  text: string;
  seed: number;
  similarity: number | null;
}

export interface CandidateSet {
  id: string;
  kind: PerturbationKind;
  original: {
    id: string;
    nl: string;
    gold_sql: string;
    split: string;
  };
  ranked: RankedCandidate[];
}

export type Decision = number | 'reject';

export interface KindProgress {
  total: number;
  annotated: number;
  rejected: number;
}

export type Progress = Record<string, KindProgress>;
