/** Wire types for the review API. */

export type Decision = 'pending' | 'same_person' | 'different_person';

export interface Candidate {
  subject_a: string;
  subject_b: string;
  mean_score: number;
  decision: Decision;
  decided_by: string | null;
  decided_at: string | null;
}

export interface CandidateImage {
  image_id: string;
  url: string;
  source_path: string;
}

export interface CandidateDetail extends Candidate {
  images: Record<string, CandidateImage[]>;
}

export interface CandidatePage {
  total: number;
  offset: number;
  limit: number;
  items: Candidate[];
}

export interface Progress {
  total: number;
  decided: number;
  complete: boolean;
}
