export interface Assignment {
  record_id: string;
  image_url: string;
  reviewer_id: string;
  issued_at: number;
  scores?: Record<string, number>;
}

export type Decision = "approve" | "reject";

export interface DecisionRecord {
  record_id: string;
  decision: Decision;
  note: string;
  status: string; // server-acknowledged review status after this verdict
  at: number;
}

export interface Progress {
  total: number;
  counts: {
    pending: number;
    approved: number;
    rejected: number;
    conflicted: number;
  };
  per_reviewer: Record<string, number>;
}

export interface AppConfig {
  apiBase: string;
  token: string;
}
