/** Wire types mirrored from the review service API. */

export type LifecycleState =
  | "Seed"
  | "Evolved"
  | "ScreenedKept"
  | "ScreenedDiscarded"
  | "Refined"
  | "Approved";

export const LIFECYCLE_STATES: LifecycleState[] = [
  "Seed",
  "Evolved",
  "ScreenedKept",
  "ScreenedDiscarded",
  "Refined",
  "Approved",
];

export type Decision = "keep" | "discard" | "refine" | "approve";

export interface InstructionRecord {
  id: string;
  text: string;
  task_type: string;
  scene: string;
  state: LifecycleState;
  parent_id: string | null;
  operator: string | null;
  reviewer_note: string | null;
}

export interface QueueItem {
  record: InstructionRecord;
  parent_text: string | null;
  checklist: string[];
  enqueue_time: number;
}

export interface QueuePage {
  items: QueueItem[];
  page: number;
  page_size: number;
  total: number;
}

export interface DecisionBody {
  decision: Decision;
  expected_state: LifecycleState;
  text?: string;
  note?: string;
  reviewer: string;
}

export interface QualityReport {
  dataset_version: string;
  n: number;
  prompt_complexity: number;
  input_complexity: number;
  richness: number;
  redundancy: number;
  label_quality: Record<string, number>;
}

export interface MetricsSnapshot {
  state_counts: Record<string, number>;
  total: number;
  latest_report: {
    dataset_version: string | null;
    richness: number | null;
    redundancy: number | null;
    label_quality: Record<string, number> | null;
  } | null;
}
