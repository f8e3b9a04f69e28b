import { diffTexts, type DiffSpan } from "./diff.js";
import type { Decision, QueueItem } from "./types.js";

/**
 * Client-side state of one review card. The checklist is advisory, the
 * submit gate is not: no decision selected means no submit, and refine
 * additionally requires nonempty edited text.
 */
export class ReviewViewModel {
  decision: Decision | null = null;
  editedText = "";
  note = "";
  checklist: Record<string, boolean>;
  /** Optimistic state shown while the server confirms; never fabricated. */
  pendingState: string | null = null;
  staleNotice: string | null = null;
  retryable = false;

  constructor(public item: QueueItem) {
    this.checklist = Object.fromEntries(item.checklist.map((c) => [c, false]));
  }

  get diff(): DiffSpan[] {
    if (this.item.parent_text === null) {
      return [{ kind: "same", text: this.item.record.text }];
    }
    return diffTexts(this.item.parent_text, this.item.record.text);
  }

  selectDecision(decision: Decision): void {
    this.decision = decision;
    if (decision === "refine" && !this.editedText) {
      this.editedText = this.item.record.text;
    }
  }

  toggleChecklist(criterion: string): void {
    if (criterion in this.checklist) {
      this.checklist[criterion] = !this.checklist[criterion];
    }
  }

  get canSubmit(): boolean {
    if (this.decision === null || this.pendingState !== null) {
      return false;
    }
    if (this.decision === "refine") {
      return this.editedText.trim().length > 0;
    }
    return true;
  }
}
