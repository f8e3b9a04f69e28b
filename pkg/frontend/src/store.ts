import { ReviewApiClient, StaleStateError } from "./api.js";
import { ReviewViewModel } from "./viewmodel.js";
import type { Decision, DecisionBody, LifecycleState, QueueItem } from "./types.js";

const DECISION_TARGET: Record<Decision, LifecycleState> = {
  keep: "ScreenedKept",
  discard: "ScreenedDiscarded",
  refine: "Refined",
  approve: "Approved",
};

export type SubmitOutcome = "applied" | "stale" | "retained";

/**
 * Queue state for one reviewer session: optimistic updates with server
 * reconciliation. A 409 (someone else decided first) reloads the queue and
 * discards the local decision with a visible notice; a network failure keeps
 * the decision locally for manual retry.
 */
export class QueueStore {
  items: ReviewViewModel[] = [];
  stateFilter: LifecycleState = "Evolved";
  page = 1;
  pageSize = 20;
  total = 0;
  /** Set when the service is unreachable; existing cards are kept. */
  retryBanner: string | null = null;
  notices: string[] = [];

  constructor(private api: ReviewApiClient, public reviewer: string) {}

  async load(state?: LifecycleState, page?: number): Promise<void> {
    if (state) this.stateFilter = state;
    if (page) this.page = page;
    try {
      const result = await this.api.listQueue(this.stateFilter, this.page, this.pageSize);
      this.items = result.items.map((item: QueueItem) => new ReviewViewModel(item));
      this.total = result.total;
      this.retryBanner = null;
    } catch (err) {
      this.retryBanner = `服务暂时不可用，请重试（${String(err)}）`;
    }
  }

  async submit(vm: ReviewViewModel): Promise<SubmitOutcome> {
    if (!vm.canSubmit || vm.decision === null) {
      throw new Error("submit blocked: no valid decision selected");
    }
    const decision = vm.decision;
    const body: DecisionBody = {
      decision,
      expected_state: vm.item.record.state,
      reviewer: this.reviewer,
      note: vm.note || undefined,
      text: decision === "refine" ? vm.editedText : undefined,
    };
    vm.pendingState = DECISION_TARGET[decision];
    vm.staleNotice = null;
    try {
      await this.api.submitDecision(vm.item.record.id, body);
      // confirmed: the card leaves this queue
      this.items = this.items.filter((other) => other !== vm);
      this.total = Math.max(0, this.total - 1);
      return "applied";
    } catch (err) {
      vm.pendingState = null;
      if (err instanceof StaleStateError) {
        vm.staleNotice = `该记录已被其他评审处理（当前状态：${err.currentState}），您的决定未生效。`;
        this.notices.push(vm.staleNotice);
        vm.decision = null;
        await this.load(); // reconcile with server state
        return "stale";
      }
      vm.retryable = true; // network failure: decision kept for manual retry
      return "retained";
    }
  }
}
