import type {
  DecisionBody,
  InstructionRecord,
  LifecycleState,
  MetricsSnapshot,
  QualityReport,
  QueuePage,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class StaleStateError extends Error {
  constructor(public currentState: LifecycleState, detail: string) {
    super(detail);
    this.name = "StaleStateError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/**
 * Typed client for the review service. All mutations go through
 * submitDecision; there is no other write path.
 */
export class ReviewApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async listQueue(state: LifecycleState, page = 1, pageSize = 20): Promise<QueuePage> {
    const params = new URLSearchParams({
      state,
      page: String(page),
      page_size: String(pageSize),
    });
    const resp = await this.fetchImpl(this.url(`/api/queue?${params}`));
    if (!resp.ok) {
      throw new ApiError(resp.status, await resp.text());
    }
    return (await resp.json()) as QueuePage;
  }

  async submitDecision(recordId: string, body: DecisionBody): Promise<InstructionRecord> {
    const resp = await this.fetchImpl(this.url(`/api/records/${recordId}/decision`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (resp.status === 409) {
      const payload = await resp.json();
      const detail = payload.detail ?? payload;
      throw new StaleStateError(detail.current_state, detail.error ?? "stale state");
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, await resp.text());
    }
    const payload = await resp.json();
    return payload.record as InstructionRecord;
  }

  async metrics(): Promise<MetricsSnapshot> {
    const resp = await this.fetchImpl(this.url("/api/metrics"));
    if (!resp.ok) {
      throw new ApiError(resp.status, await resp.text());
    }
    return (await resp.json()) as MetricsSnapshot;
  }

  /** Latest published quality report, or null when none exists yet. */
  async latestReport(): Promise<QualityReport | null> {
    const resp = await this.fetchImpl(this.url("/api/reports/latest"));
    if (resp.status === 404) {
      return null;
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, await resp.text());
    }
    return (await resp.json()) as QualityReport;
  }
}
