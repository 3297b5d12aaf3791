/** Typed client for the autocomplete service HTTP API. */

export interface Suggestion {
  sentence: string;
  score: number;
}

export interface CompletionResponse {
  suggestions: Suggestion[];
  model_fingerprint: string;
  latency_ms: number;
}

export type TaskKind = "autocomplete" | "writing";

export interface SessionRecord {
  session_id: string;
  task_kind: TaskKind;
  target: string;
  user_input: string;
  suggestions_shown: string[];
  /** Only present for autocomplete tasks; one mark per shown suggestion. */
  equivalence_marks?: boolean[];
  elapsed_seconds: number;
  timestamp: number;
}

export interface HealthResponse {
  model_fingerprint: string;
  uptime_seconds: number;
}

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number | null,
    public readonly retryable: boolean,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown>; text(): Promise<string> }>;

/**
 * Thin wrapper over fetch. Network failures and 5xx responses surface as
 * retryable ApiErrors so the task screen can offer a retry without losing
 * the user's input; 4xx responses are non-retryable contract violations.
 */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  async complete(keywords: string, k = 3): Promise<CompletionResponse> {
    const body = JSON.stringify({ keywords, k });
    const resp = await this.post("/complete", body);
    return resp as CompletionResponse;
  }

  async logSession(record: SessionRecord): Promise<void> {
    await this.post("/sessions", JSON.stringify(record));
  }

  async health(): Promise<HealthResponse> {
    return (await this.request("/health", {})) as HealthResponse;
  }

  private post(path: string, body: string): Promise<unknown> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body,
    });
  }

  private async request(
    path: string,
    init: { method?: string; headers?: Record<string, string>; body?: string },
  ): Promise<unknown> {
    let resp;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`, null, true);
    }
    if (!resp.ok) {
      const detail = await resp.text().catch(() => "");
      throw new ApiError(
        `${init.method ?? "GET"} ${path} failed with ${resp.status}: ${detail}`,
        resp.status,
        resp.status >= 500,
      );
    }
    return resp.json();
  }
}
