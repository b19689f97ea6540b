import type {
  AttachedImage,
  HealthInfo,
  KbEntry,
  QueryResponse,
  TraceRecord,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the documented endpoints; fetch is injectable for tests. */
export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      const message =
        typeof body === "object" && body !== null && "error" in body
          ? String((body as { error: unknown }).error)
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, message);
    }
    return body as T;
  }

  postQuery(text: string, image?: AttachedImage): Promise<QueryResponse> {
    const payload: Record<string, unknown> = { text };
    if (image) {
      payload.image_base64 = image.base64;
      payload.image_width = image.width;
      payload.image_height = image.height;
    }
    return this.request<QueryResponse>("/api/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  getTrace(traceId: string): Promise<TraceRecord> {
    return this.request<TraceRecord>(`/api/trace/${encodeURIComponent(traceId)}`);
  }

  getKbEntry(entryId: number): Promise<KbEntry> {
    return this.request<KbEntry>(`/api/kb/${entryId}`);
  }

  health(): Promise<HealthInfo> {
    return this.request<HealthInfo>("/api/health");
  }
}
