/** Typed client for the labeling service HTTP API.
 *
 * Every call goes through one fetch wrapper that injects the session token
 * and normalizes failures into ApiError, so callers can branch on status
 * codes (401 -> login, 409 -> run finished / stale item) without touching
 * response plumbing.
 */

export interface QueryItem {
  dataset_id: string;
  position: number;
  total: number;
  labeled: number;
  n_slices: number;
  height: number;
  width: number;
  image_uris: string[];
}

export type QueryResponse =
  | { status: "item"; item: QueryItem }
  | { status: "waiting"; reason: string };

export interface LabelResult {
  ok: boolean;
  progress: { labeled: number; total: number };
  query_complete: boolean;
}

export interface HistoryEntry {
  dataset_id: string;
  class: number;
  submitted_at: number;
  n_slices: number;
}

export interface HistoryResponse {
  items: HistoryEntry[];
  count: number;
}

export interface StatusResponse {
  run_state: string;
  n_labeled: number;
  n_unlabeled: number;
  curve_point: [number, number, number] | null;
  query: { labeled: number; total: number } | null;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

/** Network-level failure (server unreachable), as opposed to an HTTP error. */
export class NetworkError extends Error {}

export class ApiClient {
  constructor(
    private base: string,
    private token: string,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.base + path, {
        method,
        headers: {
          Authorization: `Bearer ${this.token}`,
          ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
        },
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const payload = (await response.json()) as { detail?: unknown };
        if (payload.detail !== undefined) detail = JSON.stringify(payload.detail);
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getQuery(): Promise<QueryResponse> {
    return this.request("GET", "/api/query");
  }

  postLabel(datasetId: string, cls: number): Promise<LabelResult> {
    return this.request("POST", "/api/label", {
      dataset_id: datasetId,
      class: cls,
    });
  }

  getHistory(): Promise<HistoryResponse> {
    return this.request("GET", "/api/history");
  }

  getInstructions(): Promise<{ instructions: string }> {
    return this.request("GET", "/api/instructions");
  }

  getStatus(): Promise<StatusResponse> {
    return this.request("GET", "/api/status");
  }

  /** Absolute URI for one slice image (PNG, already windowed server-side). */
  imageUri(datasetId: string, slice: number): string {
    return `${this.base}/api/image/${datasetId}/${slice}`;
  }
}
