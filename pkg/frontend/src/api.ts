/** Typed client for the REST service. This is the webui's only connection
 * to the backend — no file access, no shared state. All requests carry the
 * signed-in user's id; errors arrive in one envelope and are rethrown as
 * ApiError with the server's code intact.
 */

import type {
  AnnotationEventJson,
  AnnotationJson,
  CellJson,
  EditJson,
  FeedCardJson,
  FindingJson,
  FusionSummaryJson,
  CellKeyJson,
  LifecycleState,
  ScalarJson,
  ScopeJson,
} from "./model.js";

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Network-level failure (server unreachable); views show a banner and
 * degrade to read-only rather than crashing. */
export class ApiUnreachable extends Error {
  constructor(cause: unknown) {
    super(`API unreachable: ${String(cause)}`);
    this.name = "ApiUnreachable";
  }
}

export interface AnnotationFilter {
  step?: "preprocessing" | "cleansing" | "exploration";
  state?: LifecycleState;
  entity?: string;
  dimension?: string;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    readonly userId: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const headers = new Headers(init.headers);
    headers.set("X-User-Id", this.userId);
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, {
        ...init,
        headers,
      });
    } catch (cause) {
      throw new ApiUnreachable(cause);
    }
    if (!response.ok) {
      let code = "UNKNOWN";
      let message = `${response.status}`;
      try {
        const body = (await response.json()) as {
          error?: { code?: string; message?: string };
        };
        code = body.error?.code ?? code;
        message = body.error?.message ?? message;
      } catch {
        /* non-JSON error body: keep the status text */
      }
      throw new ApiError(response.status, code, message);
    }
    return response;
  }

  private async json<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  // -- reads ------------------------------------------------------------------

  async getCells(filter: { entity?: string; dimension?: string } = {}): Promise<
    CellJson[]
  > {
    const params = new URLSearchParams();
    if (filter.entity) params.set("entity", filter.entity);
    if (filter.dimension) params.set("dimension", filter.dimension);
    const query = params.size > 0 ? `?${params}` : "";
    const body = await this.json<{ cells: CellJson[] }>(`/api/cells${query}`);
    return body.cells;
  }

  async getAnnotations(filter: AnnotationFilter = {}): Promise<
    AnnotationEventJson[]
  > {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(filter)) {
      if (value !== undefined) params.set(key, value);
    }
    const query = params.size > 0 ? `?${params}` : "";
    const body = await this.json<{ annotations: AnnotationEventJson[] }>(
      `/api/annotations${query}`,
    );
    return body.annotations;
  }

  async getFeed(includeEdits = false): Promise<FeedCardJson[]> {
    const query = includeEdits ? "?include_edits=true" : "";
    const body = await this.json<{ feed: FeedCardJson[] }>(`/api/feed${query}`);
    return body.feed;
  }

  /** Raw snapshot bytes for a finding's thumbnail/enlarged view. */
  async getBlob(blobId: string): Promise<Uint8Array> {
    const response = await this.request(`/api/blobs/${blobId}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  // -- writes -----------------------------------------------------------------

  fuse(): Promise<FusionSummaryJson> {
    return this.post<FusionSummaryJson>("/api/fuse", {});
  }

  postEdit(body: {
    scope: ScopeJson;
    new_value?: ScalarJson;
    new_values?: { cell: CellKeyJson; value: ScalarJson }[];
    rationale: string;
  }): Promise<{ annotation: EditJson; state: LifecycleState }> {
    return this.post("/api/edits", body);
  }

  async postFinding(
    text: string,
    png: Uint8Array,
    visibleCells: CellKeyJson[],
  ): Promise<{ annotation: FindingJson; blob_id: string }> {
    const form = new FormData();
    form.set("file", new Blob([png.buffer as ArrayBuffer], { type: "image/png" }), "view.png");
    form.set("text", text);
    form.set("visible_cells", JSON.stringify(visibleCells));
    const response = await this.request("/api/findings", {
      method: "POST",
      body: form,
    });
    return (await response.json()) as {
      annotation: FindingJson;
      blob_id: string;
    };
  }

  postComment(
    annotationId: string,
    text: string,
  ): Promise<{ annotation: AnnotationJson }> {
    return this.post(`/api/annotations/${annotationId}/comments`, { text });
  }

  voteFinding(
    findingId: string,
    verdict: "confirm" | "reject",
  ): Promise<{ annotation: AnnotationJson; target_state: LifecycleState }> {
    return this.post(`/api/findings/${findingId}/votes`, { verdict });
  }

  voteEdit(
    editId: string,
    verdict: "confirm" | "reject",
  ): Promise<{ annotation: AnnotationJson; target_state: LifecycleState }> {
    return this.post(`/api/edits/${editId}/votes`, { verdict });
  }
}
