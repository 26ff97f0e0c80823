/** In-memory stand-in for the REST service, implementing the documented
 * contract for the routes the client uses: multipart finding upload with
 * content-addressed blob storage, comments, expert-only votes with
 * latest-verdict states, the feed, and the error envelope. Tests drive the
 * real ApiClient against this fetch implementation.
 */

import type {
  AnnotationEventJson,
  CellJson,
  CellKeyJson,
  CommentJson,
  EditJson,
  FeedCardJson,
  FindingJson,
  LifecycleState,
  ScalarJson,
  ScopeJson,
  VoteJson,
} from "../src/model.js";
import type { FetchLike } from "../src/api.js";

interface StoredUser {
  user_id: string;
  display_name: string;
  qualification: "analyst" | "expert";
}

function errorResponse(status: number, code: string, message: string): Response {
  return new Response(JSON.stringify({ error: { code, message } }), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function ok(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

let fakeDigestCounter = 0;
function fakeDigest(): string {
  fakeDigestCounter += 1;
  return fakeDigestCounter.toString(16).padStart(64, "0");
}

export class MockService {
  cells: CellJson[] = [];
  annotations: AnnotationEventJson[] = [];
  blobs = new Map<string, Uint8Array>();
  users = new Map<string, StoredUser>([
    ["ana", { user_id: "ana", display_name: "Ana Lyst", qualification: "analyst" }],
    ["eve", { user_id: "eve", display_name: "Eve Expert", qualification: "expert" }],
  ]);
  private nextSeq = 1;
  /** Requests seen, for asserting what the client actually sent. */
  requests: { method: string; path: string }[] = [];

  private append(
    annotation: EditJson | FindingJson | CommentJson | VoteJson,
  ): void {
    this.annotations.push({
      seq: this.nextSeq,
      wall_time: `2024-03-01T00:00:${String(this.nextSeq).padStart(2, "0")}Z`,
      annotation,
    });
    this.nextSeq += 1;
  }

  private stateOf(targetId: string): LifecycleState {
    let state: LifecycleState = "unvalidated";
    for (const event of this.annotations) {
      const a = event.annotation;
      if (a.variant === "vote" && a.target === targetId) {
        state = a.verdict === "confirm" ? "valid" : "invalid";
      }
    }
    return state;
  }

  private expandScope(scope: ScopeJson): CellJson[] {
    if (scope.kind === "single_cell") {
      return this.cells.filter(
        (c) =>
          c.cell.entity === scope.cell.entity &&
          c.cell.dimension === scope.cell.dimension &&
          c.cell.observed_at === scope.cell.observed_at,
      );
    }
    if (scope.kind === "dimension_range") {
      return this.cells.filter(
        (c) =>
          c.cell.entity === scope.entity &&
          c.cell.dimension === scope.dimension &&
          c.cell.observed_at >= scope.start &&
          c.cell.observed_at <= scope.end,
      );
    }
    return this.cells.filter((c) => c.cell.entity === scope.entity);
  }

  private buildFeed(): FeedCardJson[] {
    const cards: FeedCardJson[] = [];
    for (const event of this.annotations) {
      const a = event.annotation;
      if (a.variant !== "finding") continue;
      const comments = this.annotations
        .map((e) => e.annotation)
        .filter(
          (c): c is CommentJson => c.variant === "comment" && c.target === a.id,
        );
      const votes = this.annotations
        .map((e) => e.annotation)
        .filter(
          (v): v is VoteJson => v.variant === "vote" && v.target === a.id,
        );
      const author = this.users.get(a.author);
      cards.push({
        annotation_id: a.id,
        author: {
          user_id: a.author,
          display_name: author?.display_name ?? a.author,
          qualification: author?.qualification ?? null,
        },
        thumbnail_ref: a.snapshot_ref,
        body: a.text,
        state: this.stateOf(a.id),
        comments,
        tally: {
          confirms: votes.filter((v) => v.verdict === "confirm").length,
          rejects: votes.filter((v) => v.verdict === "reject").length,
        },
        created_at: a.created_at,
      });
    }
    cards.reverse(); // newest first
    return cards;
  }

  fetch: FetchLike = async (url, init = {}) => {
    const parsed = new URL(url, "http://service");
    const path = parsed.pathname;
    const method = (init.method ?? "GET").toUpperCase();
    this.requests.push({ method, path });

    const headers = new Headers(init.headers);
    const userId = headers.get("X-User-Id");
    const user = userId ? this.users.get(userId) : undefined;
    if (!user) {
      return errorResponse(401, "UNKNOWN_USER", `unknown user id ${userId}`);
    }

    if (method === "GET" && path === "/api/cells") {
      const entity = parsed.searchParams.get("entity");
      const cells = this.cells.filter(
        (c) => entity === null || c.cell.entity === entity,
      );
      return ok({ cells });
    }

    if (method === "GET" && path === "/api/annotations") {
      const stateParam = parsed.searchParams.get("state");
      const events = this.annotations.map((event) => ({
        ...event,
        state:
          event.annotation.variant === "finding" ||
          event.annotation.variant === "edit"
            ? this.stateOf(event.annotation.id)
            : undefined,
      }));
      return ok({
        annotations:
          stateParam === null
            ? events
            : events.filter((e) => e.state === stateParam),
      });
    }

    if (method === "GET" && path === "/api/feed") {
      return ok({ feed: this.buildFeed() });
    }

    const blobMatch = path.match(/^\/api\/blobs\/([0-9a-f]{64})$/);
    if (method === "GET" && blobMatch) {
      const payload = this.blobs.get(blobMatch[1] as string);
      if (!payload) {
        return errorResponse(404, "UNKNOWN_TARGET", "no such blob");
      }
      return new Response(payload.buffer as ArrayBuffer, {
        status: 200,
        headers: { "Content-Type": "image/png" },
      });
    }

    if (method === "POST" && path === "/api/edits") {
      const body = JSON.parse(String(init.body)) as {
        scope?: ScopeJson;
        new_value?: ScalarJson;
        rationale?: string;
      };
      if (!body.scope || !body.new_value) {
        return errorResponse(400, "VALIDATION", "edit needs scope and value");
      }
      if (!body.rationale || body.rationale.trim() === "") {
        return errorResponse(
          400,
          "INVALID_ANNOTATION",
          "manual edits need a rationale",
        );
      }
      const affected = this.expandScope(body.scope);
      if (affected.length === 0) {
        return errorResponse(400, "EMPTY_SCOPE", "scope matches no cells");
      }
      const edit: EditJson = {
        variant: "edit",
        id: `a${this.nextSeq}`,
        scope: body.scope,
        changes: affected.map((cell) => ({
          cell: cell.cell,
          old: cell.current,
          new: body.new_value as ScalarJson,
        })),
        author: user.user_id,
        rationale: body.rationale,
        rule_set: null,
        created_at: "2024-03-01T00:30:00Z",
      };
      this.append(edit);
      for (const cell of affected) {
        cell.current = body.new_value as ScalarJson;
        cell.edited = true;
      }
      return ok({ annotation: edit, state: this.stateOf(edit.id) }, 201);
    }

    if (method === "POST" && path === "/api/findings") {
      const form = init.body as FormData;
      const file = form.get("file") as Blob | null;
      const text = String(form.get("text") ?? "");
      const visibleCells = JSON.parse(
        String(form.get("visible_cells") ?? "[]"),
      ) as CellKeyJson[];
      if (!file) {
        return errorResponse(400, "VALIDATION", "finding needs a file part");
      }
      if (text === "") {
        return errorResponse(400, "INVALID_ANNOTATION", "finding text empty");
      }
      if (visibleCells.length === 0) {
        return errorResponse(
          400,
          "INVALID_ANNOTATION",
          "finding must reference the visible cells",
        );
      }
      const payload = new Uint8Array(await file.arrayBuffer());
      const blobId = fakeDigest();
      this.blobs.set(blobId, payload);
      const finding: FindingJson = {
        variant: "finding",
        id: `a${this.nextSeq}`,
        text,
        snapshot_ref: blobId,
        data_refs: visibleCells.map((cell, i) => ({
          cell,
          fingerprint: i.toString(16).padStart(16, "0"),
        })),
        author: user.user_id,
        created_at: `2024-03-01T01:00:0${this.nextSeq % 10}Z`,
      };
      this.append(finding);
      return ok({ annotation: finding, blob_id: blobId }, 201);
    }

    const commentMatch = path.match(/^\/api\/annotations\/(\w+)\/comments$/);
    if (method === "POST" && commentMatch) {
      const targetId = commentMatch[1] as string;
      const exists = this.annotations.some(
        (e) => e.annotation.id === targetId,
      );
      if (!exists) {
        return errorResponse(404, "UNKNOWN_TARGET", `no annotation ${targetId}`);
      }
      const body = JSON.parse(String(init.body)) as { text?: string };
      const comment: CommentJson = {
        variant: "comment",
        id: `a${this.nextSeq}`,
        target: targetId,
        text: body.text ?? "",
        author: user.user_id,
        created_at: "2024-03-01T02:00:00Z",
      };
      this.append(comment);
      return ok({ annotation: comment }, 201);
    }

    const voteMatch = path.match(/^\/api\/findings\/(\w+)\/votes$/);
    if (method === "POST" && voteMatch) {
      const targetId = voteMatch[1] as string;
      if (user.qualification !== "expert") {
        return errorResponse(
          403,
          "INSUFFICIENT_QUALIFICATION",
          "only experts may vote",
        );
      }
      const target = this.annotations.find(
        (e) => e.annotation.id === targetId,
      );
      if (!target || target.annotation.variant !== "finding") {
        return errorResponse(404, "UNKNOWN_TARGET", `no finding ${targetId}`);
      }
      const body = JSON.parse(String(init.body)) as {
        verdict: "confirm" | "reject";
      };
      const vote: VoteJson = {
        variant: "vote",
        id: `a${this.nextSeq}`,
        target: targetId,
        verdict: body.verdict,
        author: user.user_id,
        created_at: "2024-03-01T03:00:00Z",
      };
      this.append(vote);
      return ok(
        { annotation: vote, target_state: this.stateOf(targetId) },
        201,
      );
    }

    return errorResponse(404, "UNKNOWN_TARGET", `no route ${method} ${path}`);
  };
}

// -- fixtures -----------------------------------------------------------------

export function cellKey(
  entity: string,
  dimension: string,
  hour: number,
): CellKeyJson {
  return {
    entity,
    dimension,
    observed_at: `2024-03-01T${String(hour).padStart(2, "0")}:00:00Z`,
  };
}

export function numericCell(
  key: CellKeyJson,
  status: CellJson["status"],
  value: number | null,
  sources: { source: string; value: number; reliability?: string }[],
): CellJson {
  return {
    cell: key,
    status,
    fused: value === null ? null : { kind: "numeric", value },
    current: value === null ? null : { kind: "numeric", value },
    edited: false,
    sources: sources.map((s) => ({
      source: s.source,
      value: { kind: "numeric", value: s.value },
      recorded_at: "2024-03-01T00:00:00Z",
      reliability: s.reliability ?? "primary",
    })),
  };
}

/** The canonical 3-case fixture: one discrepant, one single-source, one
 * consistently redundant cell. */
export function threeCaseCells(): CellJson[] {
  return [
    numericCell(cellKey("P1", "visual_acuity", 0), "discrepant", 0.5, [
      { source: "device_export", value: 0.5 },
      { source: "doctoral_letter", value: 0.8, reliability: "secondary" },
    ]),
    numericCell(cellKey("P2", "visual_acuity", 0), "single_source", 1.0, [
      { source: "device_export", value: 1.0 },
    ]),
    numericCell(cellKey("P3", "visual_acuity", 0), "redundant_consistent", 0.9, [
      { source: "device_export", value: 0.9 },
      { source: "doctoral_letter", value: 0.9, reliability: "secondary" },
    ]),
  ];
}
