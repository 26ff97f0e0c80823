/** Externalizing a finding: capture the chart on screen as a PNG, collect
 * the finding text, gather the keys of every currently visible cell, and
 * submit everything as one multipart request. The snapshot is mandatory —
 * a failed capture blocks the finding with an explanation instead of
 * submitting a cardless insight.
 *
 * Rasterization is injected: the browser build draws the chart element to a
 * canvas, while tests supply a deterministic encoder. Only the current chart
 * is captured, never the whole page.
 */

import type { ApiClient } from "./api.js";
import type { FindingJson } from "./model.js";
import type { GridView } from "./grid.js";

export type Rasterizer = (view: GridView) => Promise<Uint8Array>;

export class CaptureError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CaptureError";
  }
}

export interface ExternalizedFinding {
  annotation: FindingJson;
  blobId: string;
}

export async function externalizeFinding(
  api: ApiClient,
  view: GridView,
  text: string,
  rasterize: Rasterizer,
): Promise<ExternalizedFinding> {
  if (text.trim() === "") {
    throw new CaptureError("finding text must not be empty");
  }
  let png: Uint8Array;
  try {
    png = await rasterize(view);
  } catch (cause) {
    throw new CaptureError(
      `view capture failed, finding not submitted (a snapshot is mandatory): ${String(cause)}`,
    );
  }
  if (png.length === 0) {
    throw new CaptureError(
      "view capture produced no image, finding not submitted",
    );
  }
  const visibleCells = view.cells.map((cell) => cell.key);
  const result = await api.postFinding(text.trim(), png, visibleCells);
  return { annotation: result.annotation, blobId: result.blob_id };
}
