/** Cleansing view: the data grid again, but with a glyph layer showing
 * where edits happened. Each edit contributes one glyph whose shape and
 * color depend only on the edit's scope — a dot on a single cell, a bracket
 * spanning a contiguous range, a band across a whole entity — so the kind
 * of intervention is readable at a glance. Hovering a glyph reveals the
 * full annotation content (author, rationale or rule, per-cell old → new).
 */

import type { CellKeyJson, EditJson, GlyphKind, ScopeJson } from "./model.js";
import { cellKeyId, glyphForScope, scalarLabel } from "./model.js";
import { GLYPH_COLORS, GLYPH_SHAPES } from "./palette.js";

export interface GlyphHover {
  editId: string;
  author: string;
  /** Rationale for manual edits, rule description for automatic ones. */
  reason: string;
  isRuleEdit: boolean;
  changes: { cell: CellKeyJson; before: string; after: string }[];
  createdAt: string;
}

export interface GlyphView {
  editId: string;
  kind: GlyphKind;
  shape: string;
  color: string;
  /** Every cell the edit touched, i.e. where the glyph is anchored. */
  anchors: CellKeyJson[];
  scope: ScopeJson;
  hover: GlyphHover;
}

export function buildGlyph(edit: EditJson): GlyphView {
  const kind = glyphForScope(edit.scope);
  return {
    editId: edit.id,
    kind,
    shape: GLYPH_SHAPES[kind],
    color: GLYPH_COLORS[kind],
    anchors: edit.changes.map((change) => change.cell),
    scope: edit.scope,
    hover: {
      editId: edit.id,
      author: edit.author,
      reason: edit.rule_set ?? edit.rationale,
      isRuleEdit: edit.rule_set !== null,
      changes: edit.changes.map((change) => ({
        cell: change.cell,
        before: scalarLabel(change.old),
        after: scalarLabel(change.new),
      })),
      createdAt: edit.created_at,
    },
  };
}

export interface CleansingView {
  glyphs: GlyphView[];
  /** cell id → glyphs anchored there, for hit-testing and rendering. */
  byCell: Map<string, GlyphView[]>;
}

export function buildCleansingView(edits: EditJson[]): CleansingView {
  const glyphs = edits.map(buildGlyph);
  const byCell = new Map<string, GlyphView[]>();
  for (const glyph of glyphs) {
    for (const anchor of glyph.anchors) {
      const id = cellKeyId(anchor);
      const existing = byCell.get(id) ?? [];
      existing.push(glyph);
      byCell.set(id, existing);
    }
  }
  return { glyphs, byCell };
}
