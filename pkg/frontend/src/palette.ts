/** Color assignments, split into two reserved, non-overlapping sets:
 * the data palette (value encoding in the grid) and the annotation palette
 * (occlusion overlays and edit glyphs). Keeping the sets disjoint is a hard
 * requirement — annotations must never be mistakable for data — and the
 * test suite audits exactly that.
 */

import type { OcclusionClass, ScalarJson, GlyphKind } from "./model.js";

/** Sequential ramp for numeric values (light → dark). Rendering quantizes
 * to these exact stops so every painted data color is a member of the set. */
export const NUMERIC_RAMP: readonly string[] = [
  "#f7fbff",
  "#deebf7",
  "#c6dbef",
  "#9ecae1",
  "#6baed6",
  "#4292c6",
  "#2171b5",
  "#084594",
];

/** Distinct hues for categorical values, assigned per category in first-seen
 * order and reused cyclically. */
export const CATEGORICAL_COLORS: readonly string[] = [
  "#66c2a5",
  "#8da0cb",
  "#a6d854",
  "#ffd92f",
  "#b3b3b3",
  "#7570b3",
];

/** Painted when a cell has no displayable value (undecided discrepancy). */
export const MISSING_COLOR = "#ffffff";

export const DATA_PALETTE: ReadonlySet<string> = new Set([
  ...NUMERIC_RAMP,
  ...CATEGORICAL_COLORS,
  MISSING_COLOR,
]);

/** Overlay colors per occlusion class; "none" draws nothing. */
export const OCCLUSION_COLORS: Readonly<Record<OcclusionClass, string | null>> = {
  full: "#d81b60",
  partial: "#f06292",
  none: null,
};

/** Glyph colors per kind — like the overlays, reserved for annotations. */
export const GLYPH_COLORS: Readonly<Record<GlyphKind, string>> = {
  cell: "#6a1b9a",
  range: "#ef6c00",
  entity: "#00838f",
};

/** Glyph shapes per kind, distinct from each other and from plain cells. */
export const GLYPH_SHAPES: Readonly<Record<GlyphKind, string>> = {
  cell: "circle",
  range: "bracket",
  entity: "band",
};

export const ANNOTATION_PALETTE: ReadonlySet<string> = new Set(
  [
    ...Object.values(OCCLUSION_COLORS).filter((c): c is string => c !== null),
    ...Object.values(GLYPH_COLORS),
  ].map((c) => c.toLowerCase()),
);

/** Quantized color for one value given the numeric extent of its dimension. */
export function dataColor(
  value: ScalarJson | null,
  extent: { min: number; max: number },
  categories: readonly string[],
): string {
  if (value === null) return MISSING_COLOR;
  if (value.kind === "categorical") {
    const index = categories.indexOf(String(value.value));
    const colors = CATEGORICAL_COLORS;
    return colors[(index < 0 ? 0 : index) % colors.length] as string;
  }
  const n = Number(value.value);
  const span = extent.max - extent.min;
  const t = span > 0 ? (n - extent.min) / span : 0.5;
  const index = Math.min(
    NUMERIC_RAMP.length - 1,
    Math.max(0, Math.round(t * (NUMERIC_RAMP.length - 1))),
  );
  return NUMERIC_RAMP[index] as string;
}
