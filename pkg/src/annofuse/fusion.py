"""Merging source values per cell: redundancy classification, hierarchy-based
discrepancy resolution, and automatic provenance/resolution annotations.

Resolution selects, never synthesizes: every chosen value equals some
contributing source's value. The whole pass is pure and deterministic; ids
are assigned walking cells in sorted key order, and per-cell value lists are
canonicalized by (source, recorded_at, value) so input order never matters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .model import (
    Annotation,
    CellKey,
    FusedCell,
    IdAllocator,
    Provenance,
    RedundancyStatus,
    Resolution,
    SourceHierarchy,
    SourceRecord,
    SourceValue,
    values_equal,
)

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ToleranceConfig:
    """Relative numeric equality tolerance, configurable per dimension."""

    default: float = DEFAULT_TOLERANCE
    per_dimension: Mapping[str, float] = field(default_factory=dict)

    def for_dimension(self, dimension: str) -> float:
        return self.per_dimension.get(dimension, self.default)

    @classmethod
    def from_jsonable(cls, data: Mapping) -> "ToleranceConfig":
        return cls(
            default=float(data.get("default", DEFAULT_TOLERANCE)),
            per_dimension={str(k): float(v) for k, v in dict(data.get("per_dimension", {})).items()},
        )


@dataclass(frozen=True)
class FusionResult:
    cells: dict[CellKey, FusedCell]
    annotations: tuple[Annotation, ...]
    unresolved: tuple[CellKey, ...]
    warnings: tuple[str, ...] = ()


def classify(values: Sequence[SourceValue], tol: float = DEFAULT_TOLERANCE) -> RedundancyStatus:
    """Redundancy status of one cell's value list (all sharing one key)."""
    if not values:
        raise ValueError("classify needs at least one source value")
    if len(values) == 1:
        return RedundancyStatus.SINGLE_SOURCE
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            if not values_equal(values[i].value, values[j].value, tol):
                return RedundancyStatus.DISCREPANT
    return RedundancyStatus.REDUNDANT_CONSISTENT


def resolve(
    values: Sequence[SourceValue],
    hierarchy: SourceHierarchy | None,
    ids: IdAllocator | None = None,
) -> tuple[SourceValue | None, Resolution | None]:
    """Pick the value of a discrepant cell by source priority.

    The chosen value comes from the highest-priority source present among the
    contributing values; ties within that source fall to the latest
    recorded_at, then to the stable order of the given list. Without a
    hierarchy (or with one covering none of the sources) nothing is chosen
    and the cell stays unresolved.
    """
    if not values:
        raise ValueError("resolve needs at least one source value")
    if hierarchy is None:
        return None, None
    present = {v.source for v in values}
    top = next((s for s in hierarchy.priority if s in present), None)
    if top is None:
        logger.warning(
            "hierarchy for %r covers none of the contributing sources %s; cell unresolved",
            hierarchy.dimension, sorted(present),
        )
        return None, None
    chosen = _latest_of_source(values, top)
    rule_text = "resolved by hierarchy {}: {}".format(
        hierarchy.dimension, " > ".join(hierarchy.priority)
    )
    annotation = Resolution(
        annotation_id=(ids or IdAllocator()).next(),
        cell=chosen.cell,
        chosen_source=top,
        hierarchy=hierarchy,
        rule_text=rule_text,
    )
    return chosen, annotation


def _latest_of_source(values: Sequence[SourceValue], source: str) -> SourceValue:
    best: SourceValue | None = None
    for value in values:
        if value.source != source:
            continue
        if best is None or value.recorded_at > best.recorded_at:
            best = value
    assert best is not None
    return best


def _earliest(values: Sequence[SourceValue]) -> SourceValue:
    best = values[0]
    for value in values[1:]:
        if value.recorded_at < best.recorded_at:
            best = value
    return best


def _representative(
    values: Sequence[SourceValue], hierarchy: SourceHierarchy | None
) -> SourceValue:
    """Value shown for a non-discrepant cell.

    Consistent-within-tolerance values may still differ in representation, so
    the pick matters: hierarchy-top source if one applies, else the earliest
    recorded value.
    """
    if len(values) == 1:
        return values[0]
    if hierarchy is not None:
        present = {v.source for v in values}
        top = next((s for s in hierarchy.priority if s in present), None)
        if top is not None:
            return _latest_of_source(values, top)
    return _earliest(values)


def fuse(
    values: Iterable[SourceValue],
    hierarchies: Iterable[SourceHierarchy] = (),
    tol: ToleranceConfig | float = DEFAULT_TOLERANCE,
) -> FusionResult:
    """Group source values by cell, classify, resolve, and annotate.

    Emits exactly one Provenance annotation per cell (all cells, not only
    problematic ones: the preprocessing encoding needs all three reliability
    classes) and one Resolution annotation per auto-resolved discrepant cell.
    """
    tolerance = tol if isinstance(tol, ToleranceConfig) else ToleranceConfig(default=float(tol))
    by_dimension = {h.dimension: h for h in hierarchies}

    groups: dict[CellKey, list[SourceValue]] = {}
    for value in values:
        groups.setdefault(value.cell, []).append(value)

    cells: dict[CellKey, FusedCell] = {}
    annotations: list[Annotation] = []
    unresolved: list[CellKey] = []
    warnings: list[str] = []
    ids = IdAllocator()

    for cell in sorted(groups):
        group = sorted(
            groups[cell],
            key=lambda v: (v.source, v.recorded_at, v.value.canonical()),
        )
        cell_tol = tolerance.for_dimension(cell.dimension)
        status = classify(group, cell_tol)

        hierarchy = by_dimension.get(cell.dimension)
        if hierarchy is not None and not any(v.source in hierarchy.priority for v in group):
            warnings.append(
                f"hierarchy for {cell.dimension!r} covers none of the sources "
                f"{sorted({v.source for v in group})} at {cell.entity_id!r}"
            )
            hierarchy = None

        provenance_id = ids.next()
        resolution: Resolution | None = None
        if status is RedundancyStatus.DISCREPANT:
            chosen_value, resolution = resolve(group, hierarchy, ids=ids)
        else:
            chosen_value = _representative(group, hierarchy)

        annotations.append(Provenance(
            annotation_id=provenance_id,
            cell=cell,
            status=status,
            sources=tuple(
                SourceRecord(source=v.source, value=v.value, recorded_at=v.recorded_at)
                for v in group
            ),
        ))
        if resolution is not None:
            annotations.append(resolution)
        elif status is RedundancyStatus.DISCREPANT:
            unresolved.append(cell)

        cells[cell] = FusedCell(
            cell=cell,
            chosen=None if chosen_value is None else chosen_value.value,
            status=status,
            contributing=tuple(group),
        )

    return FusionResult(
        cells=cells,
        annotations=tuple(annotations),
        unresolved=tuple(unresolved),
        warnings=tuple(warnings),
    )
