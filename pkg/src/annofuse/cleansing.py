"""Manual and rule-based edits over the fused dataset, plausibility checks,
and edit validation.

Edits never mutate raw source values; they act on the fused dataset only, and
every application records a full before/after snapshot per affected cell so
the audit log can be replayed or inverted without extra context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

from .model import (
    Annotation,
    AnnofuseError,
    CellChange,
    CellKey,
    DimensionRange,
    Edit,
    EditScope,
    EntityWide,
    FusedCell,
    IdAllocator,
    InvalidAnnotation,
    NotVotable,
    Scalar,
    SchemaMismatch,
    SingleCell,
    UnknownTarget,
    User,
    ValueKind,
    Verdict,
    Vote,
    new_vote,
    now_utc,
)
from datetime import datetime


class EmptyScope(AnnofuseError):
    """A range or entity scope matched no existing cell."""


# --------------------------------------------------------------------------
# working dataset

class Dataset:
    """Current values of the fused dataset, keyed by cell.

    A key present with value None is a known cell whose value is undecided
    (an unresolved discrepancy); cleansing exists to fill those in. Each
    dimension has a fixed value kind, learned from fusion or from the first
    value written to a new dimension.
    """

    def __init__(
        self,
        values: Mapping[CellKey, Scalar | None] | None = None,
        kinds: Mapping[str, ValueKind] | None = None,
    ):
        self._values: dict[CellKey, Scalar | None] = dict(values or {})
        self._kinds: dict[str, ValueKind] = dict(kinds or {})
        for cell, value in self._values.items():
            if value is not None:
                self._kinds.setdefault(cell.dimension, value.kind)

    @classmethod
    def from_fused_cells(cls, cells: Mapping[CellKey, FusedCell]) -> "Dataset":
        kinds: dict[str, ValueKind] = {}
        values: dict[CellKey, Scalar | None] = {}
        for key, fused in cells.items():
            values[key] = fused.chosen
            for sv in fused.contributing:
                kinds.setdefault(key.dimension, sv.value.kind)
        return cls(values, kinds)

    def copy(self) -> "Dataset":
        return Dataset(self._values, self._kinds)

    def get(self, cell: CellKey) -> Scalar | None:
        return self._values.get(cell)

    def set(self, cell: CellKey, value: Scalar) -> None:
        kind = self._kinds.setdefault(cell.dimension, value.kind)
        if value.kind is not kind:
            raise SchemaMismatch(
                f"dimension {cell.dimension!r} holds {kind.value} values, "
                f"got {value.kind.value}"
            )
        self._values[cell] = value

    def kind_of(self, dimension: str) -> ValueKind | None:
        return self._kinds.get(dimension)

    def keys(self) -> list[CellKey]:
        return list(self._values)

    def items(self) -> list[tuple[CellKey, Scalar | None]]:
        return list(self._values.items())

    def as_dict(self) -> dict[CellKey, Scalar | None]:
        return dict(self._values)

    def __contains__(self, cell: CellKey) -> bool:
        return cell in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._values == other._values

    def entity_timestamps(self, entity_id: str) -> list:
        """All observation times at which the entity has any cell, sorted."""
        times = {c.observed_at for c in self._values if c.entity_id == entity_id}
        return sorted(times)


# --------------------------------------------------------------------------
# edit requests

@dataclass(frozen=True)
class EditRequest:
    """One requested correction: a scope plus the new value(s).

    Exactly one of new_value (applied to every cell in scope) or new_values
    (per-cell map, for range scopes) must be given. rule_set marks the edit
    as automatic; manual edits must explain themselves in the rationale.
    """

    scope: EditScope
    author: str
    rationale: str = ""
    new_value: Scalar | None = None
    new_values: Mapping[CellKey, Scalar] | None = None
    rule_set: str | None = None

    def __post_init__(self) -> None:
        if (self.new_value is None) == (self.new_values is None):
            raise InvalidAnnotation("exactly one of new_value / new_values required")
        if not self.author:
            raise InvalidAnnotation("edit request must name an author")
        if self.rule_set is None and not self.rationale.strip():
            raise InvalidAnnotation("manual edits require a rationale")
        if self.rule_set is not None and not self.rule_set.strip():
            raise InvalidAnnotation("automatic edits require a rule description")


def expand_scope(dataset: Dataset, scope: EditScope) -> list[CellKey]:
    """Cells of the dataset a scope currently covers, sorted by key.

    A SingleCell scope may point at a missing cell (creation); range and
    entity scopes must match at least one existing cell.
    """
    if isinstance(scope, SingleCell):
        return [scope.cell]
    if isinstance(scope, DimensionRange):
        cells = [
            c for c in dataset.keys()
            if c.entity_id == scope.entity_id
            and c.dimension == scope.dimension
            and scope.start <= c.observed_at <= scope.end
        ]
    else:
        cells = [c for c in dataset.keys() if c.entity_id == scope.entity_id]
    if not cells:
        raise EmptyScope(f"empty edit scope: {scope}")
    return sorted(cells)


def apply_edit(
    dataset: Dataset,
    request: EditRequest,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
) -> tuple[Dataset, Edit]:
    """Apply one edit, returning the new dataset and its Edit annotation.

    The result differs from the input only within the scope; the annotation
    stores old and new values for every affected cell.
    """
    affected = expand_scope(dataset, request.scope)
    new_dataset = dataset.copy()
    changes: list[CellChange] = []
    for cell in affected:
        if request.new_values is not None:
            if cell not in request.new_values:
                raise InvalidAnnotation(f"value map misses cell in scope: {cell}")
            value = request.new_values[cell]
        else:
            assert request.new_value is not None
            value = request.new_value
        old = dataset.get(cell)
        new_dataset.set(cell, value)  # raises SchemaMismatch on kind conflict
        changes.append(CellChange(cell=cell, old=old, new=value))

    annotation = Edit(
        annotation_id=(ids or IdAllocator(prefix="e")).next(),
        scope=request.scope,
        changes=tuple(changes),
        author=request.author,
        rationale=request.rationale,
        rule_set=request.rule_set,
        created_at=created_at or now_utc(),
    )
    return new_dataset, annotation


# --------------------------------------------------------------------------
# plausibility rules

@dataclass(frozen=True)
class RangeRule:
    dimension: str
    rule_id: str
    min_value: float
    max_value: float
    description: str = ""

    def __post_init__(self) -> None:
        if self.min_value > self.max_value:
            raise InvalidAnnotation("range rule needs min <= max")


@dataclass(frozen=True)
class RequiredRule:
    """The dimension is expected at every time the entity has any recording."""

    dimension: str
    rule_id: str
    description: str = ""


@dataclass(frozen=True)
class MonotoneRule:
    dimension: str
    rule_id: str
    direction: str  # "increasing" or "decreasing", non-strict
    description: str = ""

    def __post_init__(self) -> None:
        if self.direction not in ("increasing", "decreasing"):
            raise InvalidAnnotation(f"unknown monotone direction {self.direction!r}")


PlausibilityRule = Union[RangeRule, RequiredRule, MonotoneRule]


@dataclass(frozen=True)
class Violation:
    cell: CellKey
    rule_id: str
    missing: bool = False  # True when the violation is an absent cell


@dataclass(frozen=True)
class CleansingReport:
    violations: tuple[Violation, ...]
    suggestions: tuple[EditRequest, ...]
    warnings: tuple[str, ...] = ()


def check_plausibility(
    dataset: Dataset, rules: Sequence[PlausibilityRule]
) -> CleansingReport:
    """Flag implausible values, missing required cells, and trend breaks.

    Rules over dimensions the dataset does not know are skipped with a
    warning. Range violations come with clamp-edit drafts; required gaps with
    fill-forward drafts where an earlier value exists.
    """
    violations: list[Violation] = []
    suggestions: list[EditRequest] = []
    warnings: list[str] = []
    known_dimensions = {c.dimension for c in dataset.keys()}
    entities = sorted({c.entity_id for c in dataset.keys()})

    for rule in rules:
        if rule.dimension not in known_dimensions:
            warnings.append(
                f"rule {rule.rule_id!r} references unknown dimension {rule.dimension!r}; skipped"
            )
            continue
        if isinstance(rule, RangeRule):
            for cell in sorted(dataset.keys()):
                value = dataset.get(cell)
                if cell.dimension != rule.dimension or value is None:
                    continue
                if value.kind is not ValueKind.NUMERIC:
                    continue
                assert value.number is not None
                if not (rule.min_value <= value.number <= rule.max_value):
                    violations.append(Violation(cell=cell, rule_id=rule.rule_id))
                    suggestions.append(_draft_clamp(cell, value, rule))
        elif isinstance(rule, RequiredRule):
            for entity in entities:
                previous: Scalar | None = None
                for ts in dataset.entity_timestamps(entity):
                    cell = CellKey(entity_id=entity, dimension=rule.dimension, observed_at=ts)
                    if cell in dataset:
                        if dataset.get(cell) is not None:
                            previous = dataset.get(cell)
                        continue
                    violations.append(Violation(cell=cell, rule_id=rule.rule_id, missing=True))
                    if previous is not None:
                        suggestions.append(EditRequest(
                            scope=SingleCell(cell=cell),
                            author="system",
                            new_value=previous,
                            rule_set=f"fill forward missing {rule.dimension}",
                        ))
        else:
            sign = 1.0 if rule.direction == "increasing" else -1.0
            for entity in entities:
                run = sorted(
                    (c for c in dataset.keys()
                     if c.entity_id == entity and c.dimension == rule.dimension),
                    key=lambda c: c.observed_at,
                )
                pairs = [
                    (c, dataset.get(c)) for c in run
                    if dataset.get(c) is not None
                    and dataset.get(c).kind is ValueKind.NUMERIC  # type: ignore[union-attr]
                ]
                for (_, prev), (cell, curr) in zip(pairs, pairs[1:]):
                    assert prev is not None and curr is not None
                    if sign * (curr.number - prev.number) < 0:  # type: ignore[operator]
                        violations.append(Violation(cell=cell, rule_id=rule.rule_id))

    return CleansingReport(
        violations=tuple(violations),
        suggestions=tuple(suggestions),
        warnings=tuple(warnings),
    )


def _draft_clamp(cell: CellKey, value: Scalar, rule: RangeRule) -> EditRequest:
    assert value.number is not None
    clamped = min(max(value.number, rule.min_value), rule.max_value)
    return EditRequest(
        scope=SingleCell(cell=cell),
        author="system",
        new_value=Scalar.numeric(clamped, value.unit),
        rule_set=f"clamp to range [{rule.min_value}, {rule.max_value}] on {rule.dimension}",
    )


# --------------------------------------------------------------------------
# automatic correction rule catalog
#
# Three fixed rules, each a predicate + replacement pair. All are idempotent:
# once applied, their predicates no longer match anything.

@dataclass(frozen=True)
class ClampToRange:
    dimension: str
    min_value: float
    max_value: float

    def describe(self) -> str:
        return f"clamp-to-range {self.dimension} [{self.min_value}, {self.max_value}]"

    def matches(self, dataset: Dataset) -> dict[CellKey, Scalar]:
        out: dict[CellKey, Scalar] = {}
        for cell, value in dataset.items():
            if cell.dimension != self.dimension or value is None:
                continue
            if value.kind is not ValueKind.NUMERIC:
                continue
            assert value.number is not None
            if not (self.min_value <= value.number <= self.max_value):
                clamped = min(max(value.number, self.min_value), self.max_value)
                out[cell] = Scalar.numeric(clamped, value.unit)
        return out


@dataclass(frozen=True)
class UnitRescale:
    """Rescale values that sit outside the plausible band but would land
    inside it after multiplication (wrong-unit recordings)."""

    dimension: str
    factor: float
    plausible_min: float
    plausible_max: float

    def describe(self) -> str:
        return (f"unit-rescale {self.dimension} x{self.factor} "
                f"into [{self.plausible_min}, {self.plausible_max}]")

    def matches(self, dataset: Dataset) -> dict[CellKey, Scalar]:
        out: dict[CellKey, Scalar] = {}
        for cell, value in dataset.items():
            if cell.dimension != self.dimension or value is None:
                continue
            if value.kind is not ValueKind.NUMERIC:
                continue
            assert value.number is not None
            inside = self.plausible_min <= value.number <= self.plausible_max
            rescaled = value.number * self.factor
            lands_inside = self.plausible_min <= rescaled <= self.plausible_max
            if not inside and lands_inside:
                out[cell] = Scalar.numeric(rescaled, value.unit)
        return out


@dataclass(frozen=True)
class FillForward:
    """Create missing cells on the entity's observation grid, carrying the
    most recent earlier value of the dimension forward."""

    dimension: str

    def describe(self) -> str:
        return f"fill-forward-missing {self.dimension}"

    def matches(self, dataset: Dataset) -> dict[CellKey, Scalar]:
        out: dict[CellKey, Scalar] = {}
        entities = sorted({c.entity_id for c in dataset.keys()})
        for entity in entities:
            last: Scalar | None = None
            for ts in dataset.entity_timestamps(entity):
                cell = CellKey(entity_id=entity, dimension=self.dimension, observed_at=ts)
                current = dataset.get(cell) if cell in dataset else None
                if current is not None:
                    last = current
                elif last is not None:
                    out[cell] = last
        return out


CorrectionRule = Union[ClampToRange, UnitRescale, FillForward]


def apply_rule_edit(
    dataset: Dataset,
    rule: CorrectionRule,
    author: str,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
) -> tuple[Dataset, list[Edit]]:
    """Apply one catalog rule everywhere it matches.

    One Edit annotation per affected contiguous run of cells (same entity and
    dimension, no untouched cell in between); zero matches mean zero edits.
    Re-applying the same rule to the result is a no-op.
    """
    matches = rule.matches(dataset)
    if not matches:
        return dataset, []
    allocator = ids or IdAllocator(prefix="e")
    current = dataset
    edits: list[Edit] = []
    is_creation = isinstance(rule, FillForward)
    for scope, cells in _contiguous_scopes(dataset, sorted(matches), creations=is_creation):
        request = EditRequest(
            scope=scope,
            author=author,
            new_values={c: matches[c] for c in cells},
            rule_set=rule.describe(),
        )
        current, annotation = apply_edit(current, request, allocator, created_at)
        edits.append(annotation)
    return current, edits


def _contiguous_scopes(
    dataset: Dataset, cells: list[CellKey], creations: bool
) -> list[tuple[EditScope, list[CellKey]]]:
    """Group affected cells into per-(entity, dimension) contiguous runs.

    A run breaks where an existing, unaffected cell of the same entity and
    dimension lies strictly between two affected ones. Created cells always
    get their own SingleCell scope, because only that scope may create.
    """
    if creations:
        return [(SingleCell(cell=c), [c]) for c in cells]

    affected = set(cells)
    by_series: dict[tuple[str, str], list[CellKey]] = {}
    for cell in cells:
        by_series.setdefault((cell.entity_id, cell.dimension), []).append(cell)

    out: list[tuple[EditScope, list[CellKey]]] = []
    for (entity, dimension), series_cells in sorted(by_series.items()):
        existing = sorted(
            c for c in dataset.keys()
            if c.entity_id == entity and c.dimension == dimension
        )
        run: list[CellKey] = []
        for cell in existing:
            if cell in affected:
                run.append(cell)
            elif run:
                out.append(_run_scope(entity, dimension, run))
                run = []
        if run:
            out.append(_run_scope(entity, dimension, run))
    return out


def _run_scope(entity: str, dimension: str, run: list[CellKey]) -> tuple[EditScope, list[CellKey]]:
    if len(run) == 1:
        return SingleCell(cell=run[0]), list(run)
    return (
        DimensionRange(
            entity_id=entity,
            dimension=dimension,
            start=run[0].observed_at,
            end=run[-1].observed_at,
        ),
        list(run),
    )


# --------------------------------------------------------------------------
# edit validation

def validate_edit(
    annotations_by_id: Mapping[str, Annotation],
    edit_id: str,
    verdict: Verdict,
    author: User,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
) -> Vote:
    """Cast a qualified vote on an edit; the lifecycle state derives from votes."""
    target = annotations_by_id.get(edit_id)
    if target is None:
        raise UnknownTarget(f"no annotation with id {edit_id!r}")
    if not isinstance(target, Edit):
        raise NotVotable(f"annotation {edit_id!r} is not an edit")
    return new_vote(
        annotation_id=(ids or IdAllocator(prefix="v")).next(),
        target=edit_id,
        verdict=verdict,
        author=author,
        created_at=created_at or now_utc(),
    )


# --------------------------------------------------------------------------
# rule config loading (plausibility rules + catalog parameters)

def load_rules_config(path: Path | str) -> tuple[list[PlausibilityRule], list[CorrectionRule]]:
    """Read plausibility rules and correction-rule parameters from JSON.

    Schema: {"plausibility": [{"kind": "range"|"required"|"monotone", ...}],
             "corrections": [{"kind": "clamp"|"rescale"|"fill_forward", ...}]}
    """
    p = Path(path)
    if not p.is_file():
        raise InvalidAnnotation(f"rules config not found: {p}")
    data = json.loads(p.read_text(encoding="utf-8"))
    plausibility: list[PlausibilityRule] = []
    for entry in data.get("plausibility", []):
        kind = entry.get("kind")
        if kind == "range":
            plausibility.append(RangeRule(
                dimension=str(entry["dimension"]), rule_id=str(entry["rule_id"]),
                min_value=float(entry["min"]), max_value=float(entry["max"]),
                description=str(entry.get("description", "")),
            ))
        elif kind == "required":
            plausibility.append(RequiredRule(
                dimension=str(entry["dimension"]), rule_id=str(entry["rule_id"]),
                description=str(entry.get("description", "")),
            ))
        elif kind == "monotone":
            plausibility.append(MonotoneRule(
                dimension=str(entry["dimension"]), rule_id=str(entry["rule_id"]),
                direction=str(entry["direction"]),
                description=str(entry.get("description", "")),
            ))
        else:
            raise InvalidAnnotation(f"unknown plausibility rule kind {kind!r}")
    corrections: list[CorrectionRule] = []
    for entry in data.get("corrections", []):
        kind = entry.get("kind")
        if kind == "clamp":
            corrections.append(ClampToRange(
                dimension=str(entry["dimension"]),
                min_value=float(entry["min"]), max_value=float(entry["max"]),
            ))
        elif kind == "rescale":
            corrections.append(UnitRescale(
                dimension=str(entry["dimension"]), factor=float(entry["factor"]),
                plausible_min=float(entry["min"]), plausible_max=float(entry["max"]),
            ))
        elif kind == "fill_forward":
            corrections.append(FillForward(dimension=str(entry["dimension"])))
        else:
            raise InvalidAnnotation(f"unknown correction rule kind {kind!r}")
    return plausibility, corrections
