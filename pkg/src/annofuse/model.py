"""Shared domain vocabulary: cells, source values, annotations, lifecycle.

All types here are immutable value objects, safe to share across threads.
Annotations are never edited in place; corrections are expressed as new
Comment/Vote/Edit annotations so the event log stays replayable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Sequence, Union


class AnnofuseError(Exception):
    """Base class for all domain errors."""


class SchemaMismatch(AnnofuseError):
    """Two values of incompatible kinds were compared or assigned."""


class InvalidAnnotation(AnnofuseError):
    """An annotation or domain value violates a construction invariant."""


class InsufficientQualification(AnnofuseError):
    """The acting user lacks the qualification the operation requires."""


class UnknownTarget(AnnofuseError):
    """A comment or vote references an annotation id that does not exist."""


class NotVotable(AnnofuseError):
    """Votes may only target edits and findings."""


# --------------------------------------------------------------------------
# timestamps
#
# All timestamps are UTC at second resolution. Inputs without a timezone are
# taken as UTC; anything finer than a second is truncated.

def to_utc_seconds(dt: datetime) -> datetime:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def now_utc() -> datetime:
    return to_utc_seconds(datetime.now(timezone.utc))


def parse_timestamp(raw: str) -> datetime:
    """Parse an ISO-8601 timestamp; 'Z' suffix and naive values mean UTC."""
    text = raw.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    return to_utc_seconds(datetime.fromisoformat(text))


def format_timestamp(dt: datetime) -> str:
    return to_utc_seconds(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# scalar values

class ValueKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Scalar:
    """One observed value: a finite number with an optional unit tag, or a
    categorical string. Categorical comparison is case-sensitive exact match;
    normalization is an ingestion concern."""

    kind: ValueKind
    number: float | None = None
    text: str | None = None
    unit: str | None = None

    def __post_init__(self) -> None:
        if self.kind is ValueKind.NUMERIC:
            if self.number is None or not math.isfinite(self.number):
                raise InvalidAnnotation("numeric value must be finite")
            if self.text is not None:
                raise InvalidAnnotation("numeric value carries no text")
        else:
            if not self.text:
                raise InvalidAnnotation("categorical value must be non-empty")
            if self.number is not None or self.unit is not None:
                raise InvalidAnnotation("categorical value carries no number/unit")

    @classmethod
    def numeric(cls, number: float, unit: str | None = None) -> "Scalar":
        return cls(kind=ValueKind.NUMERIC, number=float(number), unit=unit)

    @classmethod
    def categorical(cls, text: str) -> "Scalar":
        return cls(kind=ValueKind.CATEGORICAL, text=text)

    def canonical(self) -> str:
        """Stable text form, used for sorting and fingerprints."""
        if self.kind is ValueKind.NUMERIC:
            return f"n:{self.number!r}:{self.unit or ''}"
        return f"c:{self.text}"


def values_equal(a: Scalar, b: Scalar, tol: float = 1e-9) -> bool:
    """Compare two scalars of the same kind.

    Numeric values are equal when |a-b| <= tol * max(|a|, |b|, 1); categorical
    values must match exactly. Mixed kinds signal a schema problem upstream.
    """
    if a.kind is not b.kind:
        raise SchemaMismatch(f"cannot compare {a.kind.value} with {b.kind.value}")
    if a.kind is ValueKind.NUMERIC:
        assert a.number is not None and b.number is not None
        return abs(a.number - b.number) <= tol * max(abs(a.number), abs(b.number), 1.0)
    return a.text == b.text


def fingerprint_value(value: Scalar | None) -> str:
    """Short content hash of a cell value; None marks a missing/undecided cell."""
    payload = "missing" if value is None else value.canonical()
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# cells and sources

@dataclass(frozen=True, order=True)
class CellKey:
    """Identity of one data point: who, what, when."""

    entity_id: str
    dimension: str
    observed_at: datetime

    def __post_init__(self) -> None:
        if not self.entity_id or not self.dimension:
            raise InvalidAnnotation("cell key fields must be non-empty")
        object.__setattr__(self, "observed_at", to_utc_seconds(self.observed_at))


class Reliability(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


@dataclass(frozen=True)
class SourceValue:
    """One observed value for a cell, as reported by one source."""

    cell: CellKey
    value: Scalar
    source: str
    recorded_at: datetime
    reliability: Reliability

    def __post_init__(self) -> None:
        if not self.source:
            raise InvalidAnnotation("source name must be non-empty")
        object.__setattr__(self, "recorded_at", to_utc_seconds(self.recorded_at))


class RedundancyStatus(str, Enum):
    SINGLE_SOURCE = "single_source"
    REDUNDANT_CONSISTENT = "redundant_consistent"
    DISCREPANT = "discrepant"


@dataclass(frozen=True)
class FusedCell:
    """The chosen value for a cell plus everything that contributed to it.

    A discrepant cell has a chosen value only if a hierarchy resolved it.
    """

    cell: CellKey
    chosen: Scalar | None
    status: RedundancyStatus
    contributing: tuple[SourceValue, ...]

    def __post_init__(self) -> None:
        if not self.contributing:
            raise InvalidAnnotation("fused cell needs at least one source value")
        if any(sv.cell != self.cell for sv in self.contributing):
            raise InvalidAnnotation("contributing values must share the cell key")
        if self.status is RedundancyStatus.SINGLE_SOURCE and len(self.contributing) != 1:
            raise InvalidAnnotation("single-source cell must have exactly one value")
        if self.status is not RedundancyStatus.DISCREPANT and self.chosen is None:
            raise InvalidAnnotation("non-discrepant cell must carry a chosen value")


@dataclass(frozen=True)
class SourceHierarchy:
    """Per-dimension source priority, highest first; drives auto-resolution."""

    dimension: str
    priority: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.priority:
            raise InvalidAnnotation("hierarchy priority list must be non-empty")
        if len(set(self.priority)) != len(self.priority):
            raise InvalidAnnotation(f"duplicate source in hierarchy for {self.dimension!r}")


class Qualification(str, Enum):
    ANALYST = "analyst"
    EXPERT = "expert"


@dataclass(frozen=True)
class User:
    user_id: str
    display_name: str
    qualification: Qualification

    def __post_init__(self) -> None:
        if not self.user_id:
            raise InvalidAnnotation("user_id must be non-empty")


# --------------------------------------------------------------------------
# edit scopes

@dataclass(frozen=True)
class SingleCell:
    cell: CellKey


@dataclass(frozen=True)
class DimensionRange:
    entity_id: str
    dimension: str
    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", to_utc_seconds(self.start))
        object.__setattr__(self, "end", to_utc_seconds(self.end))
        if self.start > self.end:
            raise InvalidAnnotation("range start must not be after end")


@dataclass(frozen=True)
class EntityWide:
    entity_id: str


EditScope = Union[SingleCell, DimensionRange, EntityWide]


# --------------------------------------------------------------------------
# annotation variants

@dataclass(frozen=True)
class SourceRecord:
    """A (source, value, recorded_at) triple inside a provenance annotation."""

    source: str
    value: Scalar
    recorded_at: datetime

    def __post_init__(self) -> None:
        object.__setattr__(self, "recorded_at", to_utc_seconds(self.recorded_at))


@dataclass(frozen=True)
class Provenance:
    """Automatic record of which sources contributed to a cell and how they agree."""

    annotation_id: str
    cell: CellKey
    status: RedundancyStatus
    sources: tuple[SourceRecord, ...]

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.sources:
            raise InvalidAnnotation("provenance must list at least one source")


@dataclass(frozen=True)
class Resolution:
    """Automatic record of the hierarchy rule that selected a discrepant cell's value."""

    annotation_id: str
    cell: CellKey
    chosen_source: str
    hierarchy: SourceHierarchy
    rule_text: str

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.chosen_source:
            raise InvalidAnnotation("resolution must name the chosen source")


@dataclass(frozen=True)
class CellChange:
    """Full before/after snapshot for one cell touched by an edit.

    old is None when the edit created the cell or filled an undecided value.
    """

    cell: CellKey
    old: Scalar | None
    new: Scalar


@dataclass(frozen=True)
class Edit:
    """Record of a manual or rule-based correction: when, how, by whom, why."""

    annotation_id: str
    scope: EditScope
    changes: tuple[CellChange, ...]
    author: str
    rationale: str
    rule_set: str | None
    created_at: datetime

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.changes:
            raise InvalidAnnotation("edit must affect at least one cell")
        if not self.author:
            raise InvalidAnnotation("edit must name an author")
        if self.rule_set is None and not self.rationale.strip():
            raise InvalidAnnotation("manual edits require a rationale")
        if self.rule_set is not None and not self.rule_set.strip():
            raise InvalidAnnotation("automatic edits require a rule description")
        object.__setattr__(self, "created_at", to_utc_seconds(self.created_at))

    @property
    def automatic(self) -> bool:
        return self.rule_set is not None


@dataclass(frozen=True)
class DataRef:
    """Reference to a data point visible when a finding was externalized.

    The fingerprint freezes the value seen at that moment, so later readers
    can detect that the underlying data changed without storing a copy.
    """

    cell: CellKey
    fingerprint: str


@dataclass(frozen=True)
class Finding:
    """An externalized insight: verbalization, snapshot reference, data refs."""

    annotation_id: str
    text: str
    snapshot_ref: str
    data_refs: tuple[DataRef, ...]
    author: str
    created_at: datetime

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.text.strip():
            raise InvalidAnnotation("finding text must be non-empty")
        if not self.snapshot_ref:
            raise InvalidAnnotation("finding must reference a snapshot blob")
        if not self.author:
            raise InvalidAnnotation("finding must name an author")
        object.__setattr__(self, "created_at", to_utc_seconds(self.created_at))


@dataclass(frozen=True)
class Comment:
    """Annotation of an annotation: free-text remark on any existing annotation."""

    annotation_id: str
    target: str
    text: str
    author: str
    created_at: datetime

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.target:
            raise InvalidAnnotation("comment must reference a target annotation")
        if not self.text.strip():
            raise InvalidAnnotation("comment text must be non-empty")
        if not self.author:
            raise InvalidAnnotation("comment must name an author")
        object.__setattr__(self, "created_at", to_utc_seconds(self.created_at))


class Verdict(str, Enum):
    CONFIRM = "confirm"
    REJECT = "reject"


@dataclass(frozen=True)
class Vote:
    """Qualified assessment of an edit or finding. Construct via new_vote()."""

    annotation_id: str
    target: str
    verdict: Verdict
    author: str
    created_at: datetime

    def __post_init__(self) -> None:
        _require_id(self.annotation_id)
        if not self.target:
            raise InvalidAnnotation("vote must reference a target annotation")
        if not self.author:
            raise InvalidAnnotation("vote must name an author")
        object.__setattr__(self, "created_at", to_utc_seconds(self.created_at))


Annotation = Union[Provenance, Resolution, Edit, Finding, Comment, Vote]

VOTABLE_VARIANTS = (Edit, Finding)


def _require_id(annotation_id: str) -> None:
    if not annotation_id:
        raise InvalidAnnotation("annotation id must be non-empty")


def new_vote(
    annotation_id: str,
    target: str,
    verdict: Verdict,
    author: User,
    created_at: datetime | None = None,
) -> Vote:
    """Construct a vote, rejecting authors below Expert qualification."""
    if author.qualification is not Qualification.EXPERT:
        raise InsufficientQualification(
            f"user {author.user_id!r} is not qualified to vote"
        )
    return Vote(
        annotation_id=annotation_id,
        target=target,
        verdict=verdict,
        author=author.user_id,
        created_at=created_at or now_utc(),
    )


class IdAllocator:
    """Hands out annotation ids 'a1', 'a2', ... in a fixed, replayable order."""

    def __init__(self, start: int = 1, prefix: str = "a"):
        self._next = start
        self._prefix = prefix

    def next(self) -> str:
        value = f"{self._prefix}{self._next}"
        self._next += 1
        return value


# --------------------------------------------------------------------------
# lifecycle

class LifecycleState(str, Enum):
    UNVALIDATED = "unvalidated"
    VALID = "valid"
    INVALID = "invalid"


def annotation_state(target: Annotation, votes: Sequence[Vote]) -> LifecycleState:
    """Derive the validation state of an annotation from its votes.

    The latest qualified verdict wins; with no votes the annotation is
    unvalidated. Votes must already be in log (sequence) order and must all
    target the given annotation; non-Expert votes never exist because vote
    construction rejects them.
    """
    for vote in votes:
        if vote.target != target.annotation_id:
            raise UnknownTarget(
                f"vote {vote.annotation_id!r} targets {vote.target!r}, "
                f"not {target.annotation_id!r}"
            )
    if not votes:
        return LifecycleState.UNVALIDATED
    last = votes[-1]
    return LifecycleState.VALID if last.verdict is Verdict.CONFIRM else LifecycleState.INVALID


def variant_name(annotation: Annotation) -> str:
    return type(annotation).__name__.lower()


# --------------------------------------------------------------------------
# JSON wire format
#
# One canonical dict shape per variant, shared by the event log, the dataset
# snapshot and the HTTP API.

def scalar_to_jsonable(value: Scalar | None) -> dict | None:
    if value is None:
        return None
    if value.kind is ValueKind.NUMERIC:
        out: dict = {"kind": "numeric", "value": value.number}
        if value.unit is not None:
            out["unit"] = value.unit
        return out
    return {"kind": "categorical", "value": value.text}


def scalar_from_jsonable(data: dict | None) -> Scalar | None:
    if data is None:
        return None
    if data.get("kind") == "numeric":
        return Scalar.numeric(float(data["value"]), data.get("unit"))
    if data.get("kind") == "categorical":
        return Scalar.categorical(str(data["value"]))
    raise InvalidAnnotation(f"unknown scalar kind {data.get('kind')!r}")


def cell_to_jsonable(cell: CellKey) -> dict:
    return {
        "entity": cell.entity_id,
        "dimension": cell.dimension,
        "observed_at": format_timestamp(cell.observed_at),
    }


def cell_from_jsonable(data: dict) -> CellKey:
    return CellKey(
        entity_id=str(data["entity"]),
        dimension=str(data["dimension"]),
        observed_at=parse_timestamp(str(data["observed_at"])),
    )


def source_value_to_jsonable(sv: SourceValue) -> dict:
    return {
        "cell": cell_to_jsonable(sv.cell),
        "value": scalar_to_jsonable(sv.value),
        "source": sv.source,
        "recorded_at": format_timestamp(sv.recorded_at),
        "reliability": sv.reliability.value,
    }


def source_value_from_jsonable(data: dict) -> SourceValue:
    return SourceValue(
        cell=cell_from_jsonable(data["cell"]),
        value=_require_scalar(data["value"]),
        source=str(data["source"]),
        recorded_at=parse_timestamp(str(data["recorded_at"])),
        reliability=Reliability(data["reliability"]),
    )


def fused_cell_to_jsonable(fused: FusedCell) -> dict:
    return {
        "cell": cell_to_jsonable(fused.cell),
        "chosen": scalar_to_jsonable(fused.chosen),
        "status": fused.status.value,
        "contributing": [source_value_to_jsonable(sv) for sv in fused.contributing],
    }


def fused_cell_from_jsonable(data: dict) -> FusedCell:
    return FusedCell(
        cell=cell_from_jsonable(data["cell"]),
        chosen=scalar_from_jsonable(data["chosen"]),
        status=RedundancyStatus(data["status"]),
        contributing=tuple(
            source_value_from_jsonable(sv) for sv in data["contributing"]
        ),
    )


def scope_to_jsonable(scope: EditScope) -> dict:
    if isinstance(scope, SingleCell):
        return {"kind": "single_cell", "cell": cell_to_jsonable(scope.cell)}
    if isinstance(scope, DimensionRange):
        return {
            "kind": "dimension_range",
            "entity": scope.entity_id,
            "dimension": scope.dimension,
            "start": format_timestamp(scope.start),
            "end": format_timestamp(scope.end),
        }
    return {"kind": "entity_wide", "entity": scope.entity_id}


def scope_from_jsonable(data: dict) -> EditScope:
    kind = data.get("kind")
    if kind == "single_cell":
        return SingleCell(cell=cell_from_jsonable(data["cell"]))
    if kind == "dimension_range":
        return DimensionRange(
            entity_id=str(data["entity"]),
            dimension=str(data["dimension"]),
            start=parse_timestamp(str(data["start"])),
            end=parse_timestamp(str(data["end"])),
        )
    if kind == "entity_wide":
        return EntityWide(entity_id=str(data["entity"]))
    raise InvalidAnnotation(f"unknown scope kind {kind!r}")


def annotation_to_jsonable(annotation: Annotation) -> dict:
    if isinstance(annotation, Provenance):
        return {
            "variant": "provenance",
            "id": annotation.annotation_id,
            "cell": cell_to_jsonable(annotation.cell),
            "status": annotation.status.value,
            "sources": [
                {
                    "source": rec.source,
                    "value": scalar_to_jsonable(rec.value),
                    "recorded_at": format_timestamp(rec.recorded_at),
                }
                for rec in annotation.sources
            ],
        }
    if isinstance(annotation, Resolution):
        return {
            "variant": "resolution",
            "id": annotation.annotation_id,
            "cell": cell_to_jsonable(annotation.cell),
            "chosen_source": annotation.chosen_source,
            "hierarchy": {
                "dimension": annotation.hierarchy.dimension,
                "priority": list(annotation.hierarchy.priority),
            },
            "rule_text": annotation.rule_text,
        }
    if isinstance(annotation, Edit):
        return {
            "variant": "edit",
            "id": annotation.annotation_id,
            "scope": scope_to_jsonable(annotation.scope),
            "changes": [
                {
                    "cell": cell_to_jsonable(ch.cell),
                    "old": scalar_to_jsonable(ch.old),
                    "new": scalar_to_jsonable(ch.new),
                }
                for ch in annotation.changes
            ],
            "author": annotation.author,
            "rationale": annotation.rationale,
            "rule_set": annotation.rule_set,
            "created_at": format_timestamp(annotation.created_at),
        }
    if isinstance(annotation, Finding):
        return {
            "variant": "finding",
            "id": annotation.annotation_id,
            "text": annotation.text,
            "snapshot_ref": annotation.snapshot_ref,
            "data_refs": [
                {"cell": cell_to_jsonable(ref.cell), "fingerprint": ref.fingerprint}
                for ref in annotation.data_refs
            ],
            "author": annotation.author,
            "created_at": format_timestamp(annotation.created_at),
        }
    if isinstance(annotation, Comment):
        return {
            "variant": "comment",
            "id": annotation.annotation_id,
            "target": annotation.target,
            "text": annotation.text,
            "author": annotation.author,
            "created_at": format_timestamp(annotation.created_at),
        }
    if isinstance(annotation, Vote):
        return {
            "variant": "vote",
            "id": annotation.annotation_id,
            "target": annotation.target,
            "verdict": annotation.verdict.value,
            "author": annotation.author,
            "created_at": format_timestamp(annotation.created_at),
        }
    raise InvalidAnnotation(f"unknown annotation type {type(annotation).__name__}")


def annotation_from_jsonable(data: dict) -> Annotation:
    variant = data.get("variant")
    if variant == "provenance":
        return Provenance(
            annotation_id=str(data["id"]),
            cell=cell_from_jsonable(data["cell"]),
            status=RedundancyStatus(data["status"]),
            sources=tuple(
                SourceRecord(
                    source=str(rec["source"]),
                    value=_require_scalar(rec["value"]),
                    recorded_at=parse_timestamp(str(rec["recorded_at"])),
                )
                for rec in data["sources"]
            ),
        )
    if variant == "resolution":
        return Resolution(
            annotation_id=str(data["id"]),
            cell=cell_from_jsonable(data["cell"]),
            chosen_source=str(data["chosen_source"]),
            hierarchy=SourceHierarchy(
                dimension=str(data["hierarchy"]["dimension"]),
                priority=tuple(str(s) for s in data["hierarchy"]["priority"]),
            ),
            rule_text=str(data["rule_text"]),
        )
    if variant == "edit":
        return Edit(
            annotation_id=str(data["id"]),
            scope=scope_from_jsonable(data["scope"]),
            changes=tuple(
                CellChange(
                    cell=cell_from_jsonable(ch["cell"]),
                    old=scalar_from_jsonable(ch["old"]),
                    new=_require_scalar(ch["new"]),
                )
                for ch in data["changes"]
            ),
            author=str(data["author"]),
            rationale=str(data["rationale"]),
            rule_set=None if data["rule_set"] is None else str(data["rule_set"]),
            created_at=parse_timestamp(str(data["created_at"])),
        )
    if variant == "finding":
        return Finding(
            annotation_id=str(data["id"]),
            text=str(data["text"]),
            snapshot_ref=str(data["snapshot_ref"]),
            data_refs=tuple(
                DataRef(
                    cell=cell_from_jsonable(ref["cell"]),
                    fingerprint=str(ref["fingerprint"]),
                )
                for ref in data["data_refs"]
            ),
            author=str(data["author"]),
            created_at=parse_timestamp(str(data["created_at"])),
        )
    if variant == "comment":
        return Comment(
            annotation_id=str(data["id"]),
            target=str(data["target"]),
            text=str(data["text"]),
            author=str(data["author"]),
            created_at=parse_timestamp(str(data["created_at"])),
        )
    if variant == "vote":
        return Vote(
            annotation_id=str(data["id"]),
            target=str(data["target"]),
            verdict=Verdict(data["verdict"]),
            author=str(data["author"]),
            created_at=parse_timestamp(str(data["created_at"])),
        )
    raise InvalidAnnotation(f"unknown annotation variant {variant!r}")


def _require_scalar(data: dict | None) -> Scalar:
    value = scalar_from_jsonable(data)
    if value is None:
        raise InvalidAnnotation("value must not be null here")
    return value
