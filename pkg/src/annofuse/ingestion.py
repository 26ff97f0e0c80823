"""Per-source CSV parsing into SourceValue streams, plus hierarchy config.

Input files are delimiter-separated text with a header row (UTF-8). A source
descriptor maps columns to cell-key fields, declares each dimension's
reliability class and value kind, and optionally tags units. Both long format
(entity, dimension, value, timestamp) and wide format (one column per
dimension) are accepted.

Malformed rows are skipped with warnings rather than aborting the run: real
exports are dirty, and the cleansing step exists to handle the gaps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

from .model import (
    AnnofuseError,
    CellKey,
    Reliability,
    Scalar,
    SourceHierarchy,
    SourceValue,
    ValueKind,
    parse_timestamp,
)


class ConfigError(AnnofuseError):
    """A descriptor or config file is structurally invalid."""


class SourceFormatError(AnnofuseError):
    """A source file is missing or its header does not match the descriptor."""


@dataclass(frozen=True)
class SourceDescriptor:
    """How to read one source file and what its dimensions mean."""

    source_name: str
    path: Path
    format: str  # "long" or "wide"
    entity_column: str
    timestamp_column: str
    reliability: Mapping[str, Reliability]
    dimension_column: str | None = None  # long format
    value_column: str | None = None  # long format
    value_columns: Mapping[str, str] = field(default_factory=dict)  # wide: dim -> col
    kinds: Mapping[str, ValueKind] = field(default_factory=dict)  # default numeric
    units: Mapping[str, str] = field(default_factory=dict)
    recorded_column: str | None = None  # per-row recording time; observed_at otherwise

    def __post_init__(self) -> None:
        if not self.source_name:
            raise ConfigError("source_name must be non-empty")
        if self.format not in ("long", "wide"):
            raise ConfigError(f"unknown source format {self.format!r}")
        if self.format == "long" and not (self.dimension_column and self.value_column):
            raise ConfigError("long format needs dimension_column and value_column")
        if self.format == "wide" and not self.value_columns:
            raise ConfigError("wide format needs value_columns")
        if not self.reliability:
            raise ConfigError(f"source {self.source_name!r} declares no dimensions")
        declared = set(self.reliability)
        for name, mapping in (("kinds", self.kinds), ("units", self.units),
                              ("value_columns", self.value_columns)):
            extra = set(mapping) - declared
            if extra:
                raise ConfigError(
                    f"source {self.source_name!r}: {name} mention dimensions without "
                    f"a reliability class: {sorted(extra)}"
                )

    def kind_of(self, dimension: str) -> ValueKind:
        return self.kinds.get(dimension, ValueKind.NUMERIC)

    def unit_of(self, dimension: str) -> str | None:
        return self.units.get(dimension)


@dataclass(frozen=True)
class IngestWarning:
    """One skipped candidate cell, with coordinates for the offending entry."""

    source: str
    row: int  # 1-based data row index, header excluded
    column: str
    kind: str  # "empty" | "unparseable" | "undeclared"
    message: str


def parse_source(descriptor: SourceDescriptor) -> tuple[list[SourceValue], list[IngestWarning]]:
    """Read one source file into SourceValues, one per non-empty cell.

    Every candidate cell (one per row in long format, one per declared value
    column per row in wide format) ends up either as a SourceValue or as
    exactly one warning, so the accounting always balances. Empty cells are
    skipped with an "empty" warning; incompleteness surfaces later as missing
    cells during cleansing.
    """
    path = Path(descriptor.path)
    if not path.is_file():
        raise SourceFormatError(f"source {descriptor.source_name!r}: file not found: {path}")
    with path.open("r", encoding="utf-8", newline="") as handle:
        return _parse_stream(descriptor, handle)


def _parse_stream(
    descriptor: SourceDescriptor, handle: IO[str]
) -> tuple[list[SourceValue], list[IngestWarning]]:
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise SourceFormatError(
            f"source {descriptor.source_name!r}: file is empty, header row expected"
        ) from None

    columns = {name: idx for idx, name in enumerate(header)}
    needed = [descriptor.entity_column, descriptor.timestamp_column]
    if descriptor.format == "long":
        needed += [descriptor.dimension_column, descriptor.value_column]
    else:
        needed += list(descriptor.value_columns.values())
    if descriptor.recorded_column:
        needed.append(descriptor.recorded_column)
    missing = [name for name in needed if name not in columns]
    if missing:
        raise SourceFormatError(
            f"source {descriptor.source_name!r}: header misses columns {missing}"
        )

    values: list[SourceValue] = []
    warnings: list[IngestWarning] = []
    if descriptor.format == "long":
        cell_columns = [(None, descriptor.value_column or "")]
    else:
        cell_columns = list(descriptor.value_columns.items())

    for row_idx, row in enumerate(reader, start=1):
        def warn(column: str, kind: str, message: str, *, per_cell: bool = False) -> None:
            # row-level failures still account one warning per candidate cell
            count = len(cell_columns) if not per_cell else 1
            for _ in range(count):
                warnings.append(IngestWarning(descriptor.source_name, row_idx, column, kind, message))

        if len(row) != len(header):
            warn("*", "unparseable", f"expected {len(header)} fields, got {len(row)}")
            continue

        entity = row[columns[descriptor.entity_column]].strip()
        if not entity:
            warn(descriptor.entity_column, "unparseable", "empty entity id")
            continue
        try:
            observed_at = parse_timestamp(row[columns[descriptor.timestamp_column]])
        except ValueError:
            warn(descriptor.timestamp_column, "unparseable",
                 f"unparseable timestamp {row[columns[descriptor.timestamp_column]]!r}")
            continue
        recorded_at = observed_at
        if descriptor.recorded_column:
            try:
                recorded_at = parse_timestamp(row[columns[descriptor.recorded_column]])
            except ValueError:
                warn(descriptor.recorded_column, "unparseable",
                     f"unparseable timestamp {row[columns[descriptor.recorded_column]]!r}")
                continue

        for dimension, value_col in cell_columns:
            if descriptor.format == "long":
                dimension = row[columns[descriptor.dimension_column or ""]].strip()
            column_label = value_col
            raw = row[columns[column_label]].strip()

            if not dimension:
                warnings.append(IngestWarning(
                    descriptor.source_name, row_idx,
                    descriptor.dimension_column or column_label,
                    "unparseable", "empty dimension name"))
                continue
            if dimension not in descriptor.reliability:
                warnings.append(IngestWarning(
                    descriptor.source_name, row_idx, column_label, "undeclared",
                    f"dimension {dimension!r} has no declared reliability class"))
                continue
            if not raw:
                warnings.append(IngestWarning(
                    descriptor.source_name, row_idx, column_label, "empty",
                    f"empty value for dimension {dimension!r}"))
                continue

            scalar = _parse_value(descriptor, dimension, raw)
            if scalar is None:
                warnings.append(IngestWarning(
                    descriptor.source_name, row_idx, column_label, "unparseable",
                    f"unparseable numeric value {raw!r} for dimension {dimension!r}"))
                continue

            values.append(SourceValue(
                cell=CellKey(entity_id=entity, dimension=dimension, observed_at=observed_at),
                value=scalar,
                source=descriptor.source_name,
                recorded_at=recorded_at,
                reliability=descriptor.reliability[dimension],
            ))

    return values, warnings


def _parse_value(descriptor: SourceDescriptor, dimension: str, raw: str) -> Scalar | None:
    if descriptor.kind_of(dimension) is ValueKind.NUMERIC:
        try:
            number = float(raw)
        except ValueError:
            return None
        if number != number or number in (float("inf"), float("-inf")):
            return None
        return Scalar.numeric(number, descriptor.unit_of(dimension))
    return Scalar.categorical(raw)


def parse_sources(
    descriptors: Iterable[SourceDescriptor],
) -> tuple[list[SourceValue], list[IngestWarning]]:
    """Parse several sources and merge deterministically by source name.

    Sources are independent; each could parse in parallel. Names must be
    unique within a run.
    """
    ordered = sorted(descriptors, key=lambda d: d.source_name)
    names = [d.source_name for d in ordered]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate source names in run: {names}")
    all_values: list[SourceValue] = []
    all_warnings: list[IngestWarning] = []
    for descriptor in ordered:
        values, warnings = parse_source(descriptor)
        all_values.extend(values)
        all_warnings.extend(warnings)
    return all_values, all_warnings


# --------------------------------------------------------------------------
# hierarchy config
#
# A JSON object mapping dimension -> ordered source list (highest priority
# first). Dimensions absent from the config have no hierarchy, which disables
# auto-resolution for them.

def load_hierarchies(stream: IO[str] | str) -> list[SourceHierarchy]:
    text = stream if isinstance(stream, str) else stream.read()

    def reject_duplicates(pairs: list[tuple[str, object]]) -> dict:
        seen = set()
        for key, _ in pairs:
            if key in seen:
                raise ConfigError(f"dimension {key!r} listed twice in hierarchy config")
            seen.add(key)
        return dict(pairs)

    try:
        data = json.loads(text, object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"hierarchy config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("hierarchy config must be a JSON object")

    hierarchies = []
    for dimension, priority in data.items():
        if not isinstance(priority, list) or not all(isinstance(s, str) for s in priority):
            raise ConfigError(f"hierarchy for {dimension!r} must be a list of source names")
        if len(set(priority)) != len(priority):
            raise ConfigError(f"duplicate source in hierarchy for {dimension!r}")
        if not priority:
            raise ConfigError(f"hierarchy for {dimension!r} must not be empty")
        hierarchies.append(SourceHierarchy(dimension=dimension, priority=tuple(priority)))
    return hierarchies


def load_hierarchies_file(path: Path | str) -> list[SourceHierarchy]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"hierarchy config not found: {p}")
    return load_hierarchies(p.read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# sources manifest
#
# The CLI and the upload endpoint describe sources with a JSON manifest:
# {"tolerance": {"default": 1e-9, "per_dimension": {...}},
#  "sources": [{"name": ..., "path": ..., "format": "long"|"wide", ...}]}
# Relative CSV paths resolve against the manifest's directory.

def descriptor_from_jsonable(data: Mapping, base_dir: Path | None = None) -> SourceDescriptor:
    try:
        name = str(data["name"])
        raw_path = Path(str(data["path"]))
        fmt = str(data.get("format", "long"))
        reliability = {
            str(dim): Reliability(str(cls).lower())
            for dim, cls in dict(data["reliability"]).items()
        }
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad source descriptor: {exc}") from exc
    if base_dir is not None and not raw_path.is_absolute():
        raw_path = base_dir / raw_path
    kinds = {
        str(dim): ValueKind(str(kind).lower())
        for dim, kind in dict(data.get("kinds", {})).items()
    }
    return SourceDescriptor(
        source_name=name,
        path=raw_path,
        format=fmt,
        entity_column=str(data.get("entity_column", "entity")),
        timestamp_column=str(data.get("timestamp_column", "observed_at")),
        dimension_column=data.get("dimension_column"),
        value_column=data.get("value_column"),
        value_columns={str(k): str(v) for k, v in dict(data.get("value_columns", {})).items()},
        reliability=reliability,
        kinds=kinds,
        units={str(k): str(v) for k, v in dict(data.get("units", {})).items()},
        recorded_column=data.get("recorded_column"),
    )


def descriptor_to_jsonable(descriptor: SourceDescriptor, base_dir: Path | None = None) -> dict:
    """Inverse of descriptor_from_jsonable; path is relativized when possible."""
    path = descriptor.path
    if base_dir is not None:
        try:
            path = path.relative_to(base_dir)
        except ValueError:
            pass
    data: dict = {
        "name": descriptor.source_name,
        "path": str(path),
        "format": descriptor.format,
        "entity_column": descriptor.entity_column,
        "timestamp_column": descriptor.timestamp_column,
        "reliability": {d: r.value for d, r in sorted(descriptor.reliability.items())},
    }
    if descriptor.dimension_column is not None:
        data["dimension_column"] = descriptor.dimension_column
    if descriptor.value_column is not None:
        data["value_column"] = descriptor.value_column
    if descriptor.value_columns:
        data["value_columns"] = dict(sorted(descriptor.value_columns.items()))
    if descriptor.kinds:
        data["kinds"] = {d: k.value for d, k in sorted(descriptor.kinds.items())}
    if descriptor.units:
        data["units"] = dict(sorted(descriptor.units.items()))
    if descriptor.recorded_column is not None:
        data["recorded_column"] = descriptor.recorded_column
    return data


def load_manifest(path: Path | str) -> tuple[list[SourceDescriptor], dict]:
    """Read a sources manifest; returns descriptors plus the tolerance section."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"sources manifest not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sources manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "sources" not in data:
        raise ConfigError("sources manifest must be an object with a 'sources' list")
    descriptors = [descriptor_from_jsonable(entry, base_dir=p.parent) for entry in data["sources"]]
    tolerance = data.get("tolerance", {})
    if not isinstance(tolerance, dict):
        raise ConfigError("'tolerance' must be an object")
    return descriptors, tolerance
