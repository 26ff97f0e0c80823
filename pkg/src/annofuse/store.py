"""Event-sourced persistence: an append-only annotation log, dataset
snapshots, content-addressed blob storage, replay, and integrity checks.

Log layout: UTF-8 newline-delimited JSON, one record per line. Seq 0 is a
header record carrying the schema version; events occupy seqs 1..n with no
gaps and are never modified after append. Appends are flushed and fsynced
before returning, so a crash loses at most the record being written.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .cleansing import Dataset
from .exploration import SnapshotBlob, content_address
from .model import (
    Annotation,
    AnnofuseError,
    CellKey,
    Comment,
    Edit,
    Finding,
    FusedCell,
    InvalidAnnotation,
    NotVotable,
    Provenance,
    Resolution,
    UnknownTarget,
    VOTABLE_VARIANTS,
    Vote,
    annotation_from_jsonable,
    annotation_to_jsonable,
    cell_to_jsonable,
    fused_cell_from_jsonable,
    fused_cell_to_jsonable,
    scalar_to_jsonable,
    format_timestamp,
    now_utc,
    parse_timestamp,
)

SCHEMA_VERSION = 1


class LogCorruption(AnnofuseError):
    """The log file violates its structural contract; seq is the first bad record."""

    def __init__(self, seq: int | None, message: str):
        self.seq = seq
        super().__init__(f"seq {seq}: {message}" if seq is not None else message)


@dataclass(frozen=True)
class AnnotationEvent:
    """One appended annotation with its position and wall-clock time."""

    seq: int
    wall_time: datetime
    payload: Annotation


class StepFilter(str, Enum):
    PREPROCESSING = "preprocessing"
    CLEANSING = "cleansing"
    EXPLORATION = "exploration"


def step_of(annotation: Annotation, variant_of: Mapping[str, type]) -> StepFilter:
    """Workflow step an annotation belongs to.

    Provenance and resolution records are made during preprocessing; edits
    and their votes during cleansing; findings, comments, and finding votes
    during exploration. Votes classify by their target's variant, looked up
    in variant_of (annotation id to type).
    """
    if isinstance(annotation, (Provenance, Resolution)):
        return StepFilter.PREPROCESSING
    if isinstance(annotation, Edit):
        return StepFilter.CLEANSING
    if isinstance(annotation, (Finding, Comment)):
        return StepFilter.EXPLORATION
    assert isinstance(annotation, Vote)
    target_type = variant_of.get(annotation.target)
    if target_type is None:
        raise UnknownTarget(f"vote target {annotation.target!r} not in log")
    return StepFilter.CLEANSING if target_type is Edit else StepFilter.EXPLORATION


# --------------------------------------------------------------------------
# record serialization

def _header_record(created_at: datetime) -> dict:
    return {
        "seq": 0,
        "kind": "header",
        "schema_version": SCHEMA_VERSION,
        "created_at": format_timestamp(created_at),
    }


def _event_record(event: AnnotationEvent) -> dict:
    return {
        "seq": event.seq,
        "kind": "event",
        "wall_time": format_timestamp(event.wall_time),
        "annotation": annotation_to_jsonable(event.payload),
    }


def _encode(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# annotation log

class AnnotationLog:
    """Append-only, totally ordered annotation log backed by one NDJSON file.

    Single writer: appends are serialized by an internal lock. Readers of
    the in-memory views always see a consistent prefix because indexes are
    updated only after the record is durable.
    """

    def __init__(self, path: Path | str, clock: Callable[[], datetime] = now_utc):
        self.path = Path(path)
        self._clock = clock
        self._lock = threading.Lock()
        self._events: list[AnnotationEvent] = []
        self._by_id: dict[str, Annotation] = {}
        if self.path.exists() and self.path.stat().st_size > 0:
            self._load()
            self._handle = self.path.open("a", encoding="utf-8")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("a", encoding="utf-8")
            self._write(_encode(_header_record(self._clock())))

    def _load(self) -> None:
        with self.path.open("r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        records = []
        for i, line in enumerate(lines):
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise LogCorruption(i, f"malformed record: {exc}") from exc
        if not records or records[0].get("kind") != "header":
            raise LogCorruption(0, "missing header record")
        if records[0].get("schema_version") != SCHEMA_VERSION:
            raise LogCorruption(
                0, f"unsupported schema version {records[0].get('schema_version')!r}"
            )
        for expected, record in enumerate(records[1:], start=1):
            seq = record.get("seq")
            if seq != expected:
                raise LogCorruption(expected, f"sequence gap: found seq {seq!r}")
            if record.get("kind") != "event":
                raise LogCorruption(expected, f"unexpected record kind {record.get('kind')!r}")
            try:
                annotation = annotation_from_jsonable(record["annotation"])
                wall_time = parse_timestamp(record["wall_time"])
            except (KeyError, InvalidAnnotation, ValueError) as exc:
                raise LogCorruption(expected, f"bad event payload: {exc}") from exc
            self._validate(annotation, seq=expected)
            self._index(AnnotationEvent(seq=expected, wall_time=wall_time, payload=annotation))

    def _validate(self, annotation: Annotation, seq: int | None = None) -> None:
        """Check uniqueness and referential integrity against the current log.

        During load (seq given) failures are corruption; during append they
        are caller errors.
        """
        def reject(message: str, error: type[AnnofuseError]) -> None:
            if seq is not None:
                raise LogCorruption(seq, message)
            raise error(message)

        if annotation.annotation_id in self._by_id:
            reject(f"duplicate annotation id {annotation.annotation_id!r}", InvalidAnnotation)
        if isinstance(annotation, Vote):
            target = self._by_id.get(annotation.target)
            if target is None:
                reject(f"vote targets unknown annotation {annotation.target!r}", UnknownTarget)
            elif not isinstance(target, VOTABLE_VARIANTS):
                reject(f"vote targets non-votable annotation {annotation.target!r}", NotVotable)
        elif isinstance(annotation, Comment):
            if annotation.target not in self._by_id:
                reject(f"comment targets unknown annotation {annotation.target!r}", UnknownTarget)

    def _index(self, event: AnnotationEvent) -> None:
        self._events.append(event)
        self._by_id[event.payload.annotation_id] = event.payload

    def _write(self, line: str) -> None:
        self._handle.write(line)
        self._handle.flush()
        os.fsync(self._handle.fileno())

    # -- public API ---------------------------------------------------------

    def append(self, annotation: Annotation) -> int:
        """Durably append one annotation; returns its seq.

        Rejects duplicate ids, dangling targets, and votes on non-votable
        targets, leaving the log untouched.
        """
        with self._lock:
            self._validate(annotation)
            event = AnnotationEvent(
                seq=len(self._events) + 1,
                wall_time=self._clock(),
                payload=annotation,
            )
            self._write(_encode(_event_record(event)))
            self._index(event)
            return event.seq

    def events(self) -> list[AnnotationEvent]:
        return list(self._events)

    def annotations(self) -> list[Annotation]:
        return [e.payload for e in self._events]

    def by_id(self) -> dict[str, Annotation]:
        return dict(self._by_id)

    def next_id(self, prefix: str = "a") -> str:
        """Smallest unused id of the form <prefix><n>; ids never repeat."""
        n = len(self._events) + 1
        while f"{prefix}{n}" in self._by_id:
            n += 1
        return f"{prefix}{n}"

    def __len__(self) -> int:
        return len(self._events)

    def close(self) -> None:
        self._handle.close()

    # -- queries ------------------------------------------------------------

    def variant_index(self) -> dict[str, type]:
        return {aid: type(a) for aid, a in self._by_id.items()}

    def referenced_cells(self, annotation: Annotation) -> frozenset[CellKey]:
        """Cells an annotation is about, following comment and vote targets."""
        if isinstance(annotation, (Provenance, Resolution)):
            return frozenset((annotation.cell,))
        if isinstance(annotation, Edit):
            return frozenset(change.cell for change in annotation.changes)
        if isinstance(annotation, Finding):
            return frozenset(ref.cell for ref in annotation.data_refs)
        target = self._by_id.get(annotation.target)
        if target is None:
            return frozenset()
        return self.referenced_cells(target)

    def query(
        self,
        step: StepFilter | None = None,
        entity_id: str | None = None,
        dimension: str | None = None,
        observed_from: datetime | None = None,
        observed_to: datetime | None = None,
    ) -> list[AnnotationEvent]:
        """Events matching the step and cell predicates, ascending seq.

        Cell predicates match if any referenced cell satisfies all of them;
        comments and votes inherit their target's cells.
        """
        variant_of = self.variant_index()
        out = []
        for event in self._events:
            if step is not None and step_of(event.payload, variant_of) is not step:
                continue
            if entity_id or dimension or observed_from or observed_to:
                cells = self.referenced_cells(event.payload)
                if not any(
                    (entity_id is None or c.entity_id == entity_id)
                    and (dimension is None or c.dimension == dimension)
                    and (observed_from is None or c.observed_at >= observed_from)
                    and (observed_to is None or c.observed_at <= observed_to)
                    for c in cells
                ):
                    continue
            out.append(event)
        return out


# --------------------------------------------------------------------------
# replay

class ReplayError(AnnofuseError):
    """An edit event could not be applied; seq names the offending event."""

    def __init__(self, seq: int, message: str):
        self.seq = seq
        super().__init__(f"seq {seq}: {message}")


def replay(base: Dataset, events: Iterable[AnnotationEvent]) -> Dataset:
    """Rebuild the current dataset from the fused base and the event log.

    Only edit events touch data; everything else is a no-op here. An edit
    change whose old value claims an existing cell that the dataset does not
    know halts the replay, naming the seq.
    """
    dataset = base.copy()
    for event in events:
        annotation = event.payload
        if not isinstance(annotation, Edit):
            continue
        for change in annotation.changes:
            if change.old is not None and change.cell not in dataset:
                raise ReplayError(
                    event.seq,
                    f"edit {annotation.annotation_id!r} rewrites unknown cell {change.cell}",
                )
            dataset.set(change.cell, change.new)
    return dataset


# --------------------------------------------------------------------------
# dataset snapshots

def write_snapshot(
    path: Path | str,
    cells: Mapping[CellKey, FusedCell],
    created_at: datetime | None = None,
) -> None:
    """Dump the fused dataset, one cell record per line, sorted by key."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(_encode(_header_record(created_at or now_utc())))
        for seq, key in enumerate(sorted(cells), start=1):
            fh.write(_encode({
                "seq": seq,
                "kind": "cell",
                "cell": fused_cell_to_jsonable(cells[key]),
            }))
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(p)


def write_values_dump(
    path: Path | str,
    dataset: Dataset,
    created_at: datetime | None = None,
) -> None:
    """Export the current (post-edit) cell values, one record per line."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        fh.write(_encode(_header_record(created_at or now_utc())))
        for seq, (key, value) in enumerate(sorted(dataset.items()), start=1):
            fh.write(_encode({
                "seq": seq,
                "kind": "value",
                "cell": cell_to_jsonable(key),
                "value": scalar_to_jsonable(value),
            }))
        fh.flush()
        os.fsync(fh.fileno())


def read_snapshot(path: Path | str) -> dict[CellKey, FusedCell]:
    p = Path(path)
    cells: dict[CellKey, FusedCell] = {}
    with p.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for i, line in enumerate(lines):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogCorruption(i, f"malformed snapshot record: {exc}") from exc
        if i == 0:
            if record.get("kind") != "header":
                raise LogCorruption(0, "snapshot missing header record")
            if record.get("schema_version") != SCHEMA_VERSION:
                raise LogCorruption(0, "unsupported snapshot schema version")
            continue
        if record.get("kind") != "cell":
            raise LogCorruption(i, f"unexpected snapshot record kind {record.get('kind')!r}")
        fused = fused_cell_from_jsonable(record["cell"])
        cells[fused.cell] = fused
    return cells


# --------------------------------------------------------------------------
# blob store

class BlobStore:
    """Content-addressed snapshot-image storage: one file per blob, named by
    the payload digest, with a JSON sidecar for media type and timestamp."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _payload_path(self, blob_id: str) -> Path:
        return self.root / blob_id

    def put(self, blob: SnapshotBlob) -> str:
        path = self._payload_path(blob.blob_id)
        if path.exists():  # same digest, same bytes; nothing to do
            return blob.blob_id
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(blob.payload)
        tmp.replace(path)
        meta = {
            "media_type": blob.media_type,
            "created_at": format_timestamp(blob.created_at),
        }
        path.with_suffix(".meta.json").write_text(
            json.dumps(meta, sort_keys=True), encoding="utf-8"
        )
        return blob.blob_id

    def get(self, blob_id: str) -> SnapshotBlob:
        path = self._payload_path(blob_id)
        if not path.is_file():
            raise UnknownTarget(f"no blob {blob_id!r}")
        payload = path.read_bytes()
        if content_address(payload) != blob_id:
            raise LogCorruption(None, f"blob {blob_id!r} payload does not match its digest")
        meta_path = path.with_suffix(".meta.json")
        media_type, created_at = "image/png", now_utc()
        if meta_path.is_file():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            media_type = meta.get("media_type", media_type)
            if "created_at" in meta:
                created_at = parse_timestamp(meta["created_at"])
        return SnapshotBlob(
            blob_id=blob_id, media_type=media_type, payload=payload, created_at=created_at
        )

    def exists(self, blob_id: str) -> bool:
        return self._payload_path(blob_id).is_file()


# --------------------------------------------------------------------------
# integrity verification

@dataclass(frozen=True)
class LogProblem:
    seq: int | None
    message: str


def verify_log(
    path: Path | str,
    snapshot_path: Path | str | None = None,
) -> list[LogProblem]:
    """Scan a log file for structural damage, reporting every problem found.

    Checks: parseable records, header presence and version, gap-free seqs,
    unique ids, referential integrity, vote targets votable. When a snapshot
    is given, additionally replays all edits against it.
    """
    p = Path(path)
    problems: list[LogProblem] = []
    if not p.is_file():
        return [LogProblem(None, f"log file not found: {p}")]
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines:
        return [LogProblem(0, "empty log: missing header record")]

    records: list[tuple[int, dict | None]] = []
    for i, line in enumerate(lines):
        try:
            records.append((i, json.loads(line)))
        except json.JSONDecodeError:
            problems.append(LogProblem(i, "malformed record (invalid JSON)"))
            records.append((i, None))

    first = records[0][1]
    if first is None or first.get("kind") != "header":
        problems.append(LogProblem(0, "missing header record"))
    elif first.get("schema_version") != SCHEMA_VERSION:
        problems.append(LogProblem(0, f"unsupported schema version {first.get('schema_version')!r}"))

    by_id: dict[str, Annotation] = {}
    events: list[AnnotationEvent] = []
    expected = 1
    for i, record in records[1:]:
        if record is None:
            expected += 1
            continue
        seq = record.get("seq")
        if seq != expected:
            problems.append(LogProblem(expected, f"sequence gap: found seq {seq!r}"))
            if not isinstance(seq, int) or seq < expected:
                expected += 1
                continue
            expected = seq  # resync so later checks still run
        if record.get("kind") != "event":
            problems.append(LogProblem(expected, f"unexpected record kind {record.get('kind')!r}"))
            expected += 1
            continue
        try:
            annotation = annotation_from_jsonable(record["annotation"])
            wall_time = parse_timestamp(record["wall_time"])
        except (KeyError, InvalidAnnotation, ValueError) as exc:
            problems.append(LogProblem(expected, f"bad event payload: {exc}"))
            expected += 1
            continue
        if annotation.annotation_id in by_id:
            problems.append(LogProblem(expected, f"duplicate annotation id {annotation.annotation_id!r}"))
        if isinstance(annotation, Vote):
            target = by_id.get(annotation.target)
            if target is None:
                problems.append(LogProblem(expected, f"vote targets unknown annotation {annotation.target!r}"))
            elif not isinstance(target, VOTABLE_VARIANTS):
                problems.append(LogProblem(expected, f"vote targets non-votable annotation {annotation.target!r}"))
        elif isinstance(annotation, Comment) and annotation.target not in by_id:
            problems.append(LogProblem(expected, f"comment targets unknown annotation {annotation.target!r}"))
        by_id[annotation.annotation_id] = annotation
        events.append(AnnotationEvent(seq=expected, wall_time=wall_time, payload=annotation))
        expected += 1

    if snapshot_path is not None and Path(snapshot_path).is_file():
        try:
            base = Dataset.from_fused_cells(read_snapshot(snapshot_path))
            replay(base, events)
        except (LogCorruption, ReplayError, AnnofuseError) as exc:
            seq = getattr(exc, "seq", None)
            problems.append(LogProblem(seq, f"replay failed: {exc}"))

    return problems
