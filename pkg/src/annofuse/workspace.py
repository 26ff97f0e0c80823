"""One data directory holding everything a fusion workspace needs: the
annotation log, the fused-dataset snapshot, uploaded sources, snapshot
blobs, and the user registry.

Layout under the data dir:
    events.ndjson     append-only annotation log
    snapshot.ndjson   fused dataset dump (replay base), written by fuse
    sources/          uploaded CSVs plus their descriptor JSONs
    blobs/            content-addressed snapshot images
    users.json        static user registry
    service.lock      present while a service owns the directory
"""

from __future__ import annotations

import json
import os
from datetime import datetime
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .cleansing import (
    CorrectionRule,
    Dataset,
    EditRequest,
    apply_edit,
    apply_rule_edit,
)
from .exploration import (
    AnnotationView,
    SnapshotBlob,
    annotation_feed,
    cast_vote,
    new_comment,
    record_finding,
    separate,
    states,
)
from .fusion import FusionResult, ToleranceConfig, fuse
from .ingestion import (
    ConfigError,
    SourceDescriptor,
    descriptor_from_jsonable,
    descriptor_to_jsonable,
    parse_sources,
)
from .model import (
    Annotation,
    AnnofuseError,
    CellKey,
    Comment,
    Edit,
    Finding,
    FusedCell,
    IdAllocator,
    LifecycleState,
    Qualification,
    SourceHierarchy,
    UnknownTarget,
    User,
    Verdict,
    Vote,
    now_utc,
)
from .store import (
    AnnotationEvent,
    AnnotationLog,
    BlobStore,
    StepFilter,
    read_snapshot,
    replay,
    write_snapshot,
)

LOG_NAME = "events.ndjson"
SNAPSHOT_NAME = "snapshot.ndjson"
SOURCES_DIR = "sources"
BLOBS_DIR = "blobs"
USERS_NAME = "users.json"
LOCK_NAME = "service.lock"


class NotFused(AnnofuseError):
    """The workspace has no fused dataset yet; fuse before editing or exploring."""


class AlreadyFused(AnnofuseError):
    """The workspace is already fused; incremental re-fusion is not supported."""


class ServiceLockHeld(AnnofuseError):
    """Another process owns the data directory."""


class UnknownUser(AnnofuseError):
    """The request names a user id absent from the registry."""


def load_users(path: Path | str) -> dict[str, User]:
    """Read the static user registry: a JSON array of user objects."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"user registry not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"user registry is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError("user registry must be a JSON array of user objects")
    users: dict[str, User] = {}
    for entry in data:
        try:
            user = User(
                user_id=str(entry["user_id"]),
                display_name=str(entry.get("display_name", entry["user_id"])),
                qualification=Qualification(entry["qualification"]),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad user entry {entry!r}: {exc}") from exc
        if user.user_id in users:
            raise ConfigError(f"duplicate user id {user.user_id!r}")
        users[user.user_id] = user
    return users


class Workspace:
    """Owns one data directory: all reads and writes go through here.

    The clock is injectable so that identical request sequences produce
    byte-identical logs in tests.
    """

    def __init__(
        self,
        data_dir: Path | str,
        clock: Callable[[], datetime] = now_utc,
        users: Mapping[str, User] | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self.sources_dir = self.data_dir / SOURCES_DIR
        self.sources_dir.mkdir(exist_ok=True)
        self.blobs = BlobStore(self.data_dir / BLOBS_DIR)
        self.log = AnnotationLog(self.data_dir / LOG_NAME, clock=clock)

        users_path = self.data_dir / USERS_NAME
        if users is not None:
            self.users = dict(users)
        elif users_path.is_file():
            self.users = load_users(users_path)
        else:
            self.users = {}

        self._fused: dict[CellKey, FusedCell] | None = None
        self._dataset: Dataset | None = None
        snapshot_path = self.data_dir / SNAPSHOT_NAME
        if snapshot_path.is_file():
            self._fused = read_snapshot(snapshot_path)
            self._dataset = replay(Dataset.from_fused_cells(self._fused), self.log.events())

    # -- users ---------------------------------------------------------------

    def require_user(self, user_id: str | None) -> User:
        if not user_id or user_id not in self.users:
            raise UnknownUser(f"unknown user id {user_id!r}")
        return self.users[user_id]

    # -- service lock ---------------------------------------------------------

    @property
    def lock_path(self) -> Path:
        return self.data_dir / LOCK_NAME

    def acquire_service_lock(self) -> None:
        if self.lock_path.exists():
            raise ServiceLockHeld(f"service lock present: {self.lock_path}")
        self.lock_path.write_text(
            json.dumps({"pid": os.getpid(), "started_at": self._clock().isoformat()}),
            encoding="utf-8",
        )

    def release_service_lock(self) -> None:
        self.lock_path.unlink(missing_ok=True)

    def refuse_if_locked(self) -> None:
        if self.lock_path.exists():
            raise ServiceLockHeld(
                f"a service owns this data dir (remove {self.lock_path} if stale)"
            )

    # -- sources --------------------------------------------------------------

    def register_source(self, descriptor_data: dict, payload: bytes) -> SourceDescriptor:
        """Persist an uploaded CSV and its descriptor; returns the descriptor."""
        name = str(descriptor_data.get("name", "")).strip()
        if not name or any(ch in name for ch in "/\\"):
            raise ConfigError(f"invalid source name {name!r}")
        csv_path = self.sources_dir / f"{name}.csv"
        if csv_path.exists():
            raise ConfigError(f"source {name!r} already uploaded")
        csv_path.write_bytes(payload)
        data = dict(descriptor_data)
        data["path"] = csv_path.name
        descriptor = descriptor_from_jsonable(data, base_dir=self.sources_dir)
        (self.sources_dir / f"{name}.descriptor.json").write_text(
            json.dumps(descriptor_to_jsonable(descriptor), indent=2, sort_keys=True),
            encoding="utf-8",
        )
        return descriptor

    def registered_sources(self) -> list[SourceDescriptor]:
        descriptors = []
        for path in sorted(self.sources_dir.glob("*.descriptor.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            descriptors.append(descriptor_from_jsonable(data, base_dir=self.sources_dir))
        return descriptors

    # -- fusion ----------------------------------------------------------------

    @property
    def fused(self) -> bool:
        return self._fused is not None

    def require_dataset(self) -> Dataset:
        if self._dataset is None:
            raise NotFused("workspace has no fused dataset yet")
        return self._dataset

    def fused_cells(self) -> dict[CellKey, FusedCell]:
        if self._fused is None:
            raise NotFused("workspace has no fused dataset yet")
        return dict(self._fused)

    def run_fusion(
        self,
        hierarchies: Sequence[SourceHierarchy] = (),
        tolerance: ToleranceConfig | None = None,
        descriptors: Sequence[SourceDescriptor] | None = None,
    ) -> FusionResult:
        """Parse all registered sources, fuse, persist snapshot and events."""
        if self._fused is not None:
            raise AlreadyFused("workspace is already fused")
        if len(self.log) > 0:
            raise AlreadyFused("annotation log is not empty")
        if descriptors is None:
            descriptors = self.registered_sources()
        if not descriptors:
            raise ConfigError("no sources registered")
        values, ingest_warnings = parse_sources(descriptors)
        result = fuse(values, hierarchies, tolerance or ToleranceConfig())
        for annotation in result.annotations:
            self.log.append(annotation)
        write_snapshot(self.data_dir / SNAPSHOT_NAME, result.cells, self._clock())
        self._fused = dict(result.cells)
        self._dataset = Dataset.from_fused_cells(result.cells)
        return FusionResult(
            cells=result.cells,
            annotations=result.annotations,
            unresolved=result.unresolved,
            warnings=tuple(w.message for w in ingest_warnings) + result.warnings,
        )

    # -- id allocation ----------------------------------------------------------

    def _ids(self) -> IdAllocator:
        return IdAllocator(start=len(self.log) + 1)

    # -- cleansing ----------------------------------------------------------------

    def submit_edit(self, request: EditRequest) -> Edit:
        """Apply an edit to the current dataset and append its annotation."""
        self.require_user(request.author)
        dataset = self.require_dataset()
        new_dataset, annotation = apply_edit(
            dataset, request, self._ids(), created_at=self._clock()
        )
        self.log.append(annotation)
        self._dataset = new_dataset
        return annotation

    def apply_correction_rule(self, rule: CorrectionRule, author: str) -> list[Edit]:
        self.require_user(author)
        dataset = self.require_dataset()
        new_dataset, edits = apply_rule_edit(
            dataset, rule, author, self._ids(), created_at=self._clock()
        )
        for annotation in edits:
            self.log.append(annotation)
        self._dataset = new_dataset
        return edits

    # -- exploration ----------------------------------------------------------------

    def submit_finding(
        self,
        text: str,
        payload: bytes,
        visible_cells: Sequence[CellKey],
        author_id: str,
        media_type: str = "image/png",
        allow_empty_refs: bool = False,
    ) -> Finding:
        author = self.require_user(author_id)
        dataset = self.require_dataset()
        blob = SnapshotBlob.from_payload(payload, media_type, created_at=self._clock())
        self.blobs.put(blob)
        annotation = record_finding(
            dataset,
            text,
            blob,
            visible_cells,
            author,
            self._ids(),
            created_at=self._clock(),
            allow_empty_refs=allow_empty_refs,
        )
        self.log.append(annotation)
        return annotation

    def submit_comment(self, target: str, text: str, author_id: str) -> Comment:
        author = self.require_user(author_id)
        annotation = new_comment(
            self.log.by_id(), target, text, author, self._ids(), created_at=self._clock()
        )
        self.log.append(annotation)
        return annotation

    def submit_vote(self, target: str, verdict: Verdict, author_id: str) -> Vote:
        author = self.require_user(author_id)
        annotation = cast_vote(
            self.log.by_id(), target, verdict, author, self._ids(), created_at=self._clock()
        )
        self.log.append(annotation)
        return annotation

    # -- reads -------------------------------------------------------------------

    def annotation_states(self) -> dict[str, LifecycleState]:
        return states(self.log.annotations())

    def query_annotations(
        self,
        step: StepFilter | None = None,
        state: LifecycleState | None = None,
        entity_id: str | None = None,
        dimension: str | None = None,
    ) -> list[AnnotationEvent]:
        events = self.log.query(step=step, entity_id=entity_id, dimension=dimension)
        if state is None:
            return events
        wanted = {
            a.annotation_id
            for a in separate(self.log.annotations(), {state})
        }
        return [e for e in events if e.payload.annotation_id in wanted]

    def feed(self, include_edits: bool = False) -> list[AnnotationView]:
        return annotation_feed(self.log.annotations(), self.users, include_edits)

    def get_annotation(self, annotation_id: str) -> Annotation:
        annotation = self.log.by_id().get(annotation_id)
        if annotation is None:
            raise UnknownTarget(f"no annotation with id {annotation_id!r}")
        return annotation

    def close(self) -> None:
        self.log.close()
