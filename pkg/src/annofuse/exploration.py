"""Recording findings with snapshots and data references, commenting,
qualified voting, state-based separation, and the annotation feed.

The core stays headless: snapshot images are rendered and uploaded by
clients, stored here only as opaque content-addressed bytes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Mapping, Sequence

from .cleansing import Dataset
from .model import (
    Annotation,
    CellKey,
    Comment,
    DataRef,
    Edit,
    Finding,
    IdAllocator,
    InvalidAnnotation,
    LifecycleState,
    NotVotable,
    Qualification,
    UnknownTarget,
    User,
    Verdict,
    Vote,
    VOTABLE_VARIANTS,
    annotation_state,
    fingerprint_value,
    new_vote,
    now_utc,
)


# --------------------------------------------------------------------------
# snapshot blobs

@dataclass(frozen=True)
class SnapshotBlob:
    """Immutable image payload captured at externalization time.

    The id is the lowercase hex digest of the payload, so equal bytes share
    one blob and corruption is detectable on read.
    """

    blob_id: str
    media_type: str
    payload: bytes
    created_at: datetime

    def __post_init__(self) -> None:
        if not self.payload:
            raise InvalidAnnotation("snapshot payload must be non-empty")
        expected = content_address(self.payload)
        if self.blob_id != expected:
            raise InvalidAnnotation(
                f"blob id {self.blob_id!r} does not match payload digest {expected!r}"
            )

    @classmethod
    def from_payload(
        cls,
        payload: bytes,
        media_type: str = "image/png",
        created_at: datetime | None = None,
    ) -> "SnapshotBlob":
        return cls(
            blob_id=content_address(payload),
            media_type=media_type,
            payload=payload,
            created_at=created_at or now_utc(),
        )


def content_address(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


# --------------------------------------------------------------------------
# recording

def record_finding(
    dataset: Dataset,
    text: str,
    snapshot: SnapshotBlob,
    visible_cells: Sequence[CellKey],
    author: User,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
    allow_empty_refs: bool = False,
) -> Finding:
    """Externalize an insight: verbalization, snapshot reference, data refs.

    Each visible cell is stored with a fingerprint of its value at this
    moment, so later readers can re-query the same keys and detect that the
    underlying data changed.
    """
    if not visible_cells and not allow_empty_refs:
        raise InvalidAnnotation(
            "a finding must reference the visible data points "
            "(pass allow_empty_refs to override)"
        )
    refs = tuple(
        DataRef(cell=cell, fingerprint=fingerprint_value(dataset.get(cell)))
        for cell in visible_cells
    )
    return Finding(
        annotation_id=(ids or IdAllocator(prefix="f")).next(),
        text=text,
        snapshot_ref=snapshot.blob_id,
        data_refs=refs,
        author=author.user_id,
        created_at=created_at or now_utc(),
    )


def new_comment(
    annotations_by_id: Mapping[str, Annotation],
    target: str,
    text: str,
    author: User,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
) -> Comment:
    """Comment on any existing annotation, including other comments."""
    if target not in annotations_by_id:
        raise UnknownTarget(f"no annotation with id {target!r}")
    return Comment(
        annotation_id=(ids or IdAllocator(prefix="c")).next(),
        target=target,
        text=text,
        author=author.user_id,
        created_at=created_at or now_utc(),
    )


def cast_vote(
    annotations_by_id: Mapping[str, Annotation],
    target: str,
    verdict: Verdict,
    author: User,
    ids: IdAllocator | None = None,
    created_at: datetime | None = None,
) -> Vote:
    """Vote on an edit or finding; anything else is not votable."""
    annotation = annotations_by_id.get(target)
    if annotation is None:
        raise UnknownTarget(f"no annotation with id {target!r}")
    if not isinstance(annotation, VOTABLE_VARIANTS):
        raise NotVotable(f"annotation {target!r} is not votable")
    return new_vote(
        annotation_id=(ids or IdAllocator(prefix="v")).next(),
        target=target,
        verdict=verdict,
        author=author,
        created_at=created_at or now_utc(),
    )


# --------------------------------------------------------------------------
# state derivation and separation

def states(annotations: Sequence[Annotation]) -> dict[str, LifecycleState]:
    """Derived lifecycle state for every votable annotation in log order."""
    votes: dict[str, list[Vote]] = {}
    for a in annotations:
        if isinstance(a, Vote):
            votes.setdefault(a.target, []).append(a)
    return {
        a.annotation_id: annotation_state(a, votes.get(a.annotation_id, []))
        for a in annotations
        if isinstance(a, VOTABLE_VARIANTS)
    }


def separate(
    annotations: Sequence[Annotation],
    wanted: Iterable[LifecycleState],
) -> list[Annotation]:
    """Votable annotations whose derived state is wanted, order preserved.

    Votes are read from the same sequence; non-votable annotations have no
    state and never appear in the result.
    """
    wanted_set = set(wanted)
    state_by_id = states(annotations)
    return [
        a for a in annotations
        if isinstance(a, VOTABLE_VARIANTS)
        and state_by_id[a.annotation_id] in wanted_set
    ]


def stale_refs(finding: Finding, dataset: Dataset) -> tuple[DataRef, ...]:
    """Data refs whose referenced value changed since the finding was made."""
    return tuple(
        ref for ref in finding.data_refs
        if fingerprint_value(dataset.get(ref.cell)) != ref.fingerprint
    )


# --------------------------------------------------------------------------
# feed

@dataclass(frozen=True)
class AuthorProfile:
    """What the feed shows about an author; qualification is None when the
    user id is no longer in the registry."""

    user_id: str
    display_name: str
    qualification: Qualification | None


@dataclass(frozen=True)
class VoteTally:
    confirms: int
    rejects: int


@dataclass(frozen=True)
class AnnotationView:
    """One feed card: identity, profile, optional thumbnail, body, state,
    comment thread, and vote tally."""

    annotation_id: str
    author: AuthorProfile
    thumbnail_ref: str | None
    body: str
    state: LifecycleState
    comments: tuple[Comment, ...]
    tally: VoteTally
    created_at: datetime


def _profile(user_id: str, users: Mapping[str, User]) -> AuthorProfile:
    user = users.get(user_id)
    if user is None:
        return AuthorProfile(user_id=user_id, display_name=user_id, qualification=None)
    return AuthorProfile(
        user_id=user.user_id,
        display_name=user.display_name,
        qualification=user.qualification,
    )


def _thread_roots(annotations: Sequence[Annotation]) -> dict[str, str]:
    """Map each comment id to the id of the non-comment annotation its chain
    ultimately targets. Comments on comments join the root's thread."""
    target_of = {
        a.annotation_id: a.target for a in annotations if isinstance(a, Comment)
    }
    roots: dict[str, str] = {}
    for comment_id in target_of:
        current = comment_id
        seen = {current}
        while current in target_of:
            current = target_of[current]
            if current in seen:  # defensive; append validation prevents cycles
                break
            seen.add(current)
        roots[comment_id] = current
    return roots


def annotation_feed(
    annotations: Sequence[Annotation],
    users: Mapping[str, User],
    include_edits: bool = False,
) -> list[AnnotationView]:
    """Findings (and, behind the flag, edits) newest-first, each carrying its
    full flattened comment thread in log order and its vote tally."""
    state_by_id = states(annotations)
    roots = _thread_roots(annotations)

    comments_for: dict[str, list[Comment]] = {}
    tallies: dict[str, list[int]] = {}
    for a in annotations:
        if isinstance(a, Comment):
            comments_for.setdefault(roots[a.annotation_id], []).append(a)
        elif isinstance(a, Vote):
            counts = tallies.setdefault(a.target, [0, 0])
            counts[0 if a.verdict is Verdict.CONFIRM else 1] += 1

    entries: list[tuple[int, AnnotationView]] = []
    for position, a in enumerate(annotations):
        if isinstance(a, Finding):
            thumbnail, body = a.snapshot_ref, a.text
        elif isinstance(a, Edit) and include_edits:
            thumbnail, body = None, (a.rationale or a.rule_set or "")
        else:
            continue
        confirms, rejects = tallies.get(a.annotation_id, [0, 0])
        entries.append((position, AnnotationView(
            annotation_id=a.annotation_id,
            author=_profile(a.author, users),
            thumbnail_ref=thumbnail,
            body=body,
            state=state_by_id[a.annotation_id],
            comments=tuple(comments_for.get(a.annotation_id, [])),
            tally=VoteTally(confirms=confirms, rejects=rejects),
            created_at=a.created_at,
        )))

    entries.sort(key=lambda e: (e[1].created_at, e[0]), reverse=True)
    return [view for _, view in entries]
