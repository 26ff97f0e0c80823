"""Shared builders: deterministic clocks, timestamps, users, and random
fusion instances used by both the unit suites and the acceptance suite."""

from __future__ import annotations

import itertools
import random
from datetime import datetime, timedelta, timezone

import pytest

from annofuse.model import (
    CellKey,
    Qualification,
    Reliability,
    Scalar,
    SourceHierarchy,
    SourceValue,
    User,
    ValueKind,
)

BASE_TIME = datetime(2024, 3, 1, tzinfo=timezone.utc)


def ts(hours: float = 0.0) -> datetime:
    return BASE_TIME + timedelta(hours=hours)


def make_clock(start: datetime = BASE_TIME, step_seconds: int = 1):
    """Deterministic clock: start, start+step, start+2*step, ..."""
    tick = itertools.count()
    return lambda: start + timedelta(seconds=step_seconds * next(tick))


@pytest.fixture
def clock():
    return make_clock()


@pytest.fixture
def users() -> dict[str, User]:
    return {
        "ana": User("ana", "Ana Lyst", Qualification.ANALYST),
        "eve": User("eve", "Dr. Eve", Qualification.EXPERT),
        "max": User("max", "Dr. Max", Qualification.EXPERT),
    }


# --------------------------------------------------------------------------
# random fusion instances (shared by oracle-equivalence and partition tests)

SOURCE_POOL = ["src_a", "src_b", "src_c", "src_d", "src_e"]
CATEGORIES = ["low", "medium", "high", "unknown"]


def random_instance(
    rng: random.Random,
    max_sources: int = 5,
    max_cells: int = 20,
) -> tuple[list[SourceValue], list[SourceHierarchy], float, dict[str, float]]:
    """One random fusion input: values, hierarchies, default and per-dim tol.

    Dimensions carry a fixed kind each; every (cell, source) pair records at
    most once per distinct recorded_at so instances stay realistic.
    """
    n_sources = rng.randint(1, max_sources)
    sources = SOURCE_POOL[:n_sources]
    dimensions = {
        f"dim{i}": rng.choice([ValueKind.NUMERIC, ValueKind.CATEGORICAL])
        for i in range(rng.randint(1, 4))
    }
    entities = [f"P{i}" for i in range(1, rng.randint(2, 4))]
    times = [ts(h) for h in range(3)]

    cells = []
    for entity in entities:
        for dimension in dimensions:
            for t in times:
                cells.append(CellKey(entity_id=entity, dimension=dimension, observed_at=t))
    rng.shuffle(cells)
    cells = cells[: rng.randint(1, min(max_cells, len(cells)))]

    values: list[SourceValue] = []
    for cell in cells:
        recording = rng.sample(sources, rng.randint(1, len(sources)))
        base = rng.uniform(0.1, 2.0)
        for i, source in enumerate(recording):
            kind = dimensions[cell.dimension]
            if kind is ValueKind.NUMERIC:
                # half the time agree exactly, otherwise diverge well beyond tol
                number = base if rng.random() < 0.5 else base + rng.choice([0.3, -0.3, 1.0])
                value = Scalar.numeric(round(number, 6))
            else:
                value = Scalar.categorical(
                    rng.choice(CATEGORIES[:2]) if rng.random() < 0.5
                    else rng.choice(CATEGORIES)
                )
            values.append(SourceValue(
                cell=cell,
                value=value,
                source=source,
                recorded_at=ts(float(i)),
                reliability=rng.choice([Reliability.PRIMARY, Reliability.SECONDARY]),
            ))

    hierarchies = []
    for dimension in dimensions:
        if rng.random() < 0.7:
            order = sources[:]
            rng.shuffle(order)
            hierarchies.append(SourceHierarchy(dimension=dimension, priority=tuple(order)))

    default_tol = 1e-9
    per_dim = {d: 1e-6 for d in dimensions if rng.random() < 0.2}
    return values, hierarchies, default_tol, per_dim
