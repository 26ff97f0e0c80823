#!/usr/bin/env python3
"""Measure fusion throughput and the redundancy-status mix on random data.

For each instance size, generates random multi-source instances (numeric and
categorical dimensions, partial source overlap, per-dimension hierarchies for
most dimensions), fuses them, and reports wall-clock throughput plus the
distribution of per-cell statuses and emitted annotations.

Usage: python3 scripts/bench_fusion.py [--instances 100] [--seed 7]
"""

from __future__ import annotations

import argparse
import random
import time
from datetime import datetime, timedelta, timezone

from annofuse.fusion import ToleranceConfig, fuse
from annofuse.model import (
    CellKey,
    Reliability,
    Scalar,
    SourceHierarchy,
    SourceValue,
)

BASE = datetime(2024, 3, 1, tzinfo=timezone.utc)
CATEGORIES = ["low", "medium", "high", "unknown"]


def random_instance(rng: random.Random, n_sources: int, n_cells: int):
    """One fusion input: values for n_cells cells spread over n_sources."""
    sources = [f"src_{chr(97 + i)}" for i in range(n_sources)]
    dims = [f"dim{i}" for i in range(rng.randint(1, 4))]
    numeric = {d: rng.random() < 0.7 for d in dims}
    values: list[SourceValue] = []
    for i in range(n_cells):
        cell = CellKey(
            entity_id=f"E{rng.randint(1, max(2, n_cells // 3))}",
            dimension=rng.choice(dims),
            observed_at=BASE + timedelta(hours=i % 48),
        )
        agree = rng.random() < 0.5
        if numeric[cell.dimension]:
            base_value = round(rng.uniform(0.1, 9.9), 3)
        else:
            base_value = rng.choice(CATEGORIES[:2])
        for j, source in enumerate(rng.sample(sources, rng.randint(1, n_sources))):
            if numeric[cell.dimension]:
                offset = 0.0 if agree else rng.choice([0.3, -0.3, 1.0])
                value = Scalar.numeric(round(base_value + j * offset, 3))
            else:
                value = Scalar.categorical(
                    base_value if agree else rng.choice(CATEGORIES))
            values.append(SourceValue(
                cell=cell,
                value=value,
                source=source,
                recorded_at=BASE + timedelta(minutes=j),
                reliability=rng.choice(list(Reliability)),
            ))
    hierarchies = [
        SourceHierarchy(dimension=d,
                        priority=tuple(rng.sample(sources, len(sources))))
        for d in dims if rng.random() < 0.7
    ]
    return values, hierarchies


def bench(rng: random.Random, instances: int, n_sources: int, n_cells: int):
    status_counts: dict[str, int] = {}
    total_values = total_cells = total_annotations = 0
    elapsed = 0.0
    for _ in range(instances):
        values, hierarchies = random_instance(rng, n_sources, n_cells)
        started = time.perf_counter()
        result = fuse(values, hierarchies, ToleranceConfig())
        elapsed += time.perf_counter() - started
        total_values += len(values)
        total_cells += len(result.cells)
        total_annotations += len(result.annotations)
        for fused_cell in result.cells.values():
            status_counts[fused_cell.status.value] = (
                status_counts.get(fused_cell.status.value, 0) + 1)
    mix = "  ".join(f"{k}={v / total_cells:.0%}"
                    for k, v in sorted(status_counts.items()))
    print(f"{n_sources:>7} {n_cells:>6} {total_values:>9} "
          f"{total_cells / elapsed:>12,.0f} {total_annotations:>11}  {mix}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--instances", type=int, default=100,
                        help="instances per size (default 100)")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    rng = random.Random(args.seed)
    print(f"{'sources':>7} {'cells':>6} {'values':>9} "
          f"{'cells/sec':>12} {'annotations':>11}  status mix")
    for n_sources, n_cells in [(2, 10), (3, 50), (5, 200), (5, 1000)]:
        bench(rng, args.instances, n_sources, n_cells)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
