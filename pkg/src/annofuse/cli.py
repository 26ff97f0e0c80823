"""Batch driver: fuse sources, print quality reports, verify logs, export
snapshots, and run the HTTP service.

Exit codes: 0 success, 1 error, 2 fusion left unresolved discrepancies
(cleansing needed) — scripts can branch on the distinction.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .exploration import states as derive_states
from .fusion import FusionResult, ToleranceConfig
from .ingestion import load_hierarchies_file, load_manifest
from .model import (
    AnnofuseError,
    Edit,
    Finding,
    LifecycleState,
    Provenance,
    RedundancyStatus,
    Resolution,
)
from .store import AnnotationLog, verify_log
from .workspace import LOCK_NAME, LOG_NAME, SNAPSHOT_NAME, Workspace

ENV_DATA_DIR = "ANNOFUSE_DATA_DIR"


def _default_out() -> str:
    return os.environ.get(ENV_DATA_DIR, ".")


def _refuse_if_locked(out_dir: str) -> None:
    """Write commands must not touch a directory a running service owns."""
    lock = Path(out_dir) / LOCK_NAME
    if lock.exists():
        raise AnnofuseError(
            f"a service owns this data dir (remove {lock} if stale)"
        )


def _print_summary(result: FusionResult) -> None:
    counts = {status: 0 for status in RedundancyStatus}
    for fused in result.cells.values():
        counts[fused.status] += 1
    resolved = sum(1 for a in result.annotations if isinstance(a, Resolution))
    rows = [
        ("cells", len(result.cells)),
        ("single-source", counts[RedundancyStatus.SINGLE_SOURCE]),
        ("redundant", counts[RedundancyStatus.REDUNDANT_CONSISTENT]),
        ("discrepant", counts[RedundancyStatus.DISCREPANT]),
        ("auto-resolved", resolved),
        ("unresolved", len(result.unresolved)),
    ]
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        print(f"{label:<{width}}  {value}")


def cmd_fuse(args: argparse.Namespace) -> int:
    _refuse_if_locked(args.out)
    descriptors, tolerance_data = load_manifest(args.sources)
    hierarchies = load_hierarchies_file(args.hierarchy) if args.hierarchy else []
    tolerance = ToleranceConfig.from_jsonable(tolerance_data)
    workspace = Workspace(args.out)
    try:
        result = workspace.run_fusion(hierarchies, tolerance, descriptors)
    finally:
        workspace.close()
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    _print_summary(result)
    return 2 if result.unresolved else 0


def _load_annotations(log_path: Path) -> list:
    """Strictly read all annotations; corrupt records abort with the first bad seq."""
    problems = verify_log(log_path)
    fatal = [p for p in problems if p.seq is not None or "not found" in p.message]
    if fatal:
        first = fatal[0]
        raise AnnofuseError(f"corrupt log at seq {first.seq}: {first.message}"
                            if first.seq is not None else first.message)
    log = AnnotationLog(log_path)
    try:
        return log.annotations()
    finally:
        log.close()


def _report_rows(annotations: list, kind: str) -> list[dict]:
    if kind == "discrepancies":
        counts: dict[tuple[str, str], int] = {}
        for a in annotations:
            if isinstance(a, Provenance) and a.status is RedundancyStatus.DISCREPANT:
                for record in a.sources:
                    key = (a.cell.dimension, record.source)
                    counts[key] = counts.get(key, 0) + 1
        return [
            {"dimension": dimension, "source": source, "cells": n}
            for (dimension, source), n in sorted(counts.items())
        ]
    if kind == "edits":
        authors: dict[str, int] = {}
        rules: dict[str, int] = {}
        for a in annotations:
            if not isinstance(a, Edit):
                continue
            if a.rule_set is None:
                authors[a.author] = authors.get(a.author, 0) + 1
            else:
                rules[a.rule_set] = rules.get(a.rule_set, 0) + 1
        return (
            [{"group": "author", "key": k, "edits": n} for k, n in sorted(authors.items())]
            + [{"group": "rule", "key": k, "edits": n} for k, n in sorted(rules.items())]
        )
    state_by_id = derive_states(annotations)
    groups: dict[str, list[str]] = {s.value: [] for s in LifecycleState}
    for a in annotations:
        if isinstance(a, Finding):
            groups[state_by_id[a.annotation_id].value].append(a.annotation_id)
    return [
        {"state": state, "count": len(ids), "findings": ids}
        for state, ids in groups.items()
        if ids
    ]


def _print_rows(rows: list[dict], fmt: str) -> None:
    if fmt == "ndjson":
        for row in rows:
            print(json.dumps(row, sort_keys=True))
        return
    if not rows:
        return
    columns = list(rows[0].keys())
    widths = {
        c: max(len(c), *(len(str(r[c])) for r in rows)) for c in columns
    }
    print("  ".join(f"{c:<{widths[c]}}" for c in columns))
    for row in rows:
        print("  ".join(f"{str(row[c]):<{widths[c]}}" for c in columns))


def cmd_report(args: argparse.Namespace) -> int:
    log_path = Path(args.log) if args.log else Path(args.out) / LOG_NAME
    annotations = _load_annotations(log_path)
    _print_rows(_report_rows(annotations, args.kind), args.format)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    log_path = Path(args.log) if args.log else Path(args.out) / LOG_NAME
    snapshot_path = log_path.parent / SNAPSHOT_NAME
    problems = verify_log(
        log_path, snapshot_path if snapshot_path.is_file() else None
    )
    for problem in problems:
        where = f"seq {problem.seq}" if problem.seq is not None else "log"
        print(f"{where}: {problem.message}")
    if not problems:
        print("ok")
    return 1 if problems else 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .api import serve

    serve(
        data_dir=args.out,
        port=args.port,
        hierarchy_path=args.hierarchy,
        users_path=args.users,
        host=args.host,
    )
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    from .store import write_values_dump

    _refuse_if_locked(args.out)
    workspace = Workspace(args.out)
    try:
        dataset = workspace.require_dataset()
        target = Path(args.to) if args.to else Path(args.out) / "values.ndjson"
        write_values_dump(target, dataset)
        print(f"wrote {len(dataset)} cells to {target}")
    finally:
        workspace.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annofuse",
        description="Fuse multi-source tabular data and manage its annotation log.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fuse_p = sub.add_parser("fuse", help="ingest sources, fuse, write log and snapshot")
    fuse_p.add_argument("--sources", required=True, help="sources manifest JSON")
    fuse_p.add_argument("--hierarchy", help="per-dimension source hierarchy JSON")
    fuse_p.add_argument("--out", default=_default_out(), help="data directory")
    fuse_p.set_defaults(func=cmd_fuse)

    report_p = sub.add_parser("report", help="print a data-quality report from the log")
    report_p.add_argument("kind", choices=["discrepancies", "edits", "findings"])
    report_p.add_argument("--out", default=_default_out(), help="data directory")
    report_p.add_argument("--log", help="log file (overrides --out)")
    report_p.add_argument("--format", choices=["text", "ndjson"], default="text")
    report_p.set_defaults(func=cmd_report)

    verify_p = sub.add_parser("verify", help="check log integrity and replay")
    verify_p.add_argument("--out", default=_default_out(), help="data directory")
    verify_p.add_argument("--log", help="log file (overrides --out)")
    verify_p.set_defaults(func=cmd_verify)

    serve_p = sub.add_parser("serve", help="run the HTTP service")
    serve_p.add_argument("--out", default=_default_out(), help="data directory")
    serve_p.add_argument("--hierarchy", help="per-dimension source hierarchy JSON")
    serve_p.add_argument("--users", help="user registry JSON (default: <out>/users.json)")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.set_defaults(func=cmd_serve)

    snapshot_p = sub.add_parser("snapshot", help="export current cell values")
    snapshot_p.add_argument("--out", default=_default_out(), help="data directory")
    snapshot_p.add_argument("--to", help="output file (default: <out>/values.ndjson)")
    snapshot_p.set_defaults(func=cmd_snapshot)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AnnofuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
