#!/usr/bin/env python3
"""Run the complete annotation workflow end to end and print a transcript.

Steps: generate demo inputs, fuse the two sources with a hierarchy (CLI),
apply a wrong-unit correction rule, make a manual edit, record a finding with
an attached snapshot image, comment and vote on it, print the feed and the
per-step annotation counts, export the current values, and verify the log.

Usage: python3 scripts/demo_workflow.py [--dir demo_run]
"""

from __future__ import annotations

import argparse
import shutil
import sys
from datetime import datetime
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_demo_data import write_demo_inputs  # noqa: E402

from annofuse.cleansing import EditRequest, UnitRescale
from annofuse.cli import main as cli_main
from annofuse.model import CellKey, Scalar, SingleCell, Verdict
from annofuse.store import StepFilter
from annofuse.workspace import Workspace

T0 = datetime.fromisoformat("2024-03-01T00:00:00+00:00")


def banner(text: str) -> None:
    print(f"\n== {text} " + "=" * max(0, 68 - len(text)))


def run(data_dir: Path) -> int:
    inputs = write_demo_inputs(data_dir / "inputs")
    shutil.copy(inputs["users"], data_dir / "users.json")

    banner("fuse (CLI)")
    code = cli_main([
        "fuse",
        "--sources", str(inputs["manifest"]),
        "--hierarchy", str(inputs["hierarchy"]),
        "--out", str(data_dir),
    ])
    if code != 0:
        print(f"fusion left unresolved cells or failed (exit {code})")
        return code

    ws = Workspace(data_dir)
    try:
        banner("correction rule: pulse recorded in the wrong unit")
        rule = UnitRescale(dimension="pulse", factor=0.1,
                           plausible_min=30.0, plausible_max=220.0)
        for edit in ws.apply_correction_rule(rule, author="ana"):
            for change in edit.changes:
                print(f"{edit.annotation_id}: {change.cell.entity_id} pulse "
                      f"{change.old.number} -> {change.new.number} "
                      f"({edit.rule_set})")

        banner("manual edit with rationale")
        cell = CellKey("P3", "visual_acuity", T0)
        edit = ws.submit_edit(EditRequest(
            scope=SingleCell(cell=cell),
            author="ana",
            rationale="letter scan shows 0.25; transcription dropped a digit",
            new_value=Scalar.numeric(0.25),
        ))
        print(f"{edit.annotation_id}: P3 visual_acuity -> 0.25 ({edit.rationale})")

        banner("finding, comment, vote")
        acuity_cell = CellKey("P1", "visual_acuity", T0)
        finding = ws.submit_finding(
            text="sources disagree on P1 acuity; device value kept",
            payload=b"\x89PNG\r\n\x1a\n demo chart bytes",
            visible_cells=[acuity_cell],
            author_id="eve",
        )
        print(f"{finding.annotation_id}: finding by eve, "
              f"snapshot {finding.snapshot_ref[:12]}...")
        comment = ws.submit_comment(finding.annotation_id,
                                    "checked against the original letter", "ana")
        print(f"{comment.annotation_id}: comment by ana")
        vote = ws.submit_vote(finding.annotation_id, Verdict.CONFIRM, "eve")
        print(f"{vote.annotation_id}: confirm vote by eve")

        banner("feed")
        for card in ws.feed():
            print(f"[{card.state.value:11s}] {card.author.display_name}: "
                  f"{card.body} (+{card.tally.confirms}/-{card.tally.rejects})")
            for c in card.comments:
                print(f"    {c.author}: {c.text}")

        banner("annotations per workflow step")
        for step in StepFilter:
            events = ws.query_annotations(step=step)
            kinds = ", ".join(sorted({type(e.payload).__name__ for e in events}))
            print(f"{step.value:13s} {len(events):2d}  ({kinds})")
    finally:
        ws.close()

    banner("export current values (CLI)")
    code = cli_main(["snapshot", "--out", str(data_dir)])
    if code != 0:
        return code

    banner("verify log integrity (CLI)")
    code = cli_main(["verify", "--out", str(data_dir)])
    print(f"\ndata directory: {data_dir}")
    return code


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dir", default="demo_run",
                        help="data directory for the demo (must not be fused yet)")
    args = parser.parse_args()
    return run(Path(args.dir))


if __name__ == "__main__":
    raise SystemExit(main())
