"""Command line driver: exit codes, report contents, verification output,
lock discipline, and the data-directory environment default."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from annofuse.cleansing import ClampToRange, EditRequest
from annofuse.cli import ENV_DATA_DIR, main
from annofuse.model import (
    CellKey,
    Provenance,
    Qualification,
    RedundancyStatus,
    Scalar,
    SingleCell,
    User,
    Verdict,
    parse_timestamp,
)
from annofuse.workspace import Workspace
from conftest import make_clock


USERS = {
    "ana": User(user_id="ana", display_name="Ana Lyst",
                qualification=Qualification.ANALYST),
    "eve": User(user_id="eve", display_name="Eve Expert",
                qualification=Qualification.EXPERT),
}

DEVICE_CSV = (
    "entity,observed_at,dimension,value\n"
    "P1,2024-03-01T00:00:00Z,visual_acuity,0.5\n"
    "P2,2024-03-01T00:00:00Z,visual_acuity,1.0\n"
)
LETTER_CSV = (
    "entity,observed_at,dimension,value\n"
    "P1,2024-03-01T00:00:00Z,visual_acuity,0.8\n"
)


def write_fixture(tmp_path: Path) -> tuple[Path, Path, Path]:
    """Manifest + hierarchy + output dir for the two-source example."""
    (tmp_path / "device.csv").write_text(DEVICE_CSV)
    (tmp_path / "letter.csv").write_text(LETTER_CSV)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({
        "sources": [
            {"name": "device_export", "path": "device.csv", "format": "long",
             "entity_column": "entity", "timestamp_column": "observed_at",
             "dimension_column": "dimension", "value_column": "value",
             "reliability": {"visual_acuity": "primary"}},
            {"name": "doctoral_letter", "path": "letter.csv", "format": "long",
             "entity_column": "entity", "timestamp_column": "observed_at",
             "dimension_column": "dimension", "value_column": "value",
             "reliability": {"visual_acuity": "secondary"}},
        ],
    }))
    hierarchy = tmp_path / "hierarchy.json"
    hierarchy.write_text(json.dumps(
        {"visual_acuity": ["device_export", "doctoral_letter"]}
    ))
    out = tmp_path / "data"
    return manifest, hierarchy, out


def p1_cell() -> CellKey:
    return CellKey("P1", "visual_acuity", parse_timestamp("2024-03-01T00:00:00Z"))


# --------------------------------------------------------------------------
# fuse

def test_fuse_with_hierarchy_exits_zero(tmp_path, capsys):
    manifest, hierarchy, out = write_fixture(tmp_path)
    code = main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert (out / "events.ndjson").is_file()
    assert (out / "snapshot.ndjson").is_file()
    summary = dict(
        line.split() for line in captured.out.strip().splitlines()
    )
    assert summary["cells"] == "2"
    assert summary["discrepant"] == "1"
    assert summary["auto-resolved"] == "1"
    assert summary["unresolved"] == "0"


def test_fuse_summary_matches_log_recount(tmp_path, capsys):
    """The printed numbers agree with an independent scan of the written log."""
    manifest, hierarchy, out = write_fixture(tmp_path)
    main(["fuse", "--sources", str(manifest),
          "--hierarchy", str(hierarchy), "--out", str(out)])
    captured = capsys.readouterr()
    summary = dict(line.split() for line in captured.out.strip().splitlines())

    records = [json.loads(l)
               for l in (out / "events.ndjson").read_text().splitlines()[1:]]
    variants = [r["annotation"]["variant"] for r in records]
    provenances = [r["annotation"] for r in records
                   if r["annotation"]["variant"] == "provenance"]
    assert summary["cells"] == str(len(provenances))
    assert summary["auto-resolved"] == str(variants.count("resolution"))
    discrepant = sum(1 for p in provenances if p["status"] == "discrepant")
    assert summary["discrepant"] == str(discrepant)


def test_fuse_without_hierarchy_exits_two(tmp_path, capsys):
    manifest, _, out = write_fixture(tmp_path)
    code = main(["fuse", "--sources", str(manifest), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 2
    summary = dict(line.split() for line in captured.out.strip().splitlines())
    assert summary["unresolved"] == "1"
    assert summary["auto-resolved"] == "0"


def test_fuse_missing_manifest_exits_one(tmp_path, capsys):
    code = main(["fuse", "--sources", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "data")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_fuse_twice_exits_one(tmp_path, capsys):
    manifest, hierarchy, out = write_fixture(tmp_path)
    assert main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy), "--out", str(out)]) == 0
    code = main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy), "--out", str(out)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_data_dir_env_default(tmp_path, monkeypatch, capsys):
    manifest, hierarchy, out = write_fixture(tmp_path)
    monkeypatch.setenv(ENV_DATA_DIR, str(out))
    code = main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy)])
    assert code == 0
    assert (out / "events.ndjson").is_file()


# --------------------------------------------------------------------------
# report

def fused_dir(tmp_path) -> Path:
    manifest, hierarchy, out = write_fixture(tmp_path)
    assert main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy), "--out", str(out)]) == 0
    return out


def test_report_discrepancies(tmp_path, capsys):
    out = fused_dir(tmp_path)
    capsys.readouterr()
    code = main(["report", "discrepancies", "--out", str(out),
                 "--format", "ndjson"])
    assert code == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert rows == [
        {"dimension": "visual_acuity", "source": "device_export", "cells": 1},
        {"dimension": "visual_acuity", "source": "doctoral_letter", "cells": 1},
    ]


def test_report_edits_groups_authors_and_rules(tmp_path, capsys):
    out = fused_dir(tmp_path)
    ws = Workspace(out, clock=make_clock(), users=USERS)
    ws.submit_edit(EditRequest(scope=SingleCell(cell=p1_cell()), author="ana",
                               rationale="fix 1", new_value=Scalar.numeric(0.6)))
    ws.submit_edit(EditRequest(scope=SingleCell(cell=p1_cell()), author="ana",
                               rationale="fix 2", new_value=Scalar.numeric(0.7)))
    rule = ClampToRange(dimension="visual_acuity", min_value=0.0, max_value=0.9)
    assert len(ws.apply_correction_rule(rule, author="eve")) == 1
    ws.close()
    capsys.readouterr()

    code = main(["report", "edits", "--out", str(out), "--format", "ndjson"])
    assert code == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
    assert {"group": "author", "key": "ana", "edits": 2} in rows
    assert any(r["group"] == "rule" and r["edits"] == 1 and "clamp" in r["key"]
               for r in rows)
    assert len(rows) == 2  # manual edits by author, automatic by rule


def test_report_findings_by_state(tmp_path, capsys):
    out = fused_dir(tmp_path)
    ws = Workspace(out, clock=make_clock(), users=USERS)
    confirmed = ws.submit_finding("validated insight", b"img1", [p1_cell()], "eve")
    ws.submit_finding("open question", b"img2", [p1_cell()], "ana")
    ws.submit_vote(confirmed.annotation_id, Verdict.CONFIRM, "eve")
    ws.close()
    capsys.readouterr()

    code = main(["report", "findings", "--out", str(out), "--format", "ndjson"])
    assert code == 0
    rows = {r["state"]: r for r in
            (json.loads(l) for l in capsys.readouterr().out.strip().splitlines())}
    assert rows["valid"]["count"] == 1
    assert rows["valid"]["findings"] == [confirmed.annotation_id]
    assert rows["unvalidated"]["count"] == 1


def test_report_text_format_is_aligned(tmp_path, capsys):
    out = fused_dir(tmp_path)
    capsys.readouterr()
    assert main(["report", "discrepancies", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["dimension", "source", "cells"]
    assert len(lines) == 3


def test_report_on_empty_log_exits_zero(tmp_path, capsys):
    ws = Workspace(tmp_path / "data")  # creates header-only log
    ws.close()
    code = main(["report", "findings", "--out", str(tmp_path / "data")])
    assert code == 0
    assert capsys.readouterr().out == ""


def test_report_on_corrupt_log_exits_one(tmp_path, capsys):
    out = fused_dir(tmp_path)
    log = out / "events.ndjson"
    lines = log.read_text().splitlines()
    del lines[1]  # drop seq 1
    log.write_text("\n".join(lines) + "\n")
    code = main(["report", "discrepancies", "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    assert "corrupt log at seq 1" in err


# --------------------------------------------------------------------------
# verify

def test_verify_clean_log_prints_ok(tmp_path, capsys):
    out = fused_dir(tmp_path)
    capsys.readouterr()
    code = main(["verify", "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_verify_names_seq_of_each_corruption(tmp_path, capsys):
    out = fused_dir(tmp_path)
    log = out / "events.ndjson"

    # corruption 1: drop a record (sequence gap)
    gapped = tmp_path / "gapped.ndjson"
    lines = log.read_text().splitlines()
    del lines[2]
    gapped.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", "--log", str(gapped)]) == 1
    assert "seq 2: sequence gap" in capsys.readouterr().out

    # corruption 2: dangling target
    dangling = tmp_path / "dangling.ndjson"
    dangling.write_text(log.read_text().replace(
        '"target":"a', '"target":"zz'))
    ws = Workspace(out, clock=make_clock(), users=USERS)
    finding = ws.submit_finding("note", b"img", [p1_cell()], "eve")
    ws.submit_vote(finding.annotation_id, Verdict.CONFIRM, "eve")
    ws.close()
    dangling.write_text(log.read_text().replace(
        f'"target":"{finding.annotation_id}"', '"target":"zz"'))
    assert main(["verify", "--log", str(dangling)]) == 1
    assert "unknown annotation" in capsys.readouterr().out

    # corruption 3: malformed record
    malformed = tmp_path / "malformed.ndjson"
    malformed.write_text(log.read_text() + "{oops\n")
    assert main(["verify", "--log", str(malformed)]) == 1
    assert "malformed" in capsys.readouterr().out


def test_verify_replays_against_sibling_snapshot(tmp_path, capsys):
    out = fused_dir(tmp_path)
    ws = Workspace(out, clock=make_clock(), users=USERS)
    ws.submit_edit(EditRequest(scope=SingleCell(cell=p1_cell()), author="ana",
                               rationale="fix", new_value=Scalar.numeric(0.6)))
    ws.close()
    capsys.readouterr()
    assert main(["verify", "--out", str(out)]) == 0

    # snapshot vanishes: structural checks still pass
    (out / "snapshot.ndjson").unlink()
    assert main(["verify", "--out", str(out)]) == 0


def test_verify_missing_log_exits_one(tmp_path, capsys):
    code = main(["verify", "--out", str(tmp_path)])
    assert code == 1
    assert "not found" in capsys.readouterr().out


# --------------------------------------------------------------------------
# snapshot export

def test_snapshot_exports_current_values(tmp_path, capsys):
    out = fused_dir(tmp_path)
    ws = Workspace(out, clock=make_clock(), users=USERS)
    ws.submit_edit(EditRequest(scope=SingleCell(cell=p1_cell()), author="ana",
                               rationale="fix", new_value=Scalar.numeric(0.6)))
    ws.close()
    capsys.readouterr()

    target = tmp_path / "export.ndjson"
    code = main(["snapshot", "--out", str(out), "--to", str(target)])
    assert code == 0
    assert "wrote 2 cells" in capsys.readouterr().out
    records = [json.loads(l) for l in target.read_text().splitlines()]
    values = {r["cell"]["entity"]: r["value"]["value"]
              for r in records if r["kind"] == "value"}
    assert values == {"P1": 0.6, "P2": 1.0}


def test_snapshot_before_fusion_exits_one(tmp_path, capsys):
    ws = Workspace(tmp_path / "data")
    ws.close()
    code = main(["snapshot", "--out", str(tmp_path / "data")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


# --------------------------------------------------------------------------
# service lock

def test_write_commands_refuse_locked_dir(tmp_path, capsys):
    manifest, hierarchy, out = write_fixture(tmp_path)
    out.mkdir()
    (out / "service.lock").write_text("{}")
    code = main(["fuse", "--sources", str(manifest),
                 "--hierarchy", str(hierarchy), "--out", str(out)])
    assert code == 1
    assert "service" in capsys.readouterr().err
    assert not (out / "events.ndjson").exists()  # nothing was touched

    code = main(["snapshot", "--out", str(out)])
    assert code == 1
