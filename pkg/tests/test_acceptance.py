"""Acceptance gate: one test per top-level guarantee, at the stated sizes,
tolerances, and time budgets. Each test prints a single PASS line on success;
pytest -v adds the per-test verdict.

Oracles are independent re-derivations (imported from the unit suites, which
define them without reference to the implementation internals).
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import random
import time

import pytest
from fastapi.testclient import TestClient

from annofuse.api import create_app
from annofuse.cleansing import (
    ClampToRange,
    Dataset,
    EditRequest,
    FillForward,
    UnitRescale,
    apply_edit,
    apply_rule_edit,
)
from annofuse.cli import main
from annofuse.fusion import ToleranceConfig, fuse
from annofuse.model import (
    CellChange,
    CellKey,
    DimensionRange,
    Edit,
    EntityWide,
    InsufficientQualification,
    LifecycleState,
    Qualification,
    RedundancyStatus,
    Reliability,
    Resolution,
    Scalar,
    SingleCell,
    SourceHierarchy,
    SourceValue,
    User,
    Verdict,
    annotation_state,
    new_vote,
)
from annofuse.store import AnnotationLog, StepFilter, replay
from annofuse.workspace import Workspace
from conftest import make_clock, random_instance, ts
from test_fusion import oracle_fuse
from test_store import random_log

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


ANA = User(user_id="ana", display_name="Ana Lyst",
           qualification=Qualification.ANALYST)
EVE = User(user_id="eve", display_name="Eve Expert",
           qualification=Qualification.EXPERT)
USERS = {"ana": ANA, "eve": EVE}


def report(line: str) -> None:
    print(f"PASS {line}")


# --------------------------------------------------------------------------
# 1. worked-example reproduction

DEVICE_CSV = (
    "entity,observed_at,dimension,value\n"
    "P1,2024-03-01T00:00:00Z,visual_acuity,0.5\n"
)
LETTER_CSV = (
    "entity,observed_at,dimension,value\n"
    "P1,2024-03-01T00:00:00Z,visual_acuity,0.8\n"
)


def test_primary_worked_example_reproduction(tmp_path, capsys):
    """One cell, 0.8 vs 0.5: discrepant; hierarchy picks 0.5 via exactly one
    resolution; without a hierarchy the fuse command exits 2, unresolved=1."""
    started = time.perf_counter()

    cell = CellKey("P1", "visual_acuity", ts(0))
    values = [
        SourceValue(cell=cell, value=Scalar.numeric(0.5), source="device_export",
                    recorded_at=ts(0), reliability=Reliability.PRIMARY),
        SourceValue(cell=cell, value=Scalar.numeric(0.8), source="doctoral_letter",
                    recorded_at=ts(0), reliability=Reliability.SECONDARY),
    ]
    hierarchy = SourceHierarchy(dimension="visual_acuity",
                                priority=("device_export", "doctoral_letter"))

    bare = fuse(values)
    assert bare.cells[cell].status is RedundancyStatus.DISCREPANT
    assert bare.cells[cell].chosen is None
    assert len(bare.unresolved) == 1

    resolved = fuse(values, [hierarchy])
    assert resolved.cells[cell].status is RedundancyStatus.DISCREPANT
    assert resolved.cells[cell].chosen == Scalar.numeric(0.5)
    resolutions = [a for a in resolved.annotations if isinstance(a, Resolution)]
    assert len(resolutions) == 1
    assert resolutions[0].hierarchy == hierarchy
    assert resolutions[0].chosen_source == "device_export"

    (tmp_path / "device.csv").write_text(DEVICE_CSV)
    (tmp_path / "letter.csv").write_text(LETTER_CSV)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"sources": [
        {"name": "device_export", "path": "device.csv", "format": "long",
         "entity_column": "entity", "timestamp_column": "observed_at",
         "dimension_column": "dimension", "value_column": "value",
         "reliability": {"visual_acuity": "primary"}},
        {"name": "doctoral_letter", "path": "letter.csv", "format": "long",
         "entity_column": "entity", "timestamp_column": "observed_at",
         "dimension_column": "dimension", "value_column": "value",
         "reliability": {"visual_acuity": "secondary"}},
    ]}))
    exit_code = main(["fuse", "--sources", str(manifest),
                      "--out", str(tmp_path / "data")])
    out = capsys.readouterr().out
    assert exit_code == 2
    assert dict(l.split() for l in out.strip().splitlines())["unresolved"] == "1"

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"took {elapsed:.3f}s, budget 1s"
    report(f"worked-example reproduction ({elapsed:.3f}s < 1s)")


# --------------------------------------------------------------------------
# 2. fusion oracle equivalence

def test_primary_fusion_oracle_equivalence():
    """500 random instances, statuses and chosen values match the naive
    per-cell oracle with 100% agreement, under 10 seconds."""
    rng = random.Random(20240301)
    started = time.perf_counter()
    checked = 0
    for _ in range(500):
        values, hierarchies, default_tol, per_dim = random_instance(rng)
        result = fuse(values, hierarchies,
                      ToleranceConfig(default=default_tol, per_dimension=per_dim))
        expected = oracle_fuse(values, hierarchies, default_tol, per_dim)
        assert len(result.cells) == len(expected)
        for key, fused_cell in result.cells.items():
            exp_status, exp_chosen = expected[
                (key.entity_id, key.dimension, key.observed_at)]
            assert fused_cell.status.value == exp_status, key
            assert fused_cell.chosen == exp_chosen, key
            checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"took {elapsed:.2f}s, budget 10s"
    report(f"fusion oracle equivalence (500 instances, {checked} cells, "
           f"{elapsed:.2f}s < 10s)")


# --------------------------------------------------------------------------
# 3. hierarchy monotonicity

def test_primary_hierarchy_swap_monotonicity():
    """1000 random discrepant 2-source cells: reversing the hierarchy always
    swaps the chosen value. Zero counterexamples."""
    rng = random.Random(777)
    for trial in range(1000):
        cell = CellKey("P1", "dim", ts(0))
        a_val = round(rng.uniform(0.1, 5.0), 4)
        b_val = round(a_val + rng.choice([0.5, -0.5, 1.5, 2.5]), 4)
        values = [
            SourceValue(cell=cell, value=Scalar.numeric(a_val), source="src_a",
                        recorded_at=ts(rng.randint(0, 5)),
                        reliability=Reliability.PRIMARY),
            SourceValue(cell=cell, value=Scalar.numeric(b_val), source="src_b",
                        recorded_at=ts(rng.randint(6, 11)),
                        reliability=Reliability.SECONDARY),
        ]
        forward = SourceHierarchy(dimension="dim", priority=("src_a", "src_b"))
        backward = SourceHierarchy(dimension="dim", priority=("src_b", "src_a"))
        chose_forward = fuse(values, [forward]).cells[cell].chosen
        chose_backward = fuse(values, [backward]).cells[cell].chosen
        assert fuse(values).cells[cell].status is RedundancyStatus.DISCREPANT
        assert chose_forward == Scalar.numeric(a_val), f"trial {trial}"
        assert chose_backward == Scalar.numeric(b_val), f"trial {trial}"
    report("hierarchy swap monotonicity (1000 trials, 0 counterexamples)")


# --------------------------------------------------------------------------
# 4. audit replay

def random_base(rng: random.Random) -> Dataset:
    values: dict[CellKey, Scalar | None] = {}
    for entity in ["P1", "P2", "P3"][: rng.randint(1, 3)]:
        for dim in ["alpha", "beta"][: rng.randint(1, 2)]:
            for i in range(rng.randint(2, 5)):
                values[CellKey(entity, dim, ts(i))] = (
                    None if rng.random() < 0.1
                    else Scalar.numeric(round(rng.uniform(-3, 8), 3))
                )
    return Dataset(values)


def random_edit_request(dataset: Dataset, rng: random.Random) -> EditRequest:
    keys = dataset.keys()
    choice = rng.random()
    if choice < 0.4:  # single cell, sometimes creating
        if rng.random() < 0.3:
            target = CellKey("P9", "alpha", ts(rng.randint(20, 99)))
        else:
            target = rng.choice(keys)
        return EditRequest(
            scope=SingleCell(cell=target), author="ana", rationale="r",
            new_value=Scalar.numeric(round(rng.uniform(0, 5), 3)),
        )
    if choice < 0.7:  # contiguous range over one entity and dimension
        anchor = rng.choice(keys)
        series = sorted(c.observed_at for c in keys
                        if c.entity_id == anchor.entity_id
                        and c.dimension == anchor.dimension)
        start = rng.choice(series)
        end = rng.choice([t for t in series if t >= start])
        return EditRequest(
            scope=DimensionRange(entity_id=anchor.entity_id,
                                 dimension=anchor.dimension,
                                 start=start, end=end),
            author="ana", rationale="r",
            new_value=Scalar.numeric(round(rng.uniform(0, 5), 3)),
        )
    anchor = rng.choice(keys)  # entity wide
    return EditRequest(
        scope=EntityWide(entity_id=anchor.entity_id), author="ana",
        rationale="r", new_value=Scalar.numeric(round(rng.uniform(0, 5), 3)),
    )


def random_rule(rng: random.Random):
    dim = rng.choice(["alpha", "beta"])
    return rng.choice([
        ClampToRange(dimension=dim, min_value=0.0, max_value=4.0),
        UnitRescale(dimension=dim, factor=0.1, plausible_min=0.0,
                    plausible_max=4.0),
        FillForward(dimension=dim),
    ])


def test_primary_audit_replay(tmp_path):
    """200 random edit sequences (length <= 50, mixed manual scopes and rule
    edits): replaying the persisted log onto the base reproduces the
    incrementally maintained dataset exactly, including a reopen."""
    rng = random.Random(4242)
    for run in range(200):
        base = random_base(rng)
        log = AnnotationLog(tmp_path / f"run{run}.ndjson", clock=make_clock())
        live = base
        applied = 0
        budget = rng.randint(1, 50)
        while applied < budget:
            if rng.random() < 0.25:
                rule = random_rule(rng)
                rule_result, edits = apply_rule_edit(
                    live, rule, author="ana", created_at=ts(100 + applied))
                if edits and applied + len(edits) <= 50:
                    live = rule_result
                    for annotation in edits:
                        log.append(dataclasses.replace(
                            annotation, annotation_id=log.next_id()))
                        applied += 1
                    continue
            request = random_edit_request(live, rng)
            live, annotation = apply_edit(
                live, request, created_at=ts(100 + applied))
            log.append(dataclasses.replace(
                annotation, annotation_id=log.next_id()))
            applied += 1
        log.close()

        reopened = AnnotationLog(tmp_path / f"run{run}.ndjson")
        rebuilt = replay(base, reopened.events())
        assert rebuilt == live, f"run {run} diverged"
        reopened.close()
    report("audit replay (200 sequences, bit-exact after reopen)")


# --------------------------------------------------------------------------
# 5. lifecycle exhaustiveness

def test_primary_lifecycle_exhaustiveness():
    """All 31 expert vote sequences of length <= 4 match the latest-verdict
    oracle; any analyst vote fails at construction."""
    target = Edit(
        annotation_id="e1",
        scope=SingleCell(cell=CellKey("P1", "dim", ts(0))),
        changes=(CellChange(cell=CellKey("P1", "dim", ts(0)),
                            old=None, new=Scalar.numeric(1.0)),),
        author="ana", rationale="fix", rule_set=None, created_at=ts(0),
    )
    sequences = 0
    for length in range(5):
        for verdicts in itertools.product(
                [Verdict.CONFIRM, Verdict.REJECT], repeat=length):
            votes = [
                new_vote(annotation_id=f"v{i}", target="e1", verdict=verdict,
                         author=EVE, created_at=ts(float(i)))
                for i, verdict in enumerate(verdicts, start=1)
            ]
            state = annotation_state(target, votes)
            if not verdicts:
                expected = LifecycleState.UNVALIDATED
            elif verdicts[-1] is Verdict.CONFIRM:
                expected = LifecycleState.VALID
            else:
                expected = LifecycleState.INVALID
            assert state is expected, verdicts
            sequences += 1
    assert sequences == 31

    with pytest.raises(InsufficientQualification):
        new_vote(annotation_id="v99", target="e1", verdict=Verdict.CONFIRM,
                 author=ANA, created_at=ts(0))
    report("lifecycle exhaustiveness (31 sequences + analyst rejection)")


# --------------------------------------------------------------------------
# 6. log integrity

def build_workflow_log(data_dir) -> None:
    """A representative log: fusion, edit, finding, comment, vote."""
    ws = Workspace(data_dir, clock=make_clock(), users=USERS)
    ws.register_source(
        {"name": "device_export", "path": "device_export.csv", "format": "long",
         "entity_column": "entity", "timestamp_column": "observed_at",
         "dimension_column": "dimension", "value_column": "value",
         "reliability": {"visual_acuity": "primary"}},
        DEVICE_CSV.encode(),
    )
    ws.register_source(
        {"name": "doctoral_letter", "path": "doctoral_letter.csv", "format": "long",
         "entity_column": "entity", "timestamp_column": "observed_at",
         "dimension_column": "dimension", "value_column": "value",
         "reliability": {"visual_acuity": "secondary"}},
        LETTER_CSV.encode(),
    )
    ws.run_fusion([SourceHierarchy(dimension="visual_acuity",
                                   priority=("device_export", "doctoral_letter"))])
    cell = CellKey("P1", "visual_acuity", ts(0))
    ws.submit_edit(EditRequest(scope=SingleCell(cell=cell), author="ana",
                               rationale="fix", new_value=Scalar.numeric(0.6)))
    finding = ws.submit_finding("insight", b"img", [cell], "eve")
    ws.submit_comment(finding.annotation_id, "checked", "ana")
    ws.submit_vote(finding.annotation_id, Verdict.CONFIRM, "eve")
    ws.close()


def test_primary_log_integrity(tmp_path, capsys):
    """The verifier passes every suite-produced log and flags each of three
    hand-corrupted fixtures (gap, dangling target, malformed record) with a
    nonzero exit."""
    produced = []

    workflow_dir = tmp_path / "workflow"
    build_workflow_log(workflow_dir)
    produced.append(workflow_dir / "events.ndjson")

    rng = random.Random(5)
    for i in range(20):
        log = random_log(tmp_path / f"gen{i}", rng)
        produced.append(log.path)
        log.close()

    for path in produced:
        assert main(["verify", "--log", str(path)]) == 0, path
    capsys.readouterr()

    source = (workflow_dir / "events.ndjson").read_text().splitlines()

    gap = tmp_path / "gap.ndjson"
    gap.write_text("\n".join(source[:2] + source[3:]) + "\n")
    assert main(["verify", "--log", str(gap)]) == 1
    assert "sequence gap" in capsys.readouterr().out

    dangling = tmp_path / "dangling.ndjson"
    dangling.write_text("\n".join(source).replace(
        '"target":"a4"', '"target":"zz"') + "\n")
    assert main(["verify", "--log", str(dangling)]) == 1
    assert "unknown annotation" in capsys.readouterr().out

    malformed = tmp_path / "malformed.ndjson"
    malformed.write_text("\n".join(source) + "\n{torn record\n")
    assert main(["verify", "--log", str(malformed)]) == 1
    assert "malformed" in capsys.readouterr().out

    report(f"log integrity ({len(produced)} clean logs pass, "
           "3 corruptions detected)")


# --------------------------------------------------------------------------
# 7. API end to end

def test_primary_api_end_to_end(tmp_path):
    """Scripted headless session: upload 2 sources, fuse, edit, finding with
    blob, comment, expert vote; the feed card shows tally (1,0) and state
    valid, and the blob round-trips byte-identically. Under 5 seconds."""
    started = time.perf_counter()

    workspace = Workspace(tmp_path / "data", clock=make_clock(), users=USERS)
    hierarchy = SourceHierarchy(dimension="visual_acuity",
                                priority=("device_export", "doctoral_letter"))
    client = TestClient(create_app(workspace, [hierarchy]),
                        raise_server_exceptions=False)
    ana = {"X-User-Id": "ana"}
    eve = {"X-User-Id": "eve"}

    for name, csv in [("device_export", DEVICE_CSV), ("doctoral_letter", LETTER_CSV)]:
        descriptor = {
            "name": name, "path": f"{name}.csv", "format": "long",
            "entity_column": "entity", "timestamp_column": "observed_at",
            "dimension_column": "dimension", "value_column": "value",
            "reliability": {"visual_acuity": "primary" if name == "device_export"
                            else "secondary"},
        }
        response = client.post(
            "/api/sources",
            files={"file": (f"{name}.csv", csv.encode(), "text/csv")},
            data={"descriptor": json.dumps(descriptor)},
            headers=ana,
        )
        assert response.status_code == 201

    assert client.post("/api/fuse", headers=ana).status_code == 200

    p1 = {"entity": "P1", "dimension": "visual_acuity",
          "observed_at": "2024-03-01T00:00:00Z"}
    edit = client.post("/api/edits", headers=ana, json={
        "scope": {"kind": "single_cell", "cell": p1},
        "new_value": {"kind": "numeric", "value": 0.55},
        "rationale": "verified on original device printout",
    })
    assert edit.status_code == 201

    payload = b"\x89PNG\r\n\x1a\n" + bytes(range(256))
    finding = client.post(
        "/api/findings",
        files={"file": ("chart.png", payload, "image/png")},
        data={"text": "device and letter disagree on P1 acuity",
              "visible_cells": json.dumps([p1])},
        headers=eve,
    )
    assert finding.status_code == 201
    finding_id = finding.json()["annotation"]["id"]
    blob_id = finding.json()["blob_id"]

    assert client.post(f"/api/annotations/{finding_id}/comments",
                       headers=ana, json={"text": "confirmed"}).status_code == 201
    vote = client.post(f"/api/findings/{finding_id}/votes",
                       headers=eve, json={"verdict": "confirm"})
    assert vote.status_code == 201

    feed = client.get("/api/feed", headers=ana).json()["feed"]
    card = next(v for v in feed if v["annotation_id"] == finding_id)
    assert card["tally"] == {"confirms": 1, "rejects": 0}
    assert card["state"] == "valid"
    assert [c["text"] for c in card["comments"]] == ["confirmed"]

    blob = client.get(f"/api/blobs/{blob_id}", headers=ana)
    assert blob.content == payload

    workspace.close()
    elapsed = time.perf_counter() - started
    assert elapsed < 5.0, f"took {elapsed:.2f}s, budget 5s"
    report(f"api end to end ({elapsed:.2f}s < 5s)")


# --------------------------------------------------------------------------
# 8. step-filter partition

def test_primary_step_filter_partition(tmp_path):
    """The three step queries are pairwise disjoint and jointly exhaustive
    on 100 random logs."""
    rng = random.Random(314)
    for i in range(100):
        log = random_log(tmp_path / f"p{i}", rng)
        buckets = {step: log.query(step=step) for step in StepFilter}
        seen: dict[int, StepFilter] = {}
        for step, events in buckets.items():
            for event in events:
                assert event.seq not in seen, (
                    f"log {i}: seq {event.seq} in {seen[event.seq]} and {step}")
                seen[event.seq] = step
        assert sorted(seen) == [e.seq for e in log.events()], f"log {i}"
        log.close()
    report("step-filter partition (100 random logs, disjoint + exhaustive)")
