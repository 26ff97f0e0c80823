#!/usr/bin/env python3
"""Write a small demo input set: two overlapping CSV sources, a sources
manifest, a per-dimension hierarchy, and a user registry.

The data covers every redundancy class: P1's visual acuity disagrees between
the sources (discrepant), P2's agrees (redundant consistent), P3's appears in
one source only (single source), and one pulse reading was recorded in the
wrong unit so the correction-rule demo has something to fix.

Usage: python3 scripts/make_demo_data.py --out demo_inputs
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

DEVICE_EXPORT_CSV = """\
entity,observed_at,dimension,value
P1,2024-03-01T00:00:00Z,visual_acuity,0.5
P2,2024-03-01T00:00:00Z,visual_acuity,0.9
P1,2024-03-01T00:00:00Z,pulse,72
P1,2024-03-02T00:00:00Z,pulse,710
P2,2024-03-01T00:00:00Z,pulse,68
"""

DOCTORAL_LETTER_CSV = """\
entity,observed_at,dimension,value
P1,2024-03-01T00:00:00Z,visual_acuity,0.8
P2,2024-03-01T00:00:00Z,visual_acuity,0.9
P3,2024-03-01T00:00:00Z,visual_acuity,0.2
"""

MANIFEST = {
    "tolerance": {"default": 1e-9},
    "sources": [
        {
            "name": "device_export",
            "path": "device_export.csv",
            "format": "long",
            "entity_column": "entity",
            "timestamp_column": "observed_at",
            "dimension_column": "dimension",
            "value_column": "value",
            "reliability": {"visual_acuity": "primary", "pulse": "primary"},
        },
        {
            "name": "doctoral_letter",
            "path": "doctoral_letter.csv",
            "format": "long",
            "entity_column": "entity",
            "timestamp_column": "observed_at",
            "dimension_column": "dimension",
            "value_column": "value",
            "reliability": {"visual_acuity": "secondary"},
        },
    ],
}

HIERARCHY = {"visual_acuity": ["device_export", "doctoral_letter"]}

USERS = [
    {"user_id": "ana", "display_name": "Ana Lyst", "qualification": "analyst"},
    {"user_id": "eve", "display_name": "Eve Expert", "qualification": "expert"},
]


def write_demo_inputs(out: Path) -> dict[str, Path]:
    """Write all demo input files into `out`; returns their paths by role."""
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "device_csv": out / "device_export.csv",
        "letter_csv": out / "doctoral_letter.csv",
        "manifest": out / "manifest.json",
        "hierarchy": out / "hierarchy.json",
        "users": out / "users.json",
    }
    paths["device_csv"].write_text(DEVICE_EXPORT_CSV, encoding="utf-8")
    paths["letter_csv"].write_text(DOCTORAL_LETTER_CSV, encoding="utf-8")
    paths["manifest"].write_text(json.dumps(MANIFEST, indent=2) + "\n",
                                 encoding="utf-8")
    paths["hierarchy"].write_text(json.dumps(HIERARCHY, indent=2) + "\n",
                                  encoding="utf-8")
    paths["users"].write_text(json.dumps(USERS, indent=2) + "\n",
                              encoding="utf-8")
    return paths


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo_inputs",
                        help="directory to write the demo inputs into")
    args = parser.parse_args()
    for role, path in write_demo_inputs(Path(args.out)).items():
        print(f"wrote {role:11s} {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
