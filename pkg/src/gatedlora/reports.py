"""Report serialization: stable JSON, CSV tables, schema validation.

JSON output is byte-stable (sorted keys, fixed indent, trailing newline) so
two runs with the same config and seed produce identical files once the
wall-time field is dropped.
"""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from gatedlora.adapter import QUANT_SITES

SCHEMA_NAMES = ("run_config", "run_report", "count_report")


def dumps_stable(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        f.write(dumps_stable(obj))


def load_schema(name: str) -> dict:
    if name not in SCHEMA_NAMES:
        raise ValueError(f"unknown schema {name!r}; pick from {SCHEMA_NAMES}")
    ref = resources.files("gatedlora").joinpath(f"schemas/{name}.schema.json")
    return json.loads(ref.read_text())


def validate(obj: dict, schema_name: str) -> None:
    """Raises jsonschema.ValidationError on mismatch."""
    jsonschema.validate(obj, load_schema(schema_name))


def strip_wall_time(report: dict) -> dict:
    out = copy.deepcopy(report)
    out.pop("wall_time_s", None)
    return out


def run_csv_text(report: dict) -> str:
    lines = ["epoch,loss,mean_effective_rank,mean_expected_bits"]
    for row in report["epochs"]:
        lines.append(
            f"{row['epoch']},{row['loss']!r},"
            f"{row['mean_effective_rank']!r},{row['mean_expected_bits']!r}"
        )
    return "\n".join(lines) + "\n"


def rank_table(report: dict) -> list:
    return [
        {"layer": row["layer"], "site": row["site"],
         "effective_rank": row["effective_rank"]}
        for row in report["per_block"]
    ]


def median_bits_table(report: dict) -> dict:
    """Median decided bitwidth per quantizer site kind across all blocks."""
    out = {}
    for kind in QUANT_SITES:
        vals = [row["decided_bits"][kind] for row in report["per_block"]]
        out[kind] = float(np.median(vals))
    return out


def rank_csv_text(report: dict) -> str:
    lines = ["layer,site,effective_rank"]
    for row in rank_table(report):
        lines.append(f"{row['layer']},{row['site']},{row['effective_rank']}")
    return "\n".join(lines) + "\n"


def bits_csv_text(report: dict) -> str:
    med = median_bits_table(report)
    lines = ["site,median_decided_bits"]
    for kind in QUANT_SITES:
        lines.append(f"{kind},{med[kind]!r}")
    return "\n".join(lines) + "\n"


def aggregate_runs(run_reports: list) -> dict:
    """Mean and std (ddof=0) of each numeric final metric across seeds."""
    if not run_reports:
        raise ValueError("need at least one run report")
    seeds = [r["seed"] for r in run_reports]
    keys = sorted(run_reports[0]["metrics"])
    metrics = {}
    for k in keys:
        vals = [r["metrics"][k] for r in run_reports]
        if not all(isinstance(v, (int, float)) for v in vals):
            continue
        arr = np.asarray(vals, dtype=np.float64)
        metrics[k] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return {
        "schema": 1,
        "kind": "summary",
        "seeds": seeds,
        "n_runs": len(run_reports),
        "metrics": metrics,
    }
