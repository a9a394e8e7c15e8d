"""Command-line client for the service: train, audit, report.

The CLI never computes anything itself; it posts requests to the HTTP
service. By default the app runs in-process, so no server needs to be up;
--server points the same commands at a remote instance.

Exit codes: 0 success, 2 usage/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx
from pydantic import ValidationError

from gatedlora import reports
from gatedlora.api.app import create_app
from gatedlora.api.schemas import RunConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

OUT_ENV = "GATEDLORA_OUT"
DEFAULT_OUT = "runs"

# reference percentage for the rank-2 versus rank-16 comparison; the audit
# output annotates the distance from it
REFERENCE_PCT = 97.04


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class InProcessClient:
    """Sync facade over the ASGI app so the CLI works with no server up."""

    def __init__(self, app):
        self._transport = httpx.ASGITransport(app=app)
        self._base = "http://gatedlora.internal"

    async def _request(self, method: str, path: str, json_body):
        async with httpx.AsyncClient(
            transport=self._transport, base_url=self._base, timeout=None
        ) as ac:
            return await ac.request(method, path, json=json_body)

    def post(self, path: str, json=None):
        return asyncio.run(self._request("POST", path, json))

    def get(self, path: str):
        return asyncio.run(self._request("GET", path, None))

    def close(self):
        pass


def make_client(server):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    return InProcessClient(create_app())


def _detail_text(detail) -> str:
    if isinstance(detail, str):
        return detail
    if isinstance(detail, list):
        # pydantic validation errors: name the offending location
        parts = []
        for item in detail:
            loc = ".".join(str(p) for p in item.get("loc", []) if p != "body")
            parts.append(f"{loc}: {item.get('msg', 'invalid')}")
        return "; ".join(parts)
    return str(detail)


def post(client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code >= 500:
        raise CliError(_detail_text(resp.json().get("detail", resp.text)),
                       EXIT_NUMERICAL)
    if resp.status_code >= 400:
        raise CliError(_detail_text(resp.json().get("detail", resp.text)),
                       EXIT_USAGE)
    return resp.json()


def load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"invalid JSON in {path}: {e}")


def out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def reserve(paths, force: bool):
    """Refuse to overwrite existing outputs unless --force."""
    if force:
        return
    for p in paths:
        if p.exists():
            raise CliError(f"{p} exists; pass --force to overwrite")


def parse_seeds(text: str) -> list:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise CliError(f"bad --seed value {text!r}; expected e.g. 0 or 0,1,2")
    if not seeds or any(s < 0 for s in seeds):
        raise CliError("seeds must be non-negative integers")
    return seeds


def cmd_train(args, client) -> int:
    raw = load_json(args.config) if args.config else {}
    try:
        cfg = RunConfig(**raw)
    except ValidationError as e:
        raise CliError(_detail_text(e.errors()))
    seeds = parse_seeds(args.seed) if args.seed else cfg.seeds

    d = out_dir(args)
    targets = [d / f"run_seed{s}{ext}" for s in seeds for ext in (".json", ".csv")]
    if len(seeds) > 1:
        targets.append(d / "summary.json")
    reserve(targets, args.force)

    cfg_dict = cfg.model_dump()
    runs = []
    for s in seeds:
        report = post(client, "/train", {"config": cfg_dict, "seed": s})
        reports.validate(report, "run_report")
        jpath = d / f"run_seed{s}.json"
        reports.write_json(jpath, report)
        (d / f"run_seed{s}.csv").write_text(reports.run_csv_text(report))
        runs.append(report)
        m = report["metrics"]
        headline = (f"accuracy={m['accuracy']:.4f}" if "accuracy" in m
                    else f"mse={m['mse']:.6f}")
        print(f"seed {s}: {headline} mean_rank={m['mean_effective_rank']:.2f} "
              f"mean_bits={m['mean_decided_bits']:.2f} -> {jpath}")
    if len(runs) > 1:
        summary = reports.aggregate_runs(runs)
        reports.write_json(d / "summary.json", summary)
        for k, v in summary["metrics"].items():
            print(f"{k}: mean={v['mean']:.6g} std={v['std']:.6g}")
        print(f"summary -> {d / 'summary.json'}")
    return EXIT_OK


def _print_site_rows(rows):
    for s in rows:
        print(f"    {s['name']:<16} macs={s['macs']:>14,} "
              f"b_w={s['b_w']:>2} b_a={s['b_a']:>2} bops={s['bops']:>18,}")


def cmd_audit(args, client) -> int:
    d = out_dir(args)
    target = d / "count_report.json"
    reserve([target], args.force)

    if args.report:
        payload = {"report": load_json(args.report)}
    else:
        body = load_json(args.config) if args.config else {
            "config": {"adapter": "lora", "r": 2},
            "baseline": {"adapter": "lora", "r": 16},
        }
        if args.baseline:
            base = load_json(args.baseline)
            if "sites" in base:
                body["baseline_sites"] = base["sites"]
            else:
                body["baseline"] = base.get("config", base)
        if "sites" in body and "baseline_sites" not in body:
            raise CliError("missing baseline: supply --baseline with a site list")
        if "sites" not in body and "baseline" not in body:
            raise CliError("missing baseline: supply --baseline or a "
                           "'baseline' key in the audit config")
        payload = body

    rep = post(client, "/audit", payload)
    reports.validate(rep, "count_report")
    reports.write_json(target, rep)

    if rep["kind"] == "count-report":
        att = rep["ratios_pct"]["attention"]
        diff = rep["reference"]["abs_diff_vs_lora_r2_pp"]["attention"]
        print(f"relative BOPs (attention perimeter): {att:.2f}%  "
              f"|ratio - {REFERENCE_PCT}| = {diff:.2f} pp")
        for p, v in sorted(rep["ratios_pct"].items()):
            print(f"  {p}: {v:.2f}%")
        print("params:")
        for row in rep["params_table"]:
            print(f"  {row['method']:<6} r={row['r']:<3} "
                  f"params={row['params']} ({row['params'] / 1e6:.2f}M)")
        # per-site breakdown: always for the attention perimeter, and for
        # every perimeter when a reference ratio is off (diagnosis data)
        perims = list(rep["perimeters"]) if rep["notes"] else ["attention"]
        for p in perims:
            print(f"per-site breakdown ({p}):")
            _print_site_rows(rep["perimeters"][p]["config"]["per_layer_sites"])
        for note in rep["notes"]:
            print(f"note: {note}")
    else:
        print(f"relative BOPs vs full-precision baseline: {rep['ratio_pct']:.2f}%")
        print(f"  total_macs={rep['total_macs']:,} total_bops={rep['total_bops']:,} "
              f"baseline_bops={rep['baseline_bops']:,}")
        _print_site_rows(rep["sites"])
    print(f"count report -> {target}")
    return EXIT_OK


def cmd_report(args, client) -> int:
    d = out_dir(args)
    stem = Path(args.report).stem
    if args.format == "csv":
        targets = [d / f"{stem}_ranks.csv", d / f"{stem}_bits.csv"]
    else:
        targets = [d / f"{stem}_tables.json"]
    reserve(targets, args.force)

    run = load_json(args.report)
    tables = post(client, "/report", {"report": run, "format": args.format})

    print("layer,site,effective_rank")
    for row in tables["ranks"]:
        print(f"{row['layer']},{row['site']},{row['effective_rank']}")
    print("site,median_decided_bits")
    for site, med in tables["median_bits"].items():
        print(f"{site},{med}")

    if args.format == "csv":
        targets[0].write_text(tables["csv"]["ranks"])
        targets[1].write_text(tables["csv"]["bits"])
    else:
        reports.write_json(targets[0], {
            "ranks": tables["ranks"], "median_bits": tables["median_bits"]})
    for t in targets:
        print(f"wrote {t}")
    return EXIT_OK


DISPATCH = {"train": cmd_train, "audit": cmd_audit, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--server", default=None,
                        help="service URL; default runs the app in-process")
    common.add_argument("--out", default=None,
                        help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--force", action="store_true",
                        help="overwrite existing output files")

    p = argparse.ArgumentParser(
        prog="gatedlora",
        description="Train gated-bitwidth low-rank adapters on synthetic "
                    "tasks and audit their MAC/BOP/parameter counts.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common],
                       help="run seeded training, write run reports")
    t.add_argument("--config", default=None, help="run config JSON path")
    t.add_argument("--seed", default=None,
                   help="comma-separated seed list, e.g. 0,1,2")

    a = sub.add_parser("audit", parents=[common],
                       help="count MACs/BOPs/params for a config or a run")
    a.add_argument("--config", default=None, help="audit config JSON path")
    a.add_argument("--report", default=None,
                   help="run report JSON to audit with its decided bits/ranks")
    a.add_argument("--baseline", default=None,
                   help="baseline config JSON path")

    r = sub.add_parser("report", parents=[common],
                       help="tabulate per-block ranks and median bitwidths")
    r.add_argument("--report", required=True, help="run report JSON path")
    r.add_argument("--format", choices=("csv", "json"), default="json")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        client = make_client(args.server)
        try:
            return DISPATCH[args.command](args, client)
        finally:
            client.close()
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except httpx.HTTPError as e:
        print(f"error: request failed: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
