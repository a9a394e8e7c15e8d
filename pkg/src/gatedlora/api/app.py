"""HTTP surface over the core package: train runs, count audits, tabulation."""

from __future__ import annotations

import jsonschema
from fastapi import FastAPI, HTTPException

import gatedlora
from gatedlora import complexity as cx
from gatedlora import reports
from gatedlora.api.schemas import (
    AuditRequest,
    Health,
    ReportRequest,
    TrainRequest,
)
from gatedlora.runner import run_from_config
from gatedlora.training import NonFiniteLossError

# 4xx means the request was wrong, 5xx means the run itself broke down;
# the CLI maps these to exit codes 2 and 3 respectively
NUMERICAL_FAILURE = 500


def create_app() -> FastAPI:
    app = FastAPI(title="gatedlora", version=gatedlora.__version__)

    @app.get("/health", response_model=Health)
    def health() -> Health:
        return Health(status="ok", version=gatedlora.__version__)

    @app.post("/train")
    def train_run(req: TrainRequest) -> dict:
        cfg = req.config.model_dump()
        try:
            return run_from_config(cfg, req.seed)
        except NonFiniteLossError as e:
            raise HTTPException(NUMERICAL_FAILURE, f"numerical failure: {e}")
        except ValueError as e:
            raise HTTPException(422, str(e))

    @app.post("/audit")
    def audit(req: AuditRequest) -> dict:
        try:
            if req.report is not None:
                return cx.audit_run_report(req.report)
            dims = cx.ModelDims(**req.dims.model_dump())
            if req.sites is not None:
                if req.baseline_sites is None:
                    raise HTTPException(422, "missing baseline site list")
                return cx.audit_sites(
                    dims,
                    [s.model_dump(exclude_none=True) for s in req.sites],
                    [s.model_dump(exclude_none=True) for s in req.baseline_sites],
                )
            if req.config is None or req.baseline is None:
                raise HTTPException(
                    422, "missing baseline: supply config+baseline, "
                    "sites+baseline_sites, or a run report")
            return cx.audit(
                dims,
                cx.AuditConfig(**req.config.model_dump()),
                cx.AuditConfig(**req.baseline.model_dump()),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise HTTPException(422, f"bad audit input: {e}")

    @app.post("/report")
    def tabulate(req: ReportRequest) -> dict:
        try:
            reports.validate(req.report, "run_report")
        except jsonschema.ValidationError as e:
            raise HTTPException(422, f"invalid run report: {e.message}")
        out = {
            "format": req.format,
            "ranks": reports.rank_table(req.report),
            "median_bits": reports.median_bits_table(req.report),
        }
        if req.format == "csv":
            out["csv"] = {
                "ranks": reports.rank_csv_text(req.report),
                "bits": reports.bits_csv_text(req.report),
            }
        return out

    return app
