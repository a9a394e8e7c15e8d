"""Pydantic request/response models for the service surface.

All request models forbid unknown keys, so a typo in a config file fails
loudly with the offending key named instead of being silently ignored.
Defaults reproduce the reference hyperparameters (lr 5e-4, batch 8,
zeta1 -0.1, zeta2 1.1, t 0.34, alpha 16, r 8, seeds {0,1,2}).
"""

from __future__ import annotations

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from gatedlora.tasks import CLASSIFICATION, REGRESSION


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RunConfig(StrictModel):
    # task
    task: str = Field(default=CLASSIFICATION,
                      pattern=f"^({CLASSIFICATION}|{REGRESSION})$")
    vocab_size: int = Field(default=64, ge=2)
    seq_len: int = Field(default=16, ge=1)
    teacher_rank: int = Field(default=2, ge=1)
    # model dims
    d: int = Field(default=32, ge=1)
    heads: int = Field(default=4, ge=1)
    n_layers: int = Field(default=2, ge=1)
    r: int = Field(default=8, ge=1)
    lora_alpha: float = Field(default=16.0, gt=0)
    d_ff: int = Field(default=64, ge=1)
    head_hidden: int = Field(default=64, ge=1)
    # quantizer
    quantize: bool = True
    zeta1: float = -0.1
    zeta2: float = 1.1
    threshold_t: float = Field(default=0.34, gt=0, lt=1)
    temperature: float = Field(default=2.0 / 3.0, gt=0)
    verbatim_alg2: bool = False
    temperature_per_bitwidth: bool = False
    # training
    lambda_q: float = Field(default=1.0, ge=0)
    lambda_r: float = Field(default=1.0, ge=0)
    lr: float = Field(default=5e-4, gt=0)
    batch_size: int = Field(default=8, ge=1)
    epochs: int = Field(default=3, ge=1)
    steps_per_epoch: int = Field(default=100, ge=1)
    warmup_ratio: float = Field(default=0.0, ge=0, le=1)
    seeds: List[int] = Field(default=[0, 1, 2], min_length=1)
    eval_samples: int = Field(default=512, ge=1)


class TrainRequest(StrictModel):
    config: RunConfig = Field(default_factory=RunConfig)
    seed: int = Field(default=0, ge=0)


class EpochRow(StrictModel):
    epoch: int
    loss: float
    mean_effective_rank: float
    mean_expected_bits: float


class BlockRow(StrictModel):
    layer: int
    site: str
    effective_rank: int
    decided_bits: dict


class RunReport(StrictModel):
    # field named schema_version on the wire as "schema"
    schema_: int = Field(default=1, alias="schema")
    kind: str = "run-report"
    config: dict
    seed: int
    loss_curve: List[float]
    epochs: List[EpochRow]
    per_block: List[BlockRow]
    metrics: dict
    wall_time_s: float

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class Dims(StrictModel):
    d: int = Field(default=768, ge=1)
    l_seq: int = Field(default=256, ge=1)
    h: int = Field(default=12, ge=1)
    e: int = Field(default=512, ge=0)
    d_i: int = Field(default=3072, ge=0)
    n_layers: int = Field(default=12, ge=1)
    r: int = Field(default=8, ge=0)


class CountConfig(StrictModel):
    name: str = "config"
    adapter: str = Field(default="lora", pattern="^(lora|blora|adalora|none)$")
    r: int = Field(default=8, ge=0)
    b_w: int = 32
    b_a: int = 32


class SiteSpec(StrictModel):
    name: Optional[str] = None
    kind: str
    n_i: Optional[int] = None
    n_o: Optional[int] = None
    r: Optional[int] = None
    macs: Optional[int] = None
    b_w: int = 32
    b_a: int = 32


class AuditRequest(StrictModel):
    """Exactly one of: (config, baseline), (sites, baseline_sites), report."""

    dims: Dims = Field(default_factory=Dims)
    config: Optional[CountConfig] = None
    baseline: Optional[CountConfig] = None
    sites: Optional[List[SiteSpec]] = None
    baseline_sites: Optional[List[SiteSpec]] = None
    report: Optional[dict] = None


class ReportRequest(StrictModel):
    report: dict
    format: str = Field(default="json", pattern="^(csv|json)$")


class Health(StrictModel):
    status: str
    version: str
