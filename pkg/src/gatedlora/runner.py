"""Builds model/task/trainer from a flat run-config dict and executes runs."""

from __future__ import annotations

import numpy as np

from gatedlora.model import ModelConfig, ToyModel
from gatedlora.quantizer import QuantizerConfig
from gatedlora.tasks import CLASSIFICATION, TaskSpec, make_task
from gatedlora.training import TrainConfig, train


def build_components(cfg: dict, seed: int):
    qconfig = QuantizerConfig(
        zeta1=cfg["zeta1"],
        zeta2=cfg["zeta2"],
        threshold_t=cfg["threshold_t"],
        temperature=cfg["temperature"],
        verbatim_alg2=cfg["verbatim_alg2"],
        temperature_per_bitwidth=cfg["temperature_per_bitwidth"],
    )
    n_outputs = 2 if cfg["task"] == CLASSIFICATION else 1
    mconfig = ModelConfig(
        d=cfg["d"],
        heads=cfg["heads"],
        n_layers=cfg["n_layers"],
        r=cfg["r"],
        lora_alpha=cfg["lora_alpha"],
        vocab_size=cfg["vocab_size"],
        seq_len=cfg["seq_len"],
        d_ff=cfg["d_ff"],
        head_hidden=cfg["head_hidden"],
        n_outputs=n_outputs,
    )
    spec = TaskSpec(
        kind=cfg["task"],
        vocab_size=cfg["vocab_size"],
        seq_len=cfg["seq_len"],
        seed=seed,
        teacher_rank=cfg["teacher_rank"],
    )
    task = make_task(spec, d=cfg["d"])
    model_rng = np.random.default_rng(np.random.SeedSequence(seed))
    model = ToyModel(mconfig, qconfig, model_rng, quantize=cfg["quantize"])
    tconfig = TrainConfig(
        lambda_q=cfg["lambda_q"],
        lambda_r=cfg["lambda_r"],
        lr=cfg["lr"],
        batch_size=cfg["batch_size"],
        epochs=cfg["epochs"],
        steps_per_epoch=cfg["steps_per_epoch"],
        seed=seed,
        warmup_ratio=cfg["warmup_ratio"],
        eval_samples=cfg["eval_samples"],
    )
    return model, task, tconfig


def run_from_config(cfg: dict, seed: int) -> dict:
    """One seeded training run; returns the schema-versioned RunReport."""
    model, task, tconfig = build_components(cfg, seed)
    result = train(model, task, tconfig)
    return {
        "schema": 1,
        "kind": "run-report",
        "config": dict(cfg),
        "seed": seed,
        **result,
    }
