"""Joint objective and training/eval loops.

objective = task loss + lambda_q * (sum of bitwidth-gate regularizers over
every quantizer site) + lambda_r * (sum of rank-gate regularizers over every
adapter block). Both regularizers penalize the probability mass of open
gates, so minimizing the sum pushes toward coarse bitwidths and low ranks.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from gatedlora import tensor as T
from gatedlora.tensor import Tensor
from gatedlora.optim import Adam, LinearDecay
from gatedlora.quantizer import expected_bitwidth
from gatedlora.tasks import CLASSIFICATION


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss ({value}) at training step {step}")
        self.step = step
        self.value = value


@dataclass
class TrainConfig:
    lambda_q: float = 1.0
    lambda_r: float = 1.0
    lr: float = 5e-4
    batch_size: int = 8
    epochs: int = 3
    steps_per_epoch: int = 100
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_ratio: float = 0.0
    eval_samples: int = 512

    def __post_init__(self):
        if self.lambda_q < 0 or self.lambda_r < 0:
            raise ValueError("lambda_q and lambda_r must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size, epochs, steps_per_epoch must be >= 1")
        if self.eval_samples < 1:
            raise ValueError("eval_samples must be >= 1")


def task_loss(model, batch, rng=None) -> Tensor:
    ids, targets = batch
    out = model.forward(ids, rng)
    if np.issubdtype(np.asarray(targets).dtype, np.integer):
        return T.cross_entropy_with_logits(out, targets)
    diff = out.reshape(-1) - np.asarray(targets, dtype=np.float64)
    return (diff * diff).mean()


def objective(model, batch, config: TrainConfig, rng=None) -> Tensor:
    """Task loss plus gate and rank penalties; differentiable scalar."""
    loss = task_loss(model, batch, rng)
    if config.lambda_q:
        for q in model.quantizer_list():
            loss = loss + config.lambda_q * q.regularizer()
    if config.lambda_r:
        for b in model.adapter_blocks():
            loss = loss + config.lambda_r * b.regularizer()
    return loss


def frozen_hash(model) -> str:
    h = hashlib.sha256()
    for t in model.frozen_tensors():
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def mean_effective_rank(model) -> float:
    ranks = [b.effective_rank() for b in model.adapter_blocks()]
    return float(np.mean(ranks))


def mean_expected_bits(model, training: bool = True) -> float:
    vals = [
        expected_bitwidth(q.state, q.config, training=training)
        for q in model.quantizer_list()
    ]
    return float(np.mean(vals))


def per_block_report(model) -> list:
    rows = []
    for layer, site, block in model.named_blocks():
        rows.append(
            {
                "layer": layer,
                "site": site,
                "effective_rank": block.effective_rank(),
                "decided_bits": block.decided_bits(),
            }
        )
    return rows


def evaluate(model, task, n_samples: int = 512, batch_size: int = 64) -> dict:
    """Held-out metrics under deterministic gates."""
    model.eval()
    correct = 0
    sq_err = 0.0
    total = 0
    losses = []
    with_batches = max(1, n_samples // batch_size)
    for _ in range(with_batches):
        ids, targets = task.eval_batch(batch_size)
        with T.no_grad():
            out = model.forward(ids)
        if task.kind == CLASSIFICATION:
            pred = out.numpy().argmax(axis=1)
            correct += int((pred == targets).sum())
        else:
            err = out.numpy().reshape(-1) - targets
            sq_err += float((err * err).sum())
        total += len(targets)
    metrics = {}
    if task.kind == CLASSIFICATION:
        metrics["accuracy"] = correct / total
    else:
        metrics["mse"] = sq_err / total
    metrics["n_eval_samples"] = total
    return metrics


def train(model, task, config: TrainConfig) -> dict:
    """Run the full loop and return the report payload (sans schema/config
    envelope, which the service layer adds)."""
    t0 = time.monotonic()
    ss = np.random.SeedSequence(config.seed)
    s_data, s_gates = ss.spawn(2)
    gate_rng = np.random.default_rng(s_gates)
    # the task owns its data streams; s_data reserved for shuffling extensions

    opt = Adam(
        model.parameters(),
        lr=config.lr,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    total_steps = config.epochs * config.steps_per_epoch
    sched = LinearDecay(opt, total_steps, warmup_ratio=config.warmup_ratio)

    loss_curve = []
    epoch_rows = []
    step = 0
    for epoch in range(config.epochs):
        model.train()
        epoch_losses = []
        for _ in range(config.steps_per_epoch):
            batch = task.train_batch(config.batch_size)
            opt.zero_grad()
            loss = objective(model, batch, config, gate_rng)
            val = loss.item()
            if not np.isfinite(val):
                raise NonFiniteLossError(step, val)
            loss.backward()
            opt.step()
            sched.step()
            loss_curve.append(val)
            epoch_losses.append(val)
            step += 1
        epoch_rows.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(epoch_losses)),
                "mean_effective_rank": mean_effective_rank(model),
                "mean_expected_bits": mean_expected_bits(model, training=True),
            }
        )

    metrics = evaluate(model, task, n_samples=config.eval_samples)
    metrics["final_train_loss"] = loss_curve[-1]
    metrics["mean_effective_rank"] = mean_effective_rank(model)
    metrics["mean_decided_bits"] = mean_expected_bits(model, training=False)
    metrics["frozen_hash"] = frozen_hash(model)

    return {
        "loss_curve": loss_curve,
        "epochs": epoch_rows,
        "per_block": per_block_report(model),
        "metrics": metrics,
        "wall_time_s": time.monotonic() - t0,
    }
