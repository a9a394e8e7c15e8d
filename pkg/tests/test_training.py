import numpy as np
import pytest

from gatedlora import tensor as T
from gatedlora.tensor import Tensor
from gatedlora.adapter import BLoraLinear
from gatedlora.model import ModelConfig, ToyModel
from gatedlora.optim import Adam, LinearDecay
from gatedlora.quantizer import Quantizer, QuantizerConfig, sample_gates, eval_gates
from gatedlora.tasks import (
    CLASSIFICATION,
    REGRESSION,
    TaskSpec,
    make_task,
)
from gatedlora.training import (
    NonFiniteLossError,
    TrainConfig,
    evaluate,
    frozen_hash,
    objective,
    task_loss,
    train,
)

QCFG = QuantizerConfig()


def small_model(seed=0, quantize=True, n_outputs=2):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cfg = ModelConfig(n_outputs=n_outputs)
    return ToyModel(cfg, QCFG, rng, quantize=quantize)


# -- optimizer ----------------------------------------------------------------


def test_adam_descends_quadratic_bowl():
    target = np.array([1.0, -2.0, 3.0])
    x = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam([x], lr=0.05)
    dist0 = np.linalg.norm(x.data - target)
    for _ in range(100):
        opt.zero_grad()
        d = x - target
        (d * d).sum().backward()
        opt.step()
    assert np.linalg.norm(x.data - target) < dist0 * 0.5


def test_linear_decay_schedule():
    x = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([x], lr=1.0)
    sched = LinearDecay(opt, total_steps=4, warmup_ratio=0.0)
    assert opt.lr == 1.0  # full lr before any step
    seen = []
    for _ in range(4):
        sched.step()
        seen.append(opt.lr)
    assert seen == [0.75, 0.5, 0.25, 0.0]


def test_linear_decay_with_warmup():
    x = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([x], lr=1.0)
    sched = LinearDecay(opt, total_steps=10, warmup_ratio=0.2)
    assert opt.lr == 0.0  # ramp starts at zero
    sched.step()
    assert opt.lr == pytest.approx(0.5)
    sched.step()
    assert opt.lr == pytest.approx(1.0)


# -- tasks --------------------------------------------------------------------


def test_classification_batches_balanced_and_correct():
    task = make_task(TaskSpec(seed=3))
    ids, labels = task.train_batch(64)
    assert ids.shape == (64, 16)
    assert labels.sum() == 32
    present = (ids == task.token).any(axis=1)
    assert np.array_equal(present, labels.astype(bool))


def test_classification_splits_disjoint_streams():
    task = make_task(TaskSpec(seed=4))
    a, _ = task.train_batch(8)
    b, _ = task.eval_batch(8)
    assert not np.array_equal(a, b)


def test_regression_targets_use_planted_low_rank_teacher():
    spec = TaskSpec(kind=REGRESSION, seed=5, teacher_rank=2)
    task = make_task(spec, d=32)
    ids, y = task.train_batch(16)
    assert y.shape == (16,)
    assert np.issubdtype(y.dtype, np.floating)
    assert np.linalg.matrix_rank(task.Bt @ task.At) == 2


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(kind="nope")
    with pytest.raises(ValueError):
        TaskSpec(vocab_size=1)


# -- objective ----------------------------------------------------------------


class StubModel:
    """Zero task loss; one quantizer site and one rank-gated block."""

    def __init__(self):
        self.q = Quantizer(QuantizerConfig())
        self.q.state.phi.data[:] = 0.0
        rng = np.random.default_rng(0)
        self.block = BLoraLinear(np.zeros((2, 2)), 3, 16.0, QuantizerConfig(), rng)
        self.block.xi.data[:] = 0.0

    def forward(self, ids, rng=None):
        return Tensor(np.zeros((len(ids), 1)))

    def quantizer_list(self):
        return [self.q]

    def adapter_blocks(self):
        return [self.block]


def test_objective_known_decomposition_value():
    stub = StubModel()
    batch = (np.zeros((2, 4), dtype=np.int64), np.zeros(2, dtype=np.float64))
    cfg = TrainConfig(lambda_q=1.0, lambda_r=1.0)
    val = objective(stub, batch, cfg).item()
    assert val == pytest.approx(0.9375 + 0.75, abs=1e-12)


def test_objective_reduces_to_task_loss_when_lambdas_zero():
    model = small_model(seed=1, quantize=False)
    task = make_task(TaskSpec(seed=1))
    batch = task.train_batch(4)
    cfg = TrainConfig(lambda_q=0.0, lambda_r=0.0)
    a = objective(model, batch, cfg).item()
    b = task_loss(model, batch).item()
    assert a == pytest.approx(b, abs=0)


def test_objective_vanishes_regularizers_at_closed_gates():
    model = small_model(seed=2, quantize=False)
    for b in model.adapter_blocks():
        b.xi.data[:] = -60.0
    for q in model.quantizer_list():
        q.state.phi.data[:] = -60.0
    task = make_task(TaskSpec(seed=2))
    batch = task.train_batch(4)
    on = objective(model, batch, TrainConfig(lambda_q=1.0, lambda_r=1.0)).item()
    off = task_loss(model, batch).item()
    assert on == pytest.approx(off, abs=1e-12)


def test_objective_decomposition_identity():
    """objective(lq, lr) - objective(0, 0) == lq*sum(gate) + lr*sum(rank)."""
    model = small_model(seed=3, quantize=True)
    model.train()
    task = make_task(TaskSpec(seed=3))
    batch = task.train_batch(4)
    lq, lr = 2.5, 0.75

    def run(lmq, lmr):
        rng = np.random.default_rng(42)  # same draws both times
        cfg = TrainConfig(lambda_q=lmq, lambda_r=lmr)
        with T.no_grad():
            return objective(model, batch, cfg, rng).item()

    full = run(lq, lr)
    base = run(0.0, 0.0)
    with T.no_grad():
        gate_sum = sum(q.regularizer().item() for q in model.quantizer_list())
        rank_sum = sum(b.regularizer().item() for b in model.adapter_blocks())
    assert abs((full - base) - (lq * gate_sum + lr * rank_sum)) < 1e-10


def test_regularizer_pressure_positive_gradient():
    model = small_model(seed=4, quantize=True)
    task = make_task(TaskSpec(seed=4))
    batch = task.train_batch(4)
    # regularizer-only objective: every phi and xi gradient strictly positive
    loss = Tensor(0.0)
    for q in model.quantizer_list():
        loss = loss + q.regularizer()
    for b in model.adapter_blocks():
        loss = loss + b.regularizer()
    loss.backward()
    for q in model.quantizer_list():
        assert (q.state.phi.grad > 0).all()
    for b in model.adapter_blocks():
        assert (b.xi.grad > 0).all()


# -- gate train/eval consistency ----------------------------------------------


def test_saturated_gates_agree_between_train_and_eval():
    rng = np.random.default_rng(6)
    for sign in (+1, -1):
        q = Quantizer(QCFG)
        q.state.phi.data[:] = sign * 50.0
        ev = [z.item() for z in eval_gates(q.state, q.config).z]
        for _ in range(200):
            tr = [z.item() for z in sample_gates(q.state, q.config, rng).z]
            assert tr == ev


# -- training loop ------------------------------------------------------------


def quick_config(**kw):
    base = dict(
        lambda_q=1.0, lambda_r=1.0, epochs=2, steps_per_epoch=5, seed=0
    )
    base.update(kw)
    return TrainConfig(**base)


def test_train_produces_report_structure():
    model = small_model(seed=0)
    task = make_task(TaskSpec(seed=0))
    rep = train(model, task, quick_config())
    assert len(rep["loss_curve"]) == 10
    assert len(rep["epochs"]) == 2
    assert set(rep["epochs"][0]) == {
        "epoch", "loss", "mean_effective_rank", "mean_expected_bits"
    }
    assert len(rep["per_block"]) == 6
    row = rep["per_block"][0]
    assert set(row) == {"layer", "site", "effective_rank", "decided_bits"}
    assert set(row["decided_bits"]) == {"W0", "A", "B", "E", "hA", "hE", "out"}
    assert 1 <= row["effective_rank"] <= 8
    assert "accuracy" in rep["metrics"]
    assert rep["wall_time_s"] > 0


def test_train_deterministic_given_seed():
    def run():
        model = small_model(seed=7)
        task = make_task(TaskSpec(seed=7))
        return train(model, task, quick_config(seed=7))

    a, b = run(), run()
    assert a["loss_curve"] == b["loss_curve"]
    assert a["per_block"] == b["per_block"]
    ma = {k: v for k, v in a["metrics"].items()}
    mb = {k: v for k, v in b["metrics"].items()}
    assert ma == mb
    assert a["epochs"] == b["epochs"]


def test_train_aborts_on_non_finite_loss():
    model = small_model(seed=8)
    model.head.W1.data[:] = np.nan
    task = make_task(TaskSpec(seed=8))
    with pytest.raises(NonFiniteLossError) as err:
        train(model, task, quick_config())
    assert "step 0" in str(err.value)


def test_frozen_tensors_unchanged_by_training():
    model = small_model(seed=9)
    task = make_task(TaskSpec(seed=9))
    before = frozen_hash(model)
    train(model, task, quick_config())
    assert frozen_hash(model) == before


def test_untrained_eval_is_chance_level():
    model = small_model(seed=10)
    task = make_task(TaskSpec(seed=10))
    metrics = evaluate(model, task, n_samples=1000, batch_size=100)
    assert 0.35 <= metrics["accuracy"] <= 0.65
    assert metrics["n_eval_samples"] == 1000


def test_regression_training_decreases_loss():
    model = small_model(seed=11, quantize=False, n_outputs=1)
    task = make_task(TaskSpec(kind=REGRESSION, seed=11), d=32)
    cfg = quick_config(lambda_q=0.0, lambda_r=0.0, epochs=1, steps_per_epoch=60)
    rep = train(model, task, cfg)
    lc = rep["loss_curve"]
    assert np.mean(lc[-10:]) < np.mean(lc[:10])
    assert "mse" in rep["metrics"]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_q=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
