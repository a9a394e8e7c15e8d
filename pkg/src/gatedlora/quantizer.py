"""Learnable-bitwidth quantizer.

A value is decomposed residually across the bitwidth ladder (2, 4, 8, 16, 32):
the 2-bit base plus nested refinement terms, each behind a stochastic gate,

    x_q = x_2 + z_4 (eps_4 + z_8 (eps_8 + z_16 (eps_16 + z_32 eps_32)))

During training the gates are relaxed hard-concrete draws, so the gate logits
phi receive gradient; at eval each gate collapses to {0,1} by thresholding its
keep probability, and nesting forces every gate finer than an off gate to 0.

Compatibility flags: ``verbatim_alg2`` reproduces the printed stretch/eval
formulas (mirrored stretch, inverted eval indicator); ``temperature_per_bitwidth``
divides each gate's logit by its bit count instead of the shared temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gatedlora import tensor as T
from gatedlora.tensor import Tensor

BITWIDTHS = (2, 4, 8, 16, 32)
GATED_BITS = (4, 8, 16, 32)

PER_CALL_MINMAX = "per-call-minmax"
EMA_MINMAX = "ema-minmax"

# beta - alpha below this is treated as a constant tensor and widened
DEGENERATE_RANGE = 1e-8
WIDEN_HALF_WIDTH = 1e-4


class ModeError(RuntimeError):
    """Raised when a train-only op runs in eval mode or vice versa."""


@dataclass
class QuantizerConfig:
    zeta1: float = -0.1
    zeta2: float = 1.1
    threshold_t: float = 0.34
    temperature: float = 2.0 / 3.0
    bitwidths: tuple = BITWIDTHS
    verbatim_alg2: bool = False
    temperature_per_bitwidth: bool = False

    def __post_init__(self):
        if not (self.zeta1 < 0 < 1 < self.zeta2):
            raise ValueError(
                f"stretch interval must straddle [0,1]: zeta1={self.zeta1}, zeta2={self.zeta2}"
            )
        if not 0 < self.threshold_t < 1:
            raise ValueError(f"threshold_t must lie in (0,1), got {self.threshold_t}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if tuple(self.bitwidths) != BITWIDTHS:
            raise ValueError(f"bitwidth ladder is fixed to {BITWIDTHS}")

    def gate_temperature(self, bits: int) -> float:
        return float(bits) if self.temperature_per_bitwidth else self.temperature


class QuantizerState:
    """Per-site learnable state: gate logits plus the clipping range."""

    def __init__(
        self,
        range_mode: str = PER_CALL_MINMAX,
        phi_init: float = 6.0,
        ema_momentum: float = 0.9,
    ):
        if range_mode not in (PER_CALL_MINMAX, EMA_MINMAX):
            raise ValueError(f"unknown range_mode {range_mode!r}")
        if not 0 <= ema_momentum < 1:
            raise ValueError(f"ema_momentum must lie in [0,1), got {ema_momentum}")
        self.phi = Tensor(np.full(len(GATED_BITS), phi_init), requires_grad=True)
        self.alpha: Optional[float] = None
        self.beta: Optional[float] = None
        self.range_mode = range_mode
        self.ema_momentum = ema_momentum


@dataclass
class GateDraw:
    z: list  # 4 scalar Tensors, order (4, 8, 16, 32)
    u: Optional[np.ndarray]  # uniform draws (training) or None (eval)
    training: bool = True


def step_size(alpha: float, beta: float, bits: int) -> float:
    """Grid step at `bits`; closed form (beta-alpha)/(2^bits - 1).

    Coincides with the ladder recursion s_b = s_{b/2} / (2^{b/2} + 1) from
    s_2 = (beta-alpha)/3, because (2^{b/2}-1)(2^{b/2}+1) = 2^b - 1.
    """
    if bits not in BITWIDTHS:
        raise ValueError(f"bits must be one of {BITWIDTHS}, got {bits}")
    if not alpha < beta:
        raise ValueError(f"need alpha < beta, got [{alpha}, {beta}]")
    return (beta - alpha) / (2**bits - 1)


def resolve_range(x: Tensor, state: QuantizerState, training: bool) -> tuple:
    """Produce the (alpha, beta) to quantize against, updating state.

    Weight sites recompute min/max per call. Activation sites track an EMA of
    per-batch min/max during training and freeze it at eval (first eval call
    without history falls back to per-call min/max).
    """
    if x.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    lo = float(x.data.min())
    hi = float(x.data.max())
    if state.range_mode == PER_CALL_MINMAX:
        alpha, beta = _widen(lo, hi)
        state.alpha, state.beta = alpha, beta
    else:
        # EMA statistics stay raw; widening applies only at the point of use
        if training:
            if state.alpha is None:
                state.alpha, state.beta = lo, hi
            else:
                m = state.ema_momentum
                state.alpha = m * state.alpha + (1 - m) * lo
                state.beta = m * state.beta + (1 - m) * hi
            alpha, beta = _widen(state.alpha, state.beta)
        else:
            if state.alpha is None:
                alpha, beta = _widen(lo, hi)
            else:
                alpha, beta = _widen(state.alpha, state.beta)
    return alpha, beta


def _widen(alpha: float, beta: float) -> tuple:
    if beta - alpha < DEGENERATE_RANGE:
        c = 0.5 * (alpha + beta)
        return c - WIDEN_HALF_WIDTH, c + WIDEN_HALF_WIDTH
    return alpha, beta


def sample_gates(
    state: QuantizerState, config: QuantizerConfig, rng: np.random.Generator
) -> GateDraw:
    """Relaxed training gates; one uniform draw per bitwidth."""
    u = rng.uniform(0.0, 1.0, size=len(GATED_BITS))
    u = np.clip(u, 1e-12, 1.0 - 1e-12)  # keep the logistic noise finite
    g = np.log(u / (1.0 - u))
    inv_tau = 1.0 / np.array([config.gate_temperature(b) for b in GATED_BITS])
    srel = T.sigmoid((state.phi + g) * inv_tau)
    if config.verbatim_alg2:
        stretched = srel * (config.zeta1 - config.zeta2) + config.zeta2
    else:
        stretched = srel * (config.zeta2 - config.zeta1) + config.zeta1
    zvec = T.clip(stretched, 0.0, 1.0)
    return GateDraw(z=[zvec[i] for i in range(len(GATED_BITS))], u=u, training=True)


def eval_gates(state: QuantizerState, config: QuantizerConfig) -> GateDraw:
    """Deterministic hard gates: keep-probability thresholding plus nesting."""
    z = []
    alive = True
    with T.no_grad():
        for i, bits in enumerate(GATED_BITS):
            phi = float(state.phi.data[i])
            tau = config.gate_temperature(bits)
            if config.verbatim_alg2:
                logit = tau * np.log(-config.zeta2 / config.zeta1) - phi
                on = _sigmoid(logit) < config.threshold_t
            else:
                logit = phi - tau * np.log(-config.zeta1 / config.zeta2)
                on = _sigmoid(logit) > config.threshold_t
            on = bool(on) and alive
            alive = on
            z.append(Tensor(1.0 if on else 0.0))
    return GateDraw(z=z, u=None, training=False)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def quantize(
    x: Tensor, state: QuantizerState, config: QuantizerConfig, gates: GateDraw
) -> Tensor:
    """Residual multi-bitwidth quantization of x under the given gates.

    Gradients reach x through clip + straight-through rounding and reach phi
    through relaxed gates; step sizes and ranges are constants.
    """
    alpha, beta = resolve_range(x, state, gates.training)
    xc = T.clip(x, alpha, beta)
    s2 = step_size(alpha, beta, 2)
    x2 = T.round_ste(xc * (1.0 / s2)) * s2
    base = x2
    eps = []
    for bits in GATED_BITS:
        sb = step_size(alpha, beta, bits)
        e = T.round_ste((xc - base) * (1.0 / sb)) * sb
        eps.append(e)
        base = base + e
    # x2 + z4(e4 + z8(e8 + z16(e16 + z32 e32))), innermost first
    acc = eps[3] * gates.z[3]
    acc = (eps[2] + acc) * gates.z[2]
    acc = (eps[1] + acc) * gates.z[1]
    acc = (eps[0] + acc) * gates.z[0]
    return x2 + acc


def gate_regularizer(state: QuantizerState, config: QuantizerConfig) -> Tensor:
    """Expected number of active refinement gates: sum of nested keep probs."""
    return T.cumprod(T.sigmoid(state.phi)).sum()


def decided_bitwidth(state: QuantizerState, config: QuantizerConfig) -> int:
    """Finest bitwidth whose nested eval gate is on; 2 if none."""
    gates = eval_gates(state, config)
    bits = 2
    for i, b in enumerate(GATED_BITS):
        if gates.z[i].item() == 1.0:
            bits = b
    return bits


def expected_bitwidth(
    state: QuantizerState, config: QuantizerConfig, training: bool = True
) -> float:
    """Training: 2 + sum of (added bits) * (nested keep prob). Eval: decided."""
    if not training:
        return float(decided_bitwidth(state, config))
    probs = 1.0 / (1.0 + np.exp(-state.phi.data))
    prod = 1.0
    out = 2.0
    for i, b in enumerate(GATED_BITS):
        prod *= probs[i]
        out += (b / 2) * prod
    return float(out)


class Quantizer:
    """One quantization site: state + config + train/eval mode.

    The functional core above does the math; this wrapper owns the mode flag
    and the per-forward gate draw that blocks reuse.
    """

    def __init__(
        self,
        config: QuantizerConfig,
        range_mode: str = PER_CALL_MINMAX,
        phi_init: float = 6.0,
        ema_momentum: float = 0.9,
    ):
        self.config = config
        self.state = QuantizerState(
            range_mode=range_mode, phi_init=phi_init, ema_momentum=ema_momentum
        )
        self.training = True

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def draw_gates(self, rng: Optional[np.random.Generator] = None) -> GateDraw:
        if self.training:
            if rng is None:
                raise ModeError("training-mode gate draw needs an rng")
            return sample_gates(self.state, self.config, rng)
        return eval_gates(self.state, self.config)

    def sample_gates(self, rng: np.random.Generator) -> GateDraw:
        if not self.training:
            raise ModeError("sample_gates is train-only; quantizer is in eval mode")
        return sample_gates(self.state, self.config, rng)

    def __call__(self, x: Tensor, gates: GateDraw) -> Tensor:
        return quantize(x, self.state, self.config, gates)

    def regularizer(self) -> Tensor:
        return gate_regularizer(self.state, self.config)

    def expected_bits(self) -> float:
        return expected_bitwidth(self.state, self.config, training=self.training)

    def decided_bits(self) -> int:
        return decided_bitwidth(self.state, self.config)

    def state_dict(self) -> dict:
        return {
            "phi": [float(v) for v in self.state.phi.data],
            "alpha": self.state.alpha,
            "beta": self.state.beta,
            "range_mode": self.state.range_mode,
            "decided_bits": self.decided_bits(),
        }

    def load_state_dict(self, d: dict) -> None:
        self.state.phi.data[:] = np.asarray(d["phi"], dtype=np.float64)
        self.state.alpha = d["alpha"]
        self.state.beta = d["beta"]
        self.state.range_mode = d["range_mode"]
