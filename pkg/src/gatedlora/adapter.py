"""Gated-rank low-rank adapter blocks and the attention layer hosting them.

A block computes W0 x + scaling * B diag(E_hat) A x where E_hat gates the
diagonal through a nested chain of binarized rank gates, so the realized rank
is learnable. Seven quantizers attach to the block: four weight sites
(W0, A, B, E) with per-call min/max ranges and three activation sites
(hA, hE, out) with EMA ranges.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from gatedlora import tensor as T
from gatedlora.tensor import Tensor
from gatedlora.quantizer import (
    EMA_MINMAX,
    PER_CALL_MINMAX,
    Quantizer,
    QuantizerConfig,
)

# fixed draw/report order for the seven quantizer sites of a block
QUANT_SITES = ("W0", "A", "B", "E", "hA", "hE", "out")


def rank_gates(xi: Tensor, mode: str = "train", rng=None) -> Tensor:
    """Binary gate vector (g_1 .. g_r), g_1 = 1, g_i = round(prod sigma(xi_j)).

    The cumulative product makes the rounded chain non-increasing, so a closed
    gate closes everything finer. Binarization is deterministic (straight
    through rounding of the product); rng is accepted for signature parity and
    unused. In train mode gradients reach xi through the STE.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        with T.no_grad():
            probs = 1.0 / (1.0 + np.exp(-xi.data))
            hard = np.rint(np.cumprod(probs))
            return Tensor(np.concatenate([[1.0], hard]))
    if xi.size == 0:
        return Tensor(np.ones(1))
    tail = T.round_ste(T.cumprod(T.sigmoid(xi)))
    return T.concat([Tensor(np.ones(1)), tail])


def rank_regularizer(xi: Tensor) -> Tensor:
    """Expected open-gate count over the shrinkable slots: sum of cumulative
    sigmoid products (the always-on first slot is a constant and excluded)."""
    if xi.size == 0:
        return Tensor(0.0)
    return T.cumprod(T.sigmoid(xi)).sum()


class BLoraLinear:
    """Frozen base matrix plus a quantized, rank-gated low-rank update."""

    def __init__(
        self,
        w0: np.ndarray,
        r: int,
        lora_alpha: float,
        qconfig: QuantizerConfig,
        rng: np.random.Generator,
        quantize: bool = True,
    ):
        if r < 1:
            raise ValueError(f"rank must be >= 1, got {r}")
        w0 = np.asarray(w0, dtype=np.float64)
        if w0.ndim != 2:
            raise ValueError("w0 must be a matrix")
        d1, d2 = w0.shape
        self.W0 = Tensor(w0.copy())
        self.A = Tensor(rng.normal(0.0, 0.02, size=(r, d2)), requires_grad=True)
        self.B = Tensor(np.zeros((d1, r)), requires_grad=True)
        self.E = Tensor(np.ones(r), requires_grad=True)
        self.xi = Tensor(np.full(max(r - 1, 0), 6.0), requires_grad=True)
        self.r = r
        self.scaling = lora_alpha / r
        self.quantize = quantize
        self.training = True
        self.quantizers = {
            "W0": Quantizer(qconfig, PER_CALL_MINMAX),
            "A": Quantizer(qconfig, PER_CALL_MINMAX),
            "B": Quantizer(qconfig, PER_CALL_MINMAX),
            "E": Quantizer(qconfig, PER_CALL_MINMAX),
            "hA": Quantizer(qconfig, EMA_MINMAX),
            "hE": Quantizer(qconfig, EMA_MINMAX),
            "out": Quantizer(qconfig, EMA_MINMAX),
        }

    def train(self):
        self.training = True
        for q in self.quantizers.values():
            q.train()
        return self

    def eval(self):
        self.training = False
        for q in self.quantizers.values():
            q.eval()
        return self

    def parameters(self) -> list:
        ps = [self.A, self.B, self.E]
        if self.xi.size:
            ps.append(self.xi)
        ps.extend(q.state.phi for q in self.quantizers.values())
        return ps

    def frozen_tensors(self) -> list:
        return [self.W0]

    def _q(self, site: str, x: Tensor, rng) -> Tensor:
        q = self.quantizers[site]
        gates = q.draw_gates(rng)
        return q(x, gates)

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """x: (..., d2) -> (..., d1); row-vector convention (x @ M.T)."""
        if x.shape[-1] != self.W0.shape[1]:
            raise ValueError(
                f"input dim {x.shape[-1]} does not match W0 columns {self.W0.shape[1]}"
            )
        mode = "train" if self.training else "eval"
        g = rank_gates(self.xi, mode=mode)
        if self.quantize:
            wq = self._q("W0", self.W0, rng)
            aq = self._q("A", self.A, rng)
            bq = self._q("B", self.B, rng)
            eq = self._q("E", self.E, rng)
            h = x @ aq.T
            h = self._q("hA", h, rng)
            h = self._q("hE", (eq * g) * h, rng)
            out = x @ wq.T + (h @ bq.T) * self.scaling
            return self._q("out", out, rng)
        h = x @ self.A.T
        h = (self.E * g) * h
        return x @ self.W0.T + (h @ self.B.T) * self.scaling

    __call__ = forward

    def effective_rank(self) -> int:
        g = rank_gates(self.xi, mode="eval")
        return int(g.data.sum())

    def regularizer(self) -> Tensor:
        return rank_regularizer(self.xi)

    def decided_bits(self) -> dict:
        return {site: self.quantizers[site].decided_bits() for site in QUANT_SITES}


class AttentionLayer:
    """Multi-head self-attention; q/k/v projections carry adapter blocks,
    the output projection stays frozen and unquantized."""

    def __init__(
        self,
        d: int,
        heads: int,
        r: int,
        lora_alpha: float,
        qconfig: QuantizerConfig,
        rng: np.random.Generator,
        quantize: bool = True,
    ):
        if d % heads != 0:
            raise ValueError(f"heads ({heads}) must divide model dim ({d})")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        std = 1.0 / np.sqrt(d)

        def block():
            return BLoraLinear(
                rng.normal(0.0, std, size=(d, d)), r, lora_alpha, qconfig, rng,
                quantize=quantize,
            )

        self.wq = block()
        self.wk = block()
        self.wv = block()
        self.wo = Tensor(rng.normal(0.0, std, size=(d, d)))

    def blocks(self) -> dict:
        return {"q": self.wq, "k": self.wk, "v": self.wv}

    def train(self):
        for b in self.blocks().values():
            b.train()
        return self

    def eval(self):
        for b in self.blocks().values():
            b.eval()
        return self

    def parameters(self) -> list:
        ps = []
        for b in self.blocks().values():
            ps.extend(b.parameters())
        return ps

    def frozen_tensors(self) -> list:
        return [self.wq.W0, self.wk.W0, self.wv.W0, self.wo]

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        """x: (batch, seq, d) -> (batch, seq, d)."""
        bsz, seq, d = x.shape
        q = self.wq(x, rng)
        k = self.wk(x, rng)
        v = self.wv(x, rng)

        def split(t):
            t = t.reshape((bsz, seq, self.heads, self.head_dim))
            return T.transpose(t, (0, 2, 1, 3))  # (batch, heads, seq, hd)

        qh, kh, vh = split(q), split(k), split(v)
        scores = (qh @ T.transpose(kh, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        probs = T.softmax(scores)
        ctx = probs @ vh  # (batch, heads, seq, hd)
        ctx = T.transpose(ctx, (0, 2, 1, 3)).reshape((bsz, seq, d))
        return ctx @ self.wo.T

    __call__ = forward
