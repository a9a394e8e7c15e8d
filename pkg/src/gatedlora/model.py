"""Toy transformer host: frozen embedding and feed-forward stacks, adapter
blocks on the attention projections, and a trainable two-layer head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from gatedlora import tensor as T
from gatedlora.tensor import Tensor
from gatedlora.adapter import AttentionLayer, BLoraLinear
from gatedlora.quantizer import QuantizerConfig


@dataclass
class ModelConfig:
    d: int = 32
    heads: int = 4
    n_layers: int = 2
    r: int = 8
    lora_alpha: float = 16.0
    vocab_size: int = 64
    seq_len: int = 16
    d_ff: int = 64
    head_hidden: int = 64
    n_outputs: int = 2

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        if self.r < 1 or self.n_layers < 1:
            raise ValueError("r and n_layers must be >= 1")


class FrozenFFN:
    """Two frozen linear maps with a relu between; no biases."""

    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.W1 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d_ff, d)))
        self.W2 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_ff), size=(d, d_ff)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(x @ self.W1.T) @ self.W2.T

    def frozen_tensors(self) -> list:
        return [self.W1, self.W2]


class Head:
    """Trainable two-layer readout on the pooled representation.

    The output layer starts at zero so untrained logits are exactly zero
    (initial classification loss is log(2) on a balanced pair of classes).
    """

    def __init__(self, d: int, hidden: int, n_outputs: int, rng: np.random.Generator):
        self.W1 = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(d), size=(hidden, d)), requires_grad=True
        )
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.W2 = Tensor(np.zeros((n_outputs, hidden)), requires_grad=True)
        self.b2 = Tensor(np.zeros(n_outputs), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(x @ self.W1.T + self.b1)
        return h @ self.W2.T + self.b2

    def parameters(self) -> list:
        return [self.W1, self.b1, self.W2, self.b2]


class ToyModel:
    """Embedding -> [attention + frozen FFN, residual + layernorm] x N ->
    mean pool -> head. Only adapter factors, gate logits, and the head train."""

    def __init__(
        self,
        config: ModelConfig,
        qconfig: QuantizerConfig,
        rng: np.random.Generator,
        quantize: bool = True,
    ):
        self.config = config
        self.qconfig = qconfig
        self.embedding = Tensor(rng.normal(size=(config.vocab_size, config.d)))
        self.layers = []
        for _ in range(config.n_layers):
            attn = AttentionLayer(
                config.d, config.heads, config.r, config.lora_alpha, qconfig, rng,
                quantize=quantize,
            )
            ffn = FrozenFFN(config.d, config.d_ff, rng)
            self.layers.append((attn, ffn))
        self.head = Head(config.d, config.head_hidden, config.n_outputs, rng)
        self.training = True

    def train(self):
        self.training = True
        for attn, _ in self.layers:
            attn.train()
        return self

    def eval(self):
        self.training = False
        for attn, _ in self.layers:
            attn.eval()
        return self

    def forward(self, ids: np.ndarray, rng: Optional[np.random.Generator] = None) -> Tensor:
        x = T.embedding(self.embedding, np.asarray(ids))
        for attn, ffn in self.layers:
            x = T.layernorm(x + attn(x, rng))
            x = T.layernorm(x + ffn(x))
        # sum (not mean) pooling keeps the pooled scale large enough that the
        # head trains quickly at the small pinned learning rate
        pooled = x.sum(axis=1)
        return self.head(pooled)

    __call__ = forward

    def named_blocks(self) -> Iterator[tuple]:
        """Yields (layer_index, site, block) in fixed report order."""
        for i, (attn, _) in enumerate(self.layers):
            for site, block in attn.blocks().items():
                yield i, site, block

    def adapter_blocks(self) -> list[BLoraLinear]:
        return [b for _, _, b in self.named_blocks()]

    def quantizer_list(self) -> list:
        qs = []
        for b in self.adapter_blocks():
            qs.extend(b.quantizers.values())
        return qs

    def parameters(self) -> list:
        ps = []
        for attn, _ in self.layers:
            ps.extend(attn.parameters())
        ps.extend(self.head.parameters())
        return ps

    def frozen_tensors(self) -> list:
        ts = [self.embedding]
        for attn, ffn in self.layers:
            ts.extend(attn.frozen_tensors())
            ts.extend(ffn.frozen_tensors())
        return ts
