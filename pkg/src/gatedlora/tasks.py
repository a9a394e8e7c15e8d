"""Synthetic tasks sized for desk-scale training runs.

Both tasks draw samples from seeded streams; train and eval use disjoint
child seeds of the task seed, so the splits never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASSIFICATION = "sequence-classification"
REGRESSION = "low-rank-regression"


@dataclass
class TaskSpec:
    kind: str = CLASSIFICATION
    vocab_size: int = 64
    seq_len: int = 16
    n_classes: int = 2
    seed: int = 0
    teacher_rank: int = 2  # regression only

    def __post_init__(self):
        if self.kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.vocab_size < 2 or self.seq_len < 1:
            raise ValueError("vocab_size >= 2 and seq_len >= 1 required")


class SequenceClassification:
    """Label 1 iff a designated token id occurs anywhere in the sequence.

    Balanced by construction: half of each batch plants the token at a random
    position, the other half samples tokens from the vocabulary without it.
    A single attention head keyed on the designated token solves the task.
    """

    kind = CLASSIFICATION

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        ss = np.random.SeedSequence(spec.seed)
        s_train, s_eval, s_tok = ss.spawn(3)
        self.train_rng = np.random.default_rng(s_train)
        self.eval_rng = np.random.default_rng(s_eval)
        self.token = int(np.random.default_rng(s_tok).integers(0, spec.vocab_size))
        self.n_outputs = spec.n_classes

    def _sample(self, n: int, rng: np.random.Generator):
        vocab, seq = self.spec.vocab_size, self.spec.seq_len
        others = np.array([t for t in range(vocab) if t != self.token])
        ids = others[rng.integers(0, len(others), size=(n, seq))]
        labels = np.zeros(n, dtype=np.int64)
        pos_count = n // 2
        pick = rng.permutation(n)[:pos_count]
        where = rng.integers(0, seq, size=pos_count)
        ids[pick, where] = self.token
        labels[pick] = 1
        return ids, labels

    def train_batch(self, n: int):
        return self._sample(n, self.train_rng)

    def eval_batch(self, n: int):
        return self._sample(n, self.eval_rng)


class LowRankRegression:
    """Scalar regression against a teacher with a planted low-rank update.

    Teacher: y = v . (W0 + Bt @ At) u, where u is the mean of per-token
    feature rows over the sequence and rank(Bt @ At) = teacher_rank. The
    student sees only (ids, y).
    """

    kind = REGRESSION

    def __init__(self, spec: TaskSpec, d: int = 32):
        self.spec = spec
        ss = np.random.SeedSequence(spec.seed)
        s_train, s_eval, s_teacher = ss.spawn(3)
        self.train_rng = np.random.default_rng(s_train)
        self.eval_rng = np.random.default_rng(s_eval)
        trng = np.random.default_rng(s_teacher)
        k = spec.teacher_rank
        self.features = trng.normal(size=(spec.vocab_size, d))
        self.W0 = trng.normal(size=(d, d)) / np.sqrt(d)
        self.Bt = trng.normal(size=(d, k)) / np.sqrt(k)
        self.At = trng.normal(size=(k, d)) / np.sqrt(d)
        self.v = trng.normal(size=d) / np.sqrt(d)
        self.n_outputs = 1

    def _sample(self, n: int, rng: np.random.Generator):
        spec = self.spec
        ids = rng.integers(0, spec.vocab_size, size=(n, spec.seq_len))
        u = self.features[ids].mean(axis=1)  # (n, d)
        w = self.W0 + self.Bt @ self.At
        y = (u @ w.T) @ self.v
        return ids, y

    def train_batch(self, n: int):
        return self._sample(n, self.train_rng)

    def eval_batch(self, n: int):
        return self._sample(n, self.eval_rng)


def make_task(spec: TaskSpec, d: int = 32):
    if spec.kind == CLASSIFICATION:
        return SequenceClassification(spec)
    return LowRankRegression(spec, d=d)
