"""Elman recurrent classifier over syscall token sequences (full BPTT)."""

from __future__ import annotations

import numpy as np

from ..hashing import SplitMix64
from .base import (
    BaseEstimator,
    bce_from_logits,
    check_labels,
    glorot_uniform,
    probability,
    require_both_classes,
    sigmoid,
)


class EmptySequence(ValueError):
    """A token sequence with zero length cannot be scored or trained on."""


class RnnClassifier(BaseEstimator):
    """Embedding + tanh recurrence, sigmoid readout of the final hidden state.

        h_t = tanh(Wxh e(x_t) + Whh h_{t-1} + bh),  h_0 = 0
        p   = sigmoid(wo . h_T + bo)

    Training is plain SGD with one update per example, gradients computed by
    full backpropagation through time over the (t_max-truncated) sequence and
    clipped to a global L2 norm of ``clip``. Example order is reshuffled each
    epoch with the seeded generator; initialization matches the MLP scheme
    (uniform Glorot, biases zero), drawn in the fixed order embedding, Wxh,
    Whh, wo. ``epochs=0`` returns the freshly initialized model.
    """

    def __init__(
        self,
        hidden: int = 32,
        embed: int = 16,
        lr: float = 0.01,
        epochs: int = 30,
        t_max: int = 512,
        clip: float = 5.0,
        seed: int = 0,
        vocab: int = 256,
    ):
        self.hidden = hidden
        self.embed = embed
        self.lr = lr
        self.epochs = epochs
        self.t_max = t_max
        self.clip = clip
        self.seed = seed
        self.vocab = vocab
        self.emb_: np.ndarray | None = None
        self.Wxh_: np.ndarray | None = None
        self.Whh_: np.ndarray | None = None
        self.bh_: np.ndarray | None = None
        self.wo_: np.ndarray | None = None
        self.bo_: float | None = None

    @property
    def kind(self) -> str:
        return "rnn"

    def _init_params(self) -> None:
        if self.hidden < 1 or self.embed < 1 or self.vocab < 1:
            raise ValueError("hidden, embed and vocab must be at least 1")
        rng = SplitMix64(self.seed)
        self.emb_ = glorot_uniform(rng, self.vocab, self.embed, fan_in=self.vocab, fan_out=self.embed)
        self.Wxh_ = glorot_uniform(rng, self.hidden, self.embed, fan_in=self.embed, fan_out=self.hidden)
        self.Whh_ = glorot_uniform(rng, self.hidden, self.hidden, fan_in=self.hidden, fan_out=self.hidden)
        self.bh_ = np.zeros(self.hidden, dtype=np.float64)
        self.wo_ = glorot_uniform(rng, 1, self.hidden, fan_in=self.hidden, fan_out=1)[0]
        self.bo_ = 0.0

    def _check_sequences(self, sequences) -> list[np.ndarray]:
        out = []
        for i, seq in enumerate(sequences):
            seq = np.asarray(seq, dtype=np.int64)
            if seq.ndim != 1 or seq.shape[0] == 0:
                raise EmptySequence(f"sequence {i} is empty")
            if seq.min() < 0 or seq.max() >= self.vocab:
                raise ValueError(f"sequence {i} has token ids outside [0, {self.vocab})")
            out.append(seq[: self.t_max])
        return out

    def fit(self, sequences, y) -> "RnnClassifier":
        seqs = self._check_sequences(sequences)
        y = check_labels(y, len(seqs))
        require_both_classes(y)
        self._init_params()
        rng = SplitMix64(self.seed + 1)  # separate stream from init
        for _ in range(self.epochs):
            order = list(range(len(seqs)))
            rng.shuffle(order)
            for i in order:
                grads = self._example_grads_seq(seqs[i], float(y[i]))
                self._apply(grads)
        return self

    def _apply(self, grads: dict[str, np.ndarray]) -> None:
        sq = 0.0
        for g in grads.values():
            sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        scale = self.lr if norm <= self.clip else self.lr * (self.clip / norm)
        self.emb_ -= scale * grads["emb"]
        self.Wxh_ -= scale * grads["Wxh"]
        self.Whh_ -= scale * grads["Whh"]
        self.bh_ -= scale * grads["bh"]
        self.wo_ -= scale * grads["wo"]
        self.bo_ -= scale * float(grads["bo"][0])

    def _forward(self, seq: np.ndarray) -> tuple[np.ndarray, float]:
        """Hidden states for one sequence; returns (hs with h_0 at row 0, logit)."""
        T = seq.shape[0]
        hs = np.zeros((T + 1, self.hidden), dtype=np.float64)
        for t in range(T):
            hs[t + 1] = np.tanh(self.Wxh_ @ self.emb_[seq[t]] + self.Whh_ @ hs[t] + self.bh_)
        z = float(self.wo_ @ hs[T] + self.bo_)
        return hs, z

    def _example_grads_seq(self, seq: np.ndarray, y: float) -> dict[str, np.ndarray]:
        """BCE gradient for one sequence w.r.t. every parameter (full BPTT)."""
        hs, z = self._forward(seq)
        T = seq.shape[0]
        dz = float(sigmoid(np.array([z]))[0] - y)
        d_emb = np.zeros_like(self.emb_)
        d_Wxh = np.zeros_like(self.Wxh_)
        d_Whh = np.zeros_like(self.Whh_)
        d_bh = np.zeros_like(self.bh_)
        d_wo = dz * hs[T]
        d_bo = np.array([dz])
        dh = dz * self.wo_
        for t in range(T - 1, -1, -1):
            h = hs[t + 1]
            dzt = dh * (1.0 - h * h)
            d_Wxh += np.outer(dzt, self.emb_[seq[t]])
            d_Whh += np.outer(dzt, hs[t])
            d_bh += dzt
            d_emb[seq[t]] += self.Wxh_.T @ dzt
            dh = self.Whh_.T @ dzt
        return {"emb": d_emb, "Wxh": d_Wxh, "Whh": d_Whh, "bh": d_bh, "wo": d_wo, "bo": d_bo}

    def _require_fitted(self) -> None:
        if self.emb_ is None:
            raise ValueError("model is not fitted")

    def decision_function(self, sequences) -> np.ndarray:
        self._require_fitted()
        seqs = self._check_sequences(sequences)
        return np.array([self._forward(seq)[1] for seq in seqs], dtype=np.float64)

    def proba(self, sequences) -> np.ndarray:
        """P(malicious) per sequence, strictly inside (0, 1)."""
        return probability(self.decision_function(sequences))

    def predict_proba(self, sequences) -> np.ndarray:
        p = self.proba(sequences)
        return np.column_stack([1.0 - p, p])

    def predict(self, sequences) -> np.ndarray:
        return (self.proba(sequences) >= 0.5).astype(np.int64)

    def loss(self, sequences, y) -> float:
        return bce_from_logits(self.decision_function(sequences), np.asarray(y, dtype=np.float64))

    def example_loss(self, seq, y) -> float:
        self._require_fitted()
        seq = self._check_sequences([seq])[0]
        _, z = self._forward(seq)
        return bce_from_logits(np.array([z]), np.array([float(y)]))

    def example_grads(self, seq, y) -> dict[str, np.ndarray]:
        self._require_fitted()
        seq = self._check_sequences([seq])[0]
        return self._example_grads_seq(seq, float(y))

    def param_arrays(self) -> dict[str, np.ndarray]:
        """Snapshot of all trainable parameters, keyed by name."""
        self._require_fitted()
        return {
            "emb": self.emb_.copy(),
            "Wxh": self.Wxh_.copy(),
            "Whh": self.Whh_.copy(),
            "bh": self.bh_.copy(),
            "wo": self.wo_.copy(),
            "bo": np.array([self.bo_]),
        }

    def set_param_arrays(self, params: dict[str, np.ndarray]) -> None:
        self.emb_ = np.asarray(params["emb"], dtype=np.float64).copy()
        self.Wxh_ = np.asarray(params["Wxh"], dtype=np.float64).copy()
        self.Whh_ = np.asarray(params["Whh"], dtype=np.float64).copy()
        self.bh_ = np.asarray(params["bh"], dtype=np.float64).copy()
        self.wo_ = np.asarray(params["wo"], dtype=np.float64).copy()
        self.bo_ = float(np.asarray(params["bo"]).reshape(()))
