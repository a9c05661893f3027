"""Estimator plumbing: sklearn-compatible parameter API, input checks, stable math."""

from __future__ import annotations

import inspect

import numpy as np

from ..features import DimensionMismatch


class SingleClass(ValueError):
    """Training data contains only one class."""


class BaseEstimator:
    """Minimal get_params/set_params so estimators compose with sklearn tooling.

    Parameters are read from the subclass ``__init__`` signature, exactly like
    sklearn's BaseEstimator, without depending on sklearn itself.
    """

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [
            name
            for name, p in sig.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        ]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"


def check_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    y = y.astype(np.int64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    return y


def require_both_classes(y) -> None:
    if len(np.unique(y)) < 2:
        raise SingleClass("training data must contain both classes")


def check_dim(X: np.ndarray, dim: int) -> None:
    if X.shape[1] != dim:
        raise DimensionMismatch(f"expected input dimension {dim}, got {X.shape[1]}")


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# float64 rounds sigmoid to exactly 0/1 for |z| beyond ~37/745; probability
# outputs are contractually inside the open interval, so clamp to the nearest
# representable neighbours of the bounds
_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


def probability(z):
    """sigmoid(z) restricted to the open interval (0, 1)."""
    return np.clip(sigmoid(z), _P_LO, _P_HI)


def bce_from_logits(z, y) -> float:
    """Mean binary cross-entropy computed from logits (no overflow, no log(0))."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def glorot_uniform(rng, rows: int, cols: int, fan_in: int, fan_out: int) -> np.ndarray:
    """Row-major uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)).

    Draw order is fixed (row-major), so matrices are bit-identical per seed.
    """
    a = np.sqrt(6.0 / (fan_in + fan_out))
    flat = np.empty(rows * cols, dtype=np.float64)
    for i in range(rows * cols):
        flat[i] = rng.uniform_in(-a, a)
    return flat.reshape(rows, cols)
