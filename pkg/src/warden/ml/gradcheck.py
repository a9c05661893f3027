"""Central finite-difference verification of the analytic training gradients."""

from __future__ import annotations

import numpy as np

DEFAULT_EPSILON = 1e-5
_REL_FLOOR = 1e-12


def grad_check(model, example, epsilon: float = DEFAULT_EPSILON) -> float:
    """Max relative error between analytic and numeric loss gradients.

    ``example`` is (input, label): a feature vector for SVM/MLP, a token-id
    sequence for the RNN. The model must expose example_loss / example_grads /
    param_arrays / set_param_arrays; every parameter of every array is probed
    with a central difference (f(th+eps) - f(th-eps)) / (2 eps), and the
    relative error is |a - n| / max(|a|, |n|, 1e-12).
    """
    x, y = example
    analytic = model.example_grads(x, y)
    base = model.param_arrays()
    worst = 0.0
    try:
        for name, arr in base.items():
            flat = arr.reshape(-1)
            grad_flat = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
            for i in range(flat.shape[0]):
                orig = flat[i]
                flat[i] = orig + epsilon
                model.set_param_arrays(base)
                f_plus = model.example_loss(x, y)
                flat[i] = orig - epsilon
                model.set_param_arrays(base)
                f_minus = model.example_loss(x, y)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * epsilon)
                a = float(grad_flat[i])
                err = abs(a - numeric) / max(abs(a), abs(numeric), _REL_FLOOR)
                worst = max(worst, err)
    finally:
        model.set_param_arrays(base)
    return worst
