"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import Tensor


def grad_check(f, x, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor. Relative error per coordinate is
    |analytic - numeric| / max(1, |analytic|); the max over coordinates is
    returned.
    """
    x0 = np.asarray(x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    y = f(xt)
    if not isinstance(y, Tensor):
        raise TypeError("f must return a Tensor")
    if y.data.size != 1:
        raise ValueError(f"f must be scalar-valued, got shape {y.data.shape}")
    if not np.all(np.isfinite(y.data)):
        raise FloatingPointError("f(x) is not finite")
    y.backward()
    analytic = (np.zeros_like(x0) if xt.grad is None else xt.grad).reshape(-1)

    flat = x0.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        fp = f(Tensor((flat + bump).reshape(x0.shape))).item()
        fm = f(Tensor((flat - bump).reshape(x0.shape))).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("f is not finite at a perturbed point")
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
