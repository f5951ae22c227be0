"""Adam optimizer and the finite-difference gradient certifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor, fresh_tape, grad_of, no_grad


class OracleError(RuntimeError):
    """The function under test is not a valid finite-difference oracle."""


def adam_step(params: Sequence[Tensor], state: dict, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; grads are consumed (zeroed)."""
    b1, b2 = betas
    for p in params:
        if p.grad is None:
            raise ContractError("adam_step: parameter has no gradient")
        st = state.setdefault(p.id, {
            "m": np.zeros_like(p.data),
            "v": np.zeros_like(p.data),
            "t": 0,
        })
        if st["m"].shape != p.data.shape:
            raise ContractError("adam_step: state shape mismatch")
        st["t"] += 1
        g = p.grad
        st["m"] = b1 * st["m"] + (1 - b1) * g
        st["v"] = b2 * st["v"] + (1 - b2) * (g * g)
        mhat = st["m"] / (1 - b1 ** st["t"])
        vhat = st["v"] / (1 - b2 ** st["t"])
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(np.float32)
        p.grad = None


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self):
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_coords: int
    n_nondiff: int = 0  # coordinates whose FD interval crossed a kink

    def __bool__(self):
        return self.passed


def _eval_with_kink_signs(f, xt):
    from . import ops

    ops.KINK_WATCH = signs = []
    try:
        y = float(f(xt).data)
    finally:
        ops.KINK_WATCH = None
    return y, signs


def _same_signs(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


def gradient_check(f: Callable[[Tensor], Tensor], x: Tensor,
                   eps: float = 1e-3, tol: float = 1e-3,
                   max_nondiff_fraction: float = 0.5) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar function against central
    differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps).

    Central differences are only a valid oracle where f is differentiable on
    the whole interval, so coordinates whose evaluations straddle a
    leaky-relu kink (detected exactly from the activation sign patterns) are
    excluded and counted in the report; if a majority of coordinates are
    excluded the oracle is rejected.  Errors are normalized by the largest
    gradient magnitude observed, which is the meaningful scale for f32
    arithmetic.  The function must be deterministic; two baseline
    evaluations are compared first.
    """
    with fresh_tape():
        xt = Tensor(x.data.copy(), requires_grad=True)
        with no_grad():
            y1 = f(xt)
            y2 = f(xt)
        if y1.size != 1:
            raise ContractError("gradient_check requires a scalar-valued function")
        if not np.array_equal(y1.data, y2.data):
            raise OracleError("function is not deterministic; finite differences are invalid")

        y = f(xt)
        (g,) = grad_of(y, [xt])
        ad = g.data.astype(np.float64).ravel()

        flat = xt.data.ravel()
        fd = np.zeros_like(ad)
        smooth = np.ones(flat.size, dtype=bool)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                yp, signs_p = _eval_with_kink_signs(f, xt)
                flat[i] = orig - eps
                ym, signs_m = _eval_with_kink_signs(f, xt)
                flat[i] = orig
                fd[i] = (yp - ym) / (2.0 * eps)
                smooth[i] = _same_signs(signs_p, signs_m)

    n_nondiff = int((~smooth).sum())
    if n_nondiff > max_nondiff_fraction * flat.size:
        raise OracleError(
            f"{n_nondiff}/{flat.size} coordinates cross activation kinks; "
            "finite differences are invalid at this point")
    ad_s, fd_s = ad[smooth], fd[smooth]
    denom = max(np.abs(ad_s).max(initial=0.0), np.abs(fd_s).max(initial=0.0), 1e-8)
    max_rel = float(np.abs(ad_s - fd_s).max(initial=0.0) / denom)
    return GradCheckReport(max_rel_error=max_rel, passed=max_rel <= tol,
                           n_coords=flat.size, n_nondiff=n_nondiff)
