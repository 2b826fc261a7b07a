"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tape, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(f, x: Tensor, tol: float = 1e-3, h: float = 1e-5,
               probes: int = 0, rng=None) -> GradCheckReport:
    """Compare the analytic gradient of scalar f(x) against central differences.

    With probes == 0 every element of x is perturbed individually; otherwise
    `probes` random direction vectors are used (suited to large parameter
    vectors). f must be deterministic and return a scalar Tensor.
    """
    x.zero_grad()
    with Tape():
        out = f(x)
        backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.zero_grad()

    def eval_at(data):
        old = x.data
        x.data = data
        with no_grad():
            val = f(x).item()
        x.data = old
        return val

    max_err = 0.0
    if probes <= 0:
        flat = x.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            pert = x.data.copy()
            pert.ravel()[i] = orig + h
            fp = eval_at(pert)
            pert.ravel()[i] = orig - h
            fm = eval_at(pert)
            num = (fp - fm) / (2 * h)
            max_err = max(max_err, _rel_err(analytic.ravel()[i], num))
        n = flat.size
    else:
        rng = rng or np.random.default_rng(0)
        for _ in range(probes):
            d = rng.standard_normal(x.shape)
            d /= np.sqrt((d * d).sum())
            fp = eval_at(x.data + h * d)
            fm = eval_at(x.data - h * d)
            num = (fp - fm) / (2 * h)
            ana = float((analytic * d).sum())
            max_err = max(max_err, _rel_err(ana, num))
        n = probes
    return GradCheckReport(max_rel_err=max_err, tol=tol, n_checked=n)
