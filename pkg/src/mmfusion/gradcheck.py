"""Finite-difference gradient verification oracle.

Compares reverse-mode gradients against central finite differences,
independently of the backward implementation being checked.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

REL_FLOOR = 1e-8  # denominator floor so 0/0 comparisons stay defined


class OracleError(RuntimeError):
    """The closure under test violated the oracle's assumptions."""


@dataclass
class GradReport:
    max_abs_err: float
    max_rel_err: float
    worst_param: str

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5) -> GradReport:
    """Check backward() gradients of scalar ``f()`` w.r.t. every element of
    ``params`` against (f(p+eps) - f(p-eps)) / (2 eps).

    ``f`` must be deterministic; this is verified by evaluating the baseline
    twice. Relative error uses |a-b| / max(|a|, |b|, 1e-8).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    with no_grad():
        base1 = f().item()
        base2 = f().item()
    if base1 != base2:
        raise OracleError(
            f"closure is not deterministic: baseline evaluations differ ({base1} vs {base2})")

    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())

    max_abs = 0.0
    max_rel = 0.0
    worst = ""
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        aflat = analytic[pi].reshape(-1)
        name = p.name or f"param{pi}"
        for j in range(flat.size):
            orig = flat[j]
            with no_grad():
                flat[j] = orig + eps
                fp = f().item()
                flat[j] = orig - eps
                fm = f().item()
            flat[j] = orig
            fd = (fp - fm) / (2.0 * eps)
            a = aflat[j]
            abs_err = abs(a - fd)
            rel_err = abs_err / max(abs(a), abs(fd), REL_FLOOR)
            if abs_err > max_abs:
                max_abs = abs_err
            if rel_err > max_rel:
                max_rel = rel_err
                worst = f"{name}[{j}]"
    return GradReport(max_abs_err=max_abs, max_rel_err=max_rel, worst_param=worst)
