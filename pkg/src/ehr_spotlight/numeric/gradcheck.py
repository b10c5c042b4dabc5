"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, UnreliableCheckError
from .tensor import GradTape, Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    """Outcome of one gradient check.

    Coordinates where one-sided differences disagree (kinks such as |x| at 0)
    are excluded from the maximum and listed in ``nonsmooth``.
    """

    max_rel_error: float
    nonsmooth: list[tuple[int, ...]] = field(default_factory=list)
    checked: int = 0


def _scalar_value(f, x: Tensor) -> float:
    with no_grad():
        out = f(x)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued tensor function")
    return float(out.data.reshape(()))


def grad_check(f, x: Tensor, h: float = 1e-4, kink_tol: float = 0.1) -> GradCheckResult:
    """Compare the taped gradient of ``f`` at ``x`` against central differences.

    Returns the max of |analytic - numeric| / max(1, |analytic|, |numeric|)
    over all coordinates of ``x``. ``f`` must be deterministic; two value
    evaluations that disagree raise ``UnreliableCheckError``.
    """
    base = _scalar_value(f, x)
    if _scalar_value(f, x) != base:
        raise UnreliableCheckError("function value changed between evaluations; fix seeds")

    had_flag = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with GradTape():
            out = f(x)
            if not isinstance(out, Tensor) or out.data.size != 1:
                raise ContractError("grad_check needs a scalar-valued tensor function")
            backward(out)
        analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    finally:
        x.requires_grad = had_flag
        x.grad = None

    flat = x.data.ravel()
    analytic_flat = analytic.ravel()
    worst = 0.0
    kinks: list[tuple[int, ...]] = []
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = _scalar_value(f, x)
        flat[i] = original - h
        f_minus = _scalar_value(f, x)
        flat[i] = original

        forward_d = (f_plus - base) / h
        backward_d = (base - f_minus) / h
        if abs(forward_d - backward_d) > kink_tol * (abs(forward_d) + abs(backward_d)) + 1e-6:
            kinks.append(tuple(int(k) for k in np.unravel_index(i, x.data.shape)))
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic_flat[i]
        rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, rel)
    return GradCheckResult(max_rel_error=worst, nonsmooth=kinks, checked=flat.size - len(kinks))
