"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .network import Network


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({', '.join(self.failures)})"
        return f"grad check {status}: max rel err {self.max_error:.3e} at {self.worst} (tol {self.tolerance:g})"


def _loss(net: Network, x, y, seed: int) -> float:
    # a fresh generator per call freezes dropout masks across evaluations
    net.zero_grad()
    return net.loss_and_grad(x, y, training=True, rng=np.random.default_rng(seed), reduction="sum")


def analytic_gradients(net: Network, x, y, seed: int = 0) -> dict[str, np.ndarray]:
    _loss(net, x, y, seed)
    return {k: v.copy() for k, v in net.named_grads().items()}


def _entries(shape, max_entries, rng):
    size = int(np.prod(shape))
    if max_entries is None or size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, max_entries, replace=False))


def compare_gradients(
    net: Network,
    x,
    y,
    analytic: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    floor: float = 1e-6,
    rel_floor: float = 1e-3,
    seed: int = 0,
) -> GradCheckReport:
    """Central differences on the summed loss; relative error |a - n| / max(|a|, |n|, floor').

    ``floor'`` is the larger of ``floor`` and ``rel_floor`` times the tensor's largest
    analytic gradient: at step 1e-5 in 64-bit the difference quotient carries roughly
    1e-10 of roundoff, which swamps entries far below the tensor's scale.
    """
    report = GradCheckReport(tolerance)
    rng = np.random.default_rng(seed + 1)
    params = net.named_params()
    for name, p in params.items():
        flat = p.reshape(-1)
        a = analytic[name].reshape(-1)
        worst = 0.0
        denom_floor = max(floor, rel_floor * float(np.abs(a).max(initial=0.0)))
        for j in _entries(p.shape, max_entries, rng):
            orig = flat[j]
            flat[j] = orig + step
            lp = _loss(net, x, y, seed)
            flat[j] = orig - step
            lm = _loss(net, x, y, seed)
            flat[j] = orig
            num = (lp - lm) / (2 * step)
            err = abs(a[j] - num) / max(abs(a[j]), abs(num), denom_floor)
            # a NaN loss or gradient must fail, not vanish inside max()
            worst = max(worst, err if np.isfinite(err) else np.inf)
        report.errors[name] = worst
    return report


def grad_check(net: Network, x, y, tolerance: float = 1e-4, step: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> GradCheckReport:
    """Check ``net`` in 64-bit precision on a copy; the caller's network is untouched."""
    net64 = copy.deepcopy(net).astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    analytic = analytic_gradients(net64, x, y, seed)
    return compare_gradients(net64, x, y, analytic, tolerance, step, max_entries, seed=seed)
