"""Regression of reconnection times against candidate scaling models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..spectral import ParameterError

__all__ = ["ScalingFit", "MODELS", "fit_reconnection_scaling"]


MODELS = {
    "accelerated": lambda eta: abs(math.log(eta)) / math.sqrt(eta),
    "fast": lambda eta: abs(math.log(eta)),
    "diffusive": lambda eta: 1.0 / eta,
}


@dataclass
class ScalingFit:
    best_model: str
    coefficients: dict[str, float]     # fitted c2 per model (slope on the regressor)
    intercepts: dict[str, float]
    r2: dict[str, float]
    accelerated_check: bool            # t*(eta) * eta decreasing along the sweep
    fast_checks: dict[float, bool]     # t*(eta) * eta^a decreasing, a in {0.5, 0.25}
    etas: np.ndarray
    t_star: np.ndarray


def _fit_one(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.vstack([x, np.ones_like(x)]).T
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(sol[0]), float(sol[1])
    resid = y - A @ sol
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2


def fit_reconnection_scaling(etas, t_star, models=("accelerated", "fast", "diffusive")) -> ScalingFit:
    """Least squares of t*(eta) against each model regressor; best model by R^2.

    Also reports the limit diagnostics: whether eta * t*(eta) decreases along
    the sweep (the accelerated condition) and whether eta^a * t*(eta) does for
    a in {0.5, 0.25} (the fast condition).
    """
    etas = np.asarray(etas, dtype=float)
    t_star = np.asarray(t_star, dtype=float)
    if len(etas) < 4:
        raise ParameterError("scaling fits need at least 4 eta values")
    if len(etas) != len(t_star):
        raise ParameterError("eta and t* arrays differ in length")
    order = np.argsort(etas)[::-1]           # decreasing eta
    etas, t_star = etas[order], t_star[order]

    coefficients, intercepts, r2 = {}, {}, {}
    for name in models:
        reg = np.array([MODELS[name](e) for e in etas])
        slope, intercept, rr = _fit_one(reg, t_star)
        coefficients[name] = slope
        intercepts[name] = intercept
        r2[name] = rr
    best = max(r2, key=lambda k: r2[k])

    seq = etas * t_star
    accelerated_check = bool(np.all(np.diff(seq) < 0))
    fast_checks = {}
    for a in (0.5, 0.25):
        seq_a = etas**a * t_star
        fast_checks[a] = bool(np.all(np.diff(seq_a) < 0))
    return ScalingFit(best, coefficients, intercepts, r2,
                      accelerated_check, fast_checks, etas, t_star)
