"""Quantization-based cubature and weak-error rate studies."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distrib import Distribution
from .gridio import GridStore, default_store
from .quantizer import QuantizerGrid

__all__ = [
    "NonFiniteValueError",
    "UndefinedSlopeError",
    "RateStudy",
    "quantized_expectation",
    "richardson_romberg",
    "rr_combine",
    "refined_level",
    "fit_rate",
    "rate_study",
]


class NonFiniteValueError(ArithmeticError):
    def __init__(self, index, value):
        super().__init__(f"integrand returned {value!r} at grid node {index}")
        self.index = index
        self.value = value


class UndefinedSlopeError(ValueError):
    pass


def _evaluate(f, points):
    try:
        vals = np.asarray(f(points), dtype=float)
        if vals.shape != points.shape:
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([float(f(x)) for x in points])
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NonFiniteValueError(int(bad[0]), float(vals[bad[0]]))
    return vals


def quantized_expectation(grid: QuantizerGrid, f) -> float:
    """``sum_i p_i f(x_i)``; ``f`` is called on the whole point array when it vectorizes."""
    vals = _evaluate(f, grid.points)
    return math.fsum(grid.weights * vals)


def refined_level(n: int, ratio: float = 1.2) -> int:
    n_fine = math.ceil(ratio * n)
    if n_fine <= n:
        raise ValueError(f"refined level {n_fine} must exceed N={n}; increase ratio")
    return n_fine


def rr_combine(coarse: float, fine: float, n: int, n_fine: int) -> float:
    """Eliminate the ``c/N^2`` term from two cubature values."""
    if n_fine == n:
        raise ValueError("Richardson-Romberg needs two distinct levels")
    a, b = n_fine**2, n**2
    return (a * fine - b * coarse) / (a - b)


def richardson_romberg(dist: Distribution, f, n: int, ratio: float = 1.2, store: GridStore | None = None) -> float:
    store = store or default_store()
    n_fine = refined_level(n, ratio)
    coarse = quantized_expectation(store.get(dist, n), f)
    fine = quantized_expectation(store.get(dist, n_fine), f)
    return rr_combine(coarse, fine, n, n_fine)


def fit_rate(levels, errors) -> float:
    """OLS slope of ``log(error)`` against ``log(N)`` over positive errors."""
    levels = np.asarray(levels, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if np.count_nonzero(keep) < 2 or np.unique(levels[keep]).size < 2:
        raise UndefinedSlopeError("need at least two distinct levels with positive error")
    slope, _ = np.polyfit(np.log(levels[keep]), np.log(errors[keep]), 1)
    return float(slope)


@dataclass
class RateStudy:
    levels: list
    estimates: list
    errors: list
    scaled: list
    k: float
    reference_value: float
    reference_note: str = ""
    fitted_slope: float | None = None
    method: str = "cubature"
    extra: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.levels, self.estimates, self.errors, self.scaled))

    def to_csv(self) -> str:
        out = ["N,estimate,error,scaled_error"]
        for n, est, err, sc in self.rows():
            out.append(f"{n},{est:.8g},{err:.8g},{sc:.8g}")
        return "\n".join(out) + "\n"

    def summary(self) -> dict:
        return {
            "slope": self.fitted_slope,
            "reference": self.reference_value,
            "reference_note": self.reference_note,
            "k": self.k,
            "method": self.method,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def rate_study(
    dist: Distribution,
    f,
    reference: float | None,
    levels,
    k: float = 2.0,
    *,
    method: str = "cubature",
    ratio: float = 1.2,
    store: GridStore | None = None,
    reference_note: str = "",
) -> RateStudy:
    """Weak error ``|reference - estimate|`` over increasing grid levels.

    ``method`` is ``"cubature"`` or ``"rr"`` (Richardson-Romberg with
    refined level ``ceil(ratio * N)``).
    """
    if reference is None or not math.isfinite(reference):
        raise ValueError("a finite reference value is required")
    levels = [int(n) for n in levels]
    if len(levels) < 4 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("need at least 4 strictly increasing levels")
    if method not in ("cubature", "rr"):
        raise ValueError(f"unknown method {method!r}")
    store = store or default_store()
    estimates, magnitudes = [], []
    for n in levels:
        grid = store.get(dist, n)
        magnitudes.append(math.fsum(grid.weights * np.abs(_evaluate(f, grid.points))))
        if method == "rr":
            estimates.append(richardson_romberg(dist, f, n, ratio, store))
        else:
            estimates.append(quantized_expectation(grid, f))
    errors = [abs(reference - e) for e in estimates]
    scaled = [n**k * e for n, e in zip(levels, errors)]
    # errors below the rounding level of the sum carry no rate information
    floor = 10 * np.finfo(float).eps * max(abs(reference), max(magnitudes))
    slope = None
    if sum(e > floor for e in errors) >= 4:
        sel = [(n, e) for n, e in zip(levels, errors) if e > floor]
        slope = fit_rate(*zip(*sel))
    return RateStudy(levels, estimates, errors, scaled, k, float(reference), reference_note, slope, method)
