"""Closed-form kernels for the scalar laws the quantizer works with.

Every law exposes its density, CDF, inverse CDF, partial moments
``int_{-inf}^x xi^k phi(xi) dxi`` for k = 0, 1, 2, interval moments over
arbitrary (possibly infinite) intervals, the density-power integral
``int phi^p`` and an explicitly seeded sampler.

Interval moments are computed from differences that avoid subtracting two
numbers close to 1 (upper normal tails are taken from the survival side),
since the Newton iteration in :mod:`optquant.quantizer` relies on first
moments that are accurate to machine precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "Distribution",
    "IntegrationError",
    "normal",
    "lognormal",
    "uniform",
    "exponential",
    "parse_distribution",
]

KINDS = ("normal", "lognormal", "uniform", "exponential")

_SQRT2PI = math.sqrt(2.0 * math.pi)


class IntegrationError(ArithmeticError):
    """Numeric integration did not reach the requested tolerance."""

    def __init__(self, message, partial_value):
        super().__init__(message)
        self.partial_value = partial_value


def _std_pdf(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


def _z_pdf(z):
    """z * phi(z), with the limit 0 at +-inf."""
    with np.errstate(invalid="ignore"):
        out = z * _std_pdf(z)
    return np.where(np.isfinite(z), out, 0.0)


def _std_mass(za, zb):
    """Phi(zb) - Phi(za), evaluated on the tail side that keeps precision."""
    upper = za > 0
    lower_side = special.ndtr(zb) - special.ndtr(za)
    upper_side = special.ndtr(-za) - special.ndtr(-zb)
    return np.where(upper, upper_side, lower_side)


def _finite_or(x, fill):
    return np.where(np.isfinite(x), x, fill)


@dataclass(frozen=True)
class Distribution:
    """A scalar law identified by ``kind`` and its two (or one) parameters.

    Parameters follow the CLI notation: ``normal(mu, sigma)``,
    ``lognormal(mu, sigma)`` (parameters of ``log X``), ``uniform(a, b)``,
    ``exponential(rate)``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        expected = 1 if self.kind == "exponential" else 2
        if len(p) != expected:
            raise ValueError(f"{self.kind} takes {expected} parameter(s), got {len(p)}")
        if not all(math.isfinite(v) for v in p):
            raise ValueError("distribution parameters must be finite")
        if self.kind in ("normal", "lognormal") and p[1] <= 0:
            raise ValueError("sigma must be > 0")
        if self.kind == "uniform" and not p[1] > p[0]:
            raise ValueError("uniform requires b > a")
        if self.kind == "exponential" and p[0] <= 0:
            raise ValueError("rate must be > 0")

    def __str__(self):
        return f"{self.kind}:" + ",".join(repr(v) for v in self.params)

    @property
    def spec(self) -> str:
        """Round-trippable ``kind:p1,p2`` string."""
        return str(self)

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "normal":
            return (-math.inf, math.inf)
        if self.kind == "uniform":
            return self.params
        return (0.0, math.inf)

    @property
    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "normal":
            return p[0]
        if k == "lognormal":
            return math.exp(p[0] + 0.5 * p[1] ** 2)
        if k == "uniform":
            return 0.5 * (p[0] + p[1])
        return 1.0 / p[0]

    @property
    def second_moment(self) -> float:
        k, p = self.kind, self.params
        if k == "normal":
            return p[0] ** 2 + p[1] ** 2
        if k == "lognormal":
            return math.exp(2 * p[0] + 2 * p[1] ** 2)
        if k == "uniform":
            a, b = p
            return (a * a + a * b + b * b) / 3.0
        return 2.0 / p[0] ** 2

    @property
    def variance(self) -> float:
        k, p = self.kind, self.params
        if k == "normal":
            return p[1] ** 2
        if k == "lognormal":
            return math.expm1(p[1] ** 2) * math.exp(2 * p[0] + p[1] ** 2)
        if k == "uniform":
            return (p[1] - p[0]) ** 2 / 12.0
        return 1.0 / p[0] ** 2

    # -- pointwise kernels -------------------------------------------------

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "normal":
            out = _std_pdf((x - p[0]) / p[1]) / p[1]
        elif k == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                xs = np.where(x > 0, x, 1.0)
                out = np.where(x > 0, _std_pdf((np.log(xs) - p[0]) / p[1]) / (p[1] * xs), 0.0)
        elif k == "uniform":
            a, b = p
            out = np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
        else:
            lam = p[0]
            with np.errstate(over="ignore"):
                out = np.where(x >= 0, lam * np.exp(-lam * np.maximum(x, 0.0)), 0.0)
        return out[()]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "normal":
            out = special.ndtr((x - p[0]) / p[1])
        elif k == "lognormal":
            out = special.ndtr(self._log_z(x))
        elif k == "uniform":
            a, b = p
            out = np.clip((x - a) / (b - a), 0.0, 1.0)
        else:
            out = -np.expm1(-p[0] * np.maximum(x, 0.0))
        return np.asarray(out)[()]

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "normal":
            out = special.ndtr(-(x - p[0]) / p[1])
        elif k == "lognormal":
            out = special.ndtr(-self._log_z(x))
        elif k == "uniform":
            a, b = p
            out = np.clip((b - x) / (b - a), 0.0, 1.0)
        else:
            out = np.exp(-p[0] * np.maximum(x, 0.0))
        return np.asarray(out)[()]

    def ppf(self, u):
        """Inverse CDF."""
        u = np.asarray(u, dtype=float)
        k, p = self.kind, self.params
        if k == "normal":
            out = p[0] + p[1] * special.ndtri(u)
        elif k == "lognormal":
            out = np.exp(p[0] + p[1] * special.ndtri(u))
        elif k == "uniform":
            out = p[0] + (p[1] - p[0]) * u
        else:
            with np.errstate(divide="ignore"):
                out = -np.log1p(-u) / p[0]
        return np.asarray(out)[()]

    inverse_cdf = ppf

    def _log_z(self, x):
        mu, s = self.params
        with np.errstate(divide="ignore"):
            return (np.log(np.maximum(x, 0.0)) - mu) / s

    # -- moments -----------------------------------------------------------

    def partial_moment(self, x, order: int = 1):
        """``int_{-inf}^x xi**order * phi(xi) dxi`` for order in {0, 1, 2}."""
        lo = np.full(np.shape(x), self.support[0])
        return self.interval_moments(lo, x)[order]

    def partial_first_moment(self, x):
        return self.partial_moment(x, 1)

    def interval_moments(self, a, b):
        """Return ``(mass, first, second)`` moments of the law over (a, b].

        Endpoints may be infinite and are clipped to the support.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        lo, hi = self.support
        a, b = np.broadcast_arrays(np.clip(a, lo, hi), np.clip(b, lo, hi))
        b = np.maximum(a, b)
        k, p = self.kind, self.params

        if k == "normal":
            mu, s = p
            za, zb = (a - mu) / s, (b - mu) / s
            m0 = _std_mass(za, zb)
            dphi = _std_pdf(zb) - _std_pdf(za)
            m1 = mu * m0 - s * dphi
            m2 = (mu * mu + s * s) * m0 - 2 * mu * s * dphi - s * s * (_z_pdf(zb) - _z_pdf(za))
        elif k == "lognormal":
            mu, s = p
            ua, ub = self._log_z(a), self._log_z(b)
            m0 = _std_mass(ua, ub)
            m1 = math.exp(mu + 0.5 * s * s) * _std_mass(ua - s, ub - s)
            m2 = math.exp(2 * mu + 2 * s * s) * _std_mass(ua - 2 * s, ub - 2 * s)
        elif k == "uniform":
            lo_, hi_ = p
            w = hi_ - lo_
            m0 = (b - a) / w
            m1 = (b - a) * (a + b) / (2 * w)
            m2 = (b - a) * (a * a + a * b + b * b) / (3 * w)
        else:
            lam = p[0]
            ea = np.exp(-lam * a)
            eb = np.exp(-lam * b)
            ta = _finite_or(a, 0.0)
            tb = _finite_or(b, 0.0)
            m0 = ea - eb
            m1 = ea * (ta + 1 / lam) - eb * (tb + 1 / lam)
            m2 = ea * (ta * ta + 2 * ta / lam + 2 / lam**2) - eb * (tb * tb + 2 * tb / lam + 2 / lam**2)
        return np.asarray(m0)[()], np.asarray(m1)[()], np.asarray(m2)[()]

    # -- Zador integrals -----------------------------------------------------

    def density_power_integral(self, p: float = 1.0 / 3.0, numeric: bool = False) -> float:
        """``int phi**p dlambda``; closed form unless ``numeric`` is set.

        The numeric route runs adaptive quadrature at relative tolerance
        1e-8 and raises :class:`IntegrationError` carrying the partial value
        if that tolerance is not met.
        """
        if not 0 < p < 1:
            raise ValueError("p must lie in (0, 1)")
        if numeric:
            return self._density_power_quad(p)
        k, q = self.kind, self.params
        if k == "normal":
            return q[1] ** (1 - p) * (2 * math.pi) ** (-p / 2) * math.sqrt(2 * math.pi / p)
        if k == "lognormal":
            mu, s = q
            return (
                s ** (1 - p)
                * (2 * math.pi) ** (-p / 2)
                * math.sqrt(2 * math.pi / p)
                * math.exp((1 - p) * mu + (1 - p) ** 2 * s * s / (2 * p))
            )
        if k == "uniform":
            return (q[1] - q[0]) ** (1 - p)
        return q[0] ** (p - 1) / p

    def _density_power_quad(self, p):
        lo, hi = self.support
        f = lambda x: float(self.pdf(x)) ** p  # noqa: E731
        if self.kind == "lognormal":
            # integrate in log space: phi(x) dx = phi(x) x du
            mu, s = self.params

            def f(u):
                z = (u - mu) / s
                log_pdf = -0.5 * z * z - math.log(s * math.sqrt(2 * math.pi)) - u
                return math.exp(p * log_pdf + u)

            lo, hi = -math.inf, math.inf
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(f, lo, hi, epsrel=1e-10, epsabs=0.0, limit=400)
            except integrate.IntegrationWarning as exc:
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _ = integrate.quad(f, lo, hi, limit=400)
                raise IntegrationError(f"density power integral did not converge: {exc}", val)
        if not math.isfinite(val) or err > 1e-8 * abs(val):
            raise IntegrationError("density power integral did not converge", val)
        return val

    def zador_constant(self) -> float:
        """Quadratic Zador constant ``(1/12) (int phi^{1/3})^3``."""
        return self.density_power_integral(1.0 / 3.0) ** 3 / 12.0

    # -- sampling ----------------------------------------------------------

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be >= 0")
        k, p = self.kind, self.params
        if k == "normal":
            return p[0] + p[1] * rng.standard_normal(count)
        if k == "lognormal":
            return np.exp(p[0] + p[1] * rng.standard_normal(count))
        if k == "uniform":
            return rng.uniform(p[0], p[1], count)
        return rng.standard_exponential(count) / p[0]


def normal(mu=0.0, sigma=1.0):
    return Distribution("normal", (mu, sigma))


def lognormal(mu=0.0, sigma=1.0):
    return Distribution("lognormal", (mu, sigma))


def uniform(a=0.0, b=1.0):
    return Distribution("uniform", (a, b))


def exponential(rate=1.0):
    return Distribution("exponential", (rate,))


def parse_distribution(text: str) -> Distribution:
    """Parse ``normal:0,1``-style specs; raises ValueError on bad input."""
    kind, sep, rest = text.strip().partition(":")
    kind = kind.strip().lower()
    if not sep or not rest.strip():
        raise ValueError(f"bad distribution spec {text!r}, expected kind:p1[,p2]")
    try:
        params = tuple(float(v) for v in rest.split(","))
    except ValueError:
        raise ValueError(f"bad distribution parameters in {text!r}") from None
    return Distribution(kind, params)
