"""Quantized control variates for Monte Carlo pricing in Black-Scholes models.

For a payoff ``f`` of a d-dimensional vector ``Z`` the univariate slices
``f_k(z) = f(E Z_1, ..., z, ..., E Z_d)`` are used as controls.  Their
expectations are replaced by quantization-based cubatures, which is the
only source of bias; ``lambda`` is fitted by least squares on the samples.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy import integrate, optimize as sopt, special

from .cubature import quantized_expectation
from .distrib import Distribution, lognormal, normal
from .gridio import GridStore, default_store
from .quantizer import stationarity_residual

__all__ = [
    "bs_call_price",
    "VanillaCall",
    "PutOnCall",
    "ExchangeSpread",
    "BSModel",
    "BasketOption",
    "basket_payoff",
    "CVSpec",
    "ControlVariates",
    "build_control_variates",
    "SingularSystemError",
    "solve_lambda",
    "EstimatorReport",
    "ExperimentResult",
    "run_experiment",
    "gaussian_expectation",
]


def bs_call_price(s0, K, r, sigma, T):
    """Black-Scholes call price; vectorized over ``s0`` and ``K``."""
    s0 = np.asarray(s0, dtype=float)
    K = np.asarray(K, dtype=float)
    vol = sigma * math.sqrt(T)
    disc = math.exp(-r * T)
    pos = K > 0
    Ks = np.where(pos, K, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(s0 / Ks) + (r + 0.5 * sigma * sigma) * T) / vol
    d2 = d1 - vol
    price = s0 * special.ndtr(d1) - Ks * disc * special.ndtr(d2)
    # a non-positive strike is always exercised
    return np.where(pos, price, s0 - K * disc)[()]


def gaussian_expectation(f, breakpoints=()) -> float:
    """``E f(Z)`` for ``Z ~ N(0,1)`` by adaptive quadrature (reference values)."""
    g = lambda z: float(f(z)) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    # the Gaussian density underflows beyond |z| = 38
    cuts = [-38.0, *sorted(b for b in breakpoints if abs(b) < 38.0), 38.0]
    total = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        total.append(integrate.quad(g, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=500)[0])
    return math.fsum(total)


# --------------------------------------------------------------------------
# one-dimensional benchmarks


@dataclass(frozen=True)
class VanillaCall:
    s0: float = 100.0
    strike: float = 80.0
    r: float = 0.1
    sigma: float = 0.5
    T: float = 1.0

    tabulated_reference: ClassVar[float] = 34.15007

    def gaussian_law(self) -> Distribution:
        return normal()

    def gaussian_payoff(self, z):
        st = self.s0 * np.exp((self.r - 0.5 * self.sigma**2) * self.T + self.sigma * math.sqrt(self.T) * np.asarray(z))
        return math.exp(-self.r * self.T) * np.maximum(st - self.strike, 0.0)

    def lognormal_law(self) -> Distribution:
        return lognormal(math.log(self.s0) + (self.r - 0.5 * self.sigma**2) * self.T, self.sigma * math.sqrt(self.T))

    def lognormal_payoff(self, x):
        return math.exp(-self.r * self.T) * np.maximum(np.asarray(x) - self.strike, 0.0)

    def integrand(self, basis: str = "gaussian"):
        if basis == "gaussian":
            return self.gaussian_law(), self.gaussian_payoff
        if basis == "lognormal":
            return self.lognormal_law(), self.lognormal_payoff
        raise ValueError(f"unknown basis {basis!r}")

    def reference(self) -> float:
        return float(bs_call_price(self.s0, self.strike, self.r, self.sigma, self.T))


@dataclass(frozen=True)
class PutOnCall:
    """Put with strike ``K1`` at ``T1`` on a call with strike ``K2`` at ``T2``."""

    s0: float = 100.0
    r: float = 0.03
    sigma: float = 0.2
    T1: float = 1.0 / 12.0
    T2: float = 0.5
    K1: float = 6.5
    K2: float = 100.0

    tabulated_reference: ClassVar[float] = 1.3945704

    def _outer(self, spot):
        inner = bs_call_price(spot, self.K2, self.r, self.sigma, self.T2 - self.T1)
        return math.exp(-self.r * self.T1) * np.maximum(self.K1 - inner, 0.0)

    def gaussian_law(self) -> Distribution:
        return normal()

    def gaussian_payoff(self, z):
        drift = (self.r - 0.5 * self.sigma**2) * self.T1
        return self._outer(self.s0 * np.exp(drift + self.sigma * math.sqrt(self.T1) * np.asarray(z)))

    def lognormal_law(self) -> Distribution:
        # law of S_T1 / s0
        return lognormal((self.r - 0.5 * self.sigma**2) * self.T1, self.sigma * math.sqrt(self.T1))

    def lognormal_payoff(self, x):
        return self._outer(self.s0 * np.asarray(x))

    def integrand(self, basis: str = "gaussian"):
        if basis == "gaussian":
            return self.gaussian_law(), self.gaussian_payoff
        if basis == "lognormal":
            return self.lognormal_law(), self.lognormal_payoff
        raise ValueError(f"unknown basis {basis!r}")

    def kink(self) -> float:
        """Gaussian coordinate where the inner call equals ``K1``."""
        g = lambda z: float(self.gaussian_payoff(z)) > 0  # noqa: E731
        h = lambda z: float(  # noqa: E731
            bs_call_price(
                self.s0 * math.exp((self.r - 0.5 * self.sigma**2) * self.T1 + self.sigma * math.sqrt(self.T1) * z),
                self.K2,
                self.r,
                self.sigma,
                self.T2 - self.T1,
            )
            - self.K1
        )
        if not g(-40.0) or g(40.0):
            raise ValueError("put-on-call payoff has no exercise boundary")
        return sopt.brentq(h, -40.0, 40.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def reference(self) -> float:
        return gaussian_expectation(self.gaussian_payoff, breakpoints=(self.kink(),))


@dataclass(frozen=True)
class ExchangeSpread:
    """``(S^1_T - S^2_T - K)_+`` priced after conditioning on the second factor."""

    s0: tuple = (100.0, 100.0)
    r: float = 0.02
    sigma: tuple = (0.5, 0.5)
    rho: float = 0.5
    T: float = 10.0
    strike: float = 10.0

    tabulated_reference: ClassVar[float] = 53.552678

    def gaussian_law(self) -> Distribution:
        return normal()

    def gaussian_payoff(self, z):
        z = np.asarray(z, dtype=float)
        (a, b), (s1, s2), rho, T = self.s0, self.sigma, self.rho, self.T
        spot = a * np.exp(-0.5 * rho**2 * s1**2 * T + s1 * rho * math.sqrt(T) * z)
        strike = b * np.exp((self.r - 0.5 * s2**2) * T + s2 * math.sqrt(T) * z) + self.strike
        return bs_call_price(spot, strike, self.r, s1 * math.sqrt(1 - rho**2), T)

    def integrand(self, basis: str = "gaussian"):
        if basis != "gaussian":
            raise ValueError("exchange spread is quantized on its Gaussian factor only")
        return self.gaussian_law(), self.gaussian_payoff

    def reference(self) -> float:
        return gaussian_expectation(self.gaussian_payoff)


# --------------------------------------------------------------------------
# multi-asset model


@dataclass
class BSModel:
    s0: np.ndarray
    r: float
    sigmas: np.ndarray
    corr: np.ndarray
    T: float

    def __post_init__(self):
        self.s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        self.sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        self.corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        d = self.s0.size
        if self.sigmas.shape != (d,) or self.corr.shape != (d, d):
            raise ValueError("dimension mismatch between s0, sigmas and corr")
        if np.any(self.sigmas <= 0) or np.any(self.s0 <= 0) or self.T <= 0:
            raise ValueError("spots, volatilities and maturity must be positive")
        if not np.allclose(np.diag(self.corr), 1.0) or not np.allclose(self.corr, self.corr.T):
            raise ValueError("corr must be symmetric with unit diagonal")
        try:
            self.chol = np.linalg.cholesky(self.corr)
        except np.linalg.LinAlgError:
            raise ValueError("corr is not positive definite") from None

    @property
    def dim(self) -> int:
        return self.s0.size

    @property
    def forwards(self) -> np.ndarray:
        """``E[S_T^k]``."""
        return self.s0 * math.exp(self.r * self.T)

    @property
    def discount(self) -> float:
        return math.exp(-self.r * self.T)

    def _log_drift(self):
        return np.log(self.s0) + (self.r - 0.5 * self.sigmas**2) * self.T

    def terminals(self, z) -> np.ndarray:
        """Terminal prices from independent standard normals ``z`` of shape (M, d)."""
        w = np.asarray(z) @ self.chol.T
        return np.exp(self._log_drift() + self.sigmas * math.sqrt(self.T) * w)

    def single_factor_terminals(self, k: int, zk) -> np.ndarray:
        """Terminals when only independent factor ``k`` is non-zero."""
        zk = np.asarray(zk, dtype=float)[..., None]
        return np.exp(self._log_drift() + self.sigmas * math.sqrt(self.T) * self.chol[:, k] * zk)

    def marginal_law(self, k: int) -> Distribution:
        return lognormal(float(self._log_drift()[k]), float(self.sigmas[k] * math.sqrt(self.T)))


def basket_payoff(terminals, alphas, K):
    """``(sum_k alpha_k S^k - K)_+`` row-wise."""
    terminals = np.asarray(terminals, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if terminals.shape[-1] != alphas.size:
        raise ValueError(f"basket has {alphas.size} weights but terminals have {terminals.shape[-1]} columns")
    return np.maximum(terminals @ alphas - K, 0.0)


@dataclass
class BasketOption:
    """Discounted basket call on d correlated Black-Scholes assets."""

    model: BSModel
    alphas: np.ndarray
    strike: float

    tabulated_references: ClassVar[dict] = {2: 14.2589, 3: 14.1618, 5: 13.9005, 10: 13.4979}

    @classmethod
    def standard(cls, d: int, rho: float = 0.5, r: float = 0.02, s0: float = 100.0, strike: float = 100.0, T: float = 1.0):
        i = np.arange(1, d + 1)
        corr = np.full((d, d), rho)
        np.fill_diagonal(corr, 1.0)
        model = BSModel(np.full(d, s0), r, i / (d + 1.0), corr, T)
        return cls(model, 2.0 * i / (d * (d + 1.0)), strike)

    def __call__(self, terminals):
        return self.model.discount * basket_payoff(terminals, self.alphas, self.strike)

    def lognormal_control_means(self) -> np.ndarray:
        """Closed-form ``E[f_k(S^k_T)]`` for the lognormal-basis slices."""
        m = self.model
        fw = m.forwards
        out = np.empty(m.dim)
        for k in range(m.dim):
            rest = float(self.alphas @ fw - self.alphas[k] * fw[k])
            strike_k = (self.strike - rest) / self.alphas[k]
            out[k] = self.alphas[k] * bs_call_price(m.s0[k], strike_k, m.r, m.sigmas[k], m.T)
        return out


# --------------------------------------------------------------------------
# control variates


@dataclass
class CVSpec:
    basis: str = "lognormal"
    grid_level: int = 200
    lambda_: np.ndarray | None = None
    lambda_mode: str = "same"  # or "pilot": separate pilot of size M/10
    independent: bool | None = None  # diagonal lambda shortcut; default True for gaussian
    exact_means: bool = False  # quadrature control means instead of quantized ones
    anchor_means: np.ndarray | None = None  # frozen coordinates of f_k; default E[Z_k]

    def __post_init__(self):
        if self.basis not in ("lognormal", "gaussian"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.lambda_mode not in ("same", "pilot"):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.grid_level < 1:
            raise ValueError("grid level must be >= 1")
        if self.lambda_ is not None:
            self.lambda_ = np.atleast_1d(np.asarray(self.lambda_, dtype=float))
        if self.anchor_means is not None:
            self.anchor_means = np.atleast_1d(np.asarray(self.anchor_means, dtype=float))

    @property
    def diagonal(self) -> bool:
        return self.basis == "gaussian" if self.independent is None else self.independent


@dataclass
class ControlVariates:
    """Univariate slices of a payoff with their quantized expectations."""

    model: BSModel
    payoff: object
    spec: CVSpec
    anchors: np.ndarray
    quantized_means: np.ndarray
    warnings: list = field(default_factory=list)

    def slice_values(self, k: int, u) -> np.ndarray:
        """``f_k(u)`` for coordinate values ``u`` (assets or Gaussian factors)."""
        u = np.asarray(u, dtype=float)
        if self.spec.basis == "lognormal":
            s = np.broadcast_to(self.anchors, u.shape + (self.model.dim,)).copy()
            s[..., k] = u
        else:
            z = np.broadcast_to(self.anchors, u.shape + (self.model.dim,)).copy()
            z[..., k] = u
            s = self.model.terminals(z)
        return np.asarray(self.payoff(s), dtype=float)

    def coordinates(self, z, terminals) -> np.ndarray:
        return terminals if self.spec.basis == "lognormal" else np.asarray(z)

    def evaluate(self, z, terminals=None) -> np.ndarray:
        """Per-sample controls ``f_k(Z_k)``, shape (M, d)."""
        if terminals is None:
            terminals = self.model.terminals(z)
        u = self.coordinates(z, terminals)
        return np.column_stack([self.slice_values(k, u[:, k]) for k in range(self.model.dim)])

    def coordinate_law(self, k: int) -> Distribution:
        return self.model.marginal_law(k) if self.spec.basis == "lognormal" else normal()

    def exact_means(self) -> np.ndarray:
        """``E[f_k(Z_k)]`` by quadrature over the coordinate's Gaussian driver."""
        out = []
        for k in range(self.model.dim):
            if self.spec.basis == "lognormal":
                mu, s = self.model.marginal_law(k).params
                g = lambda z, k=k, mu=mu, s=s: float(self.slice_values(k, math.exp(mu + s * z)))  # noqa: E731
            else:
                g = lambda z, k=k: float(self.slice_values(k, z))  # noqa: E731
            out.append(gaussian_expectation(g))
        return np.array(out)


def build_control_variates(model: BSModel, payoff, spec: CVSpec, store: GridStore | None = None) -> ControlVariates:
    """Anchor the univariate slices and compute their quantized expectations."""
    store = store or default_store()
    if spec.anchor_means is not None:
        if spec.anchor_means.shape != (model.dim,):
            raise ValueError(f"anchor_means must have length {model.dim}")
        anchors = spec.anchor_means
    elif spec.basis == "lognormal":
        anchors = model.forwards
    else:
        anchors = np.zeros(model.dim)
    cv = ControlVariates(model, payoff, spec, anchors, np.zeros(model.dim))
    means = []
    for k in range(model.dim):
        grid = store.get(cv.coordinate_law(k), spec.grid_level)
        resid = stationarity_residual(grid)
        if resid > 1e-8 * max(1.0, float(np.max(np.abs(grid.points)))):
            msg = f"grid for coordinate {k} is not stationary (residual {resid:.3g})"
            cv.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        means.append(quantized_expectation(grid, lambda u, k=k: cv.slice_values(k, u)))
    cv.quantized_means = np.array(means)
    if spec.exact_means:
        cv.quantized_means = cv.exact_means()
    return cv


class SingularSystemError(np.linalg.LinAlgError):
    pass


def solve_lambda(f_values, controls, independent: bool = False) -> np.ndarray:
    """Variance-minimizing coefficients from ``D lambda = B``.

    ``D`` is the sample covariance of the controls and ``B`` their covariance
    with the payoff.  Constant controls get a zero coefficient.
    """
    f_values = np.asarray(f_values, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] != f_values.size:
        controls = controls.T
    m, d = controls.shape
    if m < d + 1:
        raise ValueError(f"need at least d+1={d + 1} samples to fit lambda, got {m}")
    cov = np.cov(np.column_stack([controls, f_values]), rowvar=False)
    D, B = cov[:d, :d], cov[:d, d]
    lam = np.zeros(d)
    var = np.diag(D)
    live = var > 1e-14 * max(1.0, float(np.max(var)))
    if not np.any(live):
        return lam
    D, B = D[np.ix_(live, live)], B[live]
    if independent:
        lam[live] = B / np.diag(D)
        return lam
    try:
        sol = np.linalg.solve(D, B)
        if not np.all(np.isfinite(sol)) or np.linalg.cond(D) > 1e12:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(D)
        try:
            sol = np.linalg.solve(D + ridge * np.eye(D.shape[0]), B)
        except np.linalg.LinAlgError:
            raise SingularSystemError("control covariance is singular even after ridge") from None
        if not np.all(np.isfinite(sol)):
            raise SingularSystemError("control covariance is singular even after ridge")
    lam[live] = sol
    return lam


# --------------------------------------------------------------------------
# replication harness


@dataclass
class EstimatorReport:
    kind: str
    mean: float
    half_width_95: float
    std: float
    empirical_mse: float | None
    n_replications: int
    samples_per_replication: int
    variance_ratio: float | None = None
    estimates: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_estimates(cls, kind, estimates, M, reference=None, crude_var=None):
        est = np.asarray(estimates, dtype=float)
        n = est.size
        std = float(np.std(est, ddof=1)) if n > 1 else 0.0
        mse = float(np.mean((est - reference) ** 2)) if reference is not None else None
        ratio = None
        if crude_var is not None and std > 0:
            ratio = crude_var / std**2
        return cls(kind, float(np.mean(est)), 1.96 * std / math.sqrt(n), std, mse, n, M, ratio, est)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean": self.mean,
            "half_width_95": self.half_width_95,
            "std": self.std,
            "mse": self.empirical_mse,
            "n": self.n_replications,
            "M": self.samples_per_replication,
            "variance_ratio": self.variance_ratio,
        }

    def csv_row(self) -> str:
        mse = "" if self.empirical_mse is None else f"{self.empirical_mse:.8g}"
        return f"{self.kind},{self.mean:.8g},{self.half_width_95:.8g},{mse}"


@dataclass
class ExperimentResult:
    crude: EstimatorReport
    controlled: EstimatorReport | None
    lambdas: np.ndarray | None
    control_means: np.ndarray | None
    reference: float | None
    seed: int

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "reference": self.reference, "crude": self.crude.to_dict()}
        if self.controlled is not None:
            out["controlled"] = self.controlled.to_dict()
            out["lambda_mean"] = self.lambdas.mean(axis=0).tolist()
            out["control_means"] = self.control_means.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        rows = ["estimator,mean,half_width,mse", self.crude.csv_row()]
        if self.controlled is not None:
            rows.append(self.controlled.csv_row())
        return "\n".join(rows) + "\n"


def replication_streams(seed: int, n: int):
    """One independent Philox generator per replication index."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def run_experiment(
    model: BSModel,
    payoff,
    spec: CVSpec | None,
    M: int,
    n: int,
    seed: int,
    reference: float | None = None,
    store: GridStore | None = None,
) -> ExperimentResult:
    """``n`` replications of the crude and controlled M-sample estimators.

    Both estimators consume the same draws.  With ``spec=None`` only the crude
    estimator is run.
    """
    if M < 1 or n < 1:
        raise ValueError("M and n must be >= 1")
    cv = build_control_variates(model, payoff, spec, store) if spec is not None else None
    d = model.dim
    crude, controlled, lambdas = [], [], []
    for rng in replication_streams(seed, n):
        pilot = None
        if cv is not None and spec.lambda_ is None and spec.lambda_mode == "pilot":
            pilot = rng.standard_normal((max(M // 10, d + 2), d))
        z = rng.standard_normal((M, d))
        s = model.terminals(z)
        f = np.asarray(payoff(s), dtype=float)
        crude.append(f.mean())
        if cv is None:
            continue
        x = cv.evaluate(z, s)
        if spec.lambda_ is not None:
            if spec.lambda_.size not in (1, d):
                raise ValueError(f"lambda must have length {d}")
            lam = np.broadcast_to(spec.lambda_, (d,)).astype(float)
        elif pilot is not None:
            sp = model.terminals(pilot)
            lam = solve_lambda(payoff(sp), cv.evaluate(pilot, sp), spec.diagonal)
        else:
            lam = solve_lambda(f, x, spec.diagonal)
        lambdas.append(lam)
        controlled.append((f - x @ lam).mean() + lam @ cv.quantized_means)
    crude_rep = EstimatorReport.from_estimates("crude", crude, M, reference)
    if cv is None:
        return ExperimentResult(crude_rep, None, None, None, reference, seed)
    kind = f"cv-{spec.basis}"
    ctrl_rep = EstimatorReport.from_estimates(kind, controlled, M, reference, crude_var=crude_rep.std**2)
    crude_rep.variance_ratio = 1.0
    return ExperimentResult(crude_rep, ctrl_rep, np.array(lambdas), cv.quantized_means, reference, seed)
