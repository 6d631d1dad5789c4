"""Product quantizers of vectors with independent components."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .distrib import Distribution
from .gridio import GridStore, default_store
from .quantizer import QuantizerGrid

__all__ = [
    "ProductGrid",
    "GridTooLargeError",
    "SingularDesignError",
    "product_expectation",
    "ExpansionTable",
    "expansion_check",
    "default_design",
]

MAX_DIM = 6
MAX_NODES = 10**7
_CHUNK = 1 << 16


class GridTooLargeError(ValueError):
    pass


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ProductGrid:
    axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not self.axes:
            raise ValueError("a product grid needs at least one axis")

    @classmethod
    def build(cls, dists, levels, store: GridStore | None = None) -> "ProductGrid":
        store = store or default_store()
        if len(dists) != len(levels):
            raise ValueError("one level per distribution is required")
        return cls(tuple(store.get(d, int(n)) for d, n in zip(dists, levels)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def levels(self) -> tuple:
        return tuple(a.level for a in self.axes)

    @property
    def total_level(self) -> int:
        return math.prod(self.levels)


def _eval_rows(f, nodes):
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape != (nodes.shape[0],):
            raise ValueError
    except (TypeError, ValueError):
        vals = np.array([float(f(row)) for row in nodes])
    if not np.all(np.isfinite(vals)):
        raise ArithmeticError("integrand returned a non-finite value on the product grid")
    return vals


def product_expectation(pg: ProductGrid, f) -> float:
    """``sum over nodes of prod_k p_{k,i_k} * f(node)``.

    ``f`` receives an ``(m, d)`` array of nodes and returns ``m`` values.
    Nodes are visited in lexicographic axis order; the result is exactly
    rounded, hence independent of chunking.
    """
    if pg.dim > MAX_DIM or pg.total_level > MAX_NODES:
        raise GridTooLargeError(
            f"product grid with d={pg.dim} and {pg.total_level} nodes exceeds the enumeration cap "
            f"(d <= {MAX_DIM}, nodes <= {MAX_NODES}); use Monte Carlo sampling of the nodes instead"
        )
    pts = [a.points for a in pg.axes]
    wts = [a.weights for a in pg.axes]
    levels = pg.levels
    # trailing axes are evaluated as one vectorized block
    split = pg.dim
    while split > 0 and math.prod(levels[split - 1 :]) <= _CHUNK:
        split -= 1
    split = min(split, pg.dim - 1)
    tail_nodes = np.array(list(itertools.product(*pts[split:])), dtype=float).reshape(-1, pg.dim - split)
    tail_w = np.ones(1)
    for w in wts[split:]:
        tail_w = np.multiply.outer(tail_w, w).ravel()
    terms = []
    for idx in np.ndindex(*levels[:split]):
        head = np.array([pts[k][i] for k, i in enumerate(idx)])
        head_w = math.prod(wts[k][i] for k, i in enumerate(idx))
        nodes = np.hstack([np.broadcast_to(head, (tail_nodes.shape[0], split)), tail_nodes])
        terms.append(head_w * tail_w * _eval_rows(f, nodes))
    return math.fsum(itertools.chain.from_iterable(terms))


@dataclass
class ExpansionTable:
    levels: np.ndarray  # (m, d)
    errors: np.ndarray  # signed E f(X) - E f(X_hat)
    coefficients: np.ndarray  # fitted c_k
    fitted: np.ndarray  # sum_k c_k / N_k^2 per row

    @property
    def residuals(self) -> np.ndarray:
        return self.errors - self.fitted

    def rows(self):
        return [(*map(int, n), e, s) for n, e, s in zip(self.levels, self.errors, self.fitted)]

    def to_csv(self) -> str:
        d = self.levels.shape[1]
        head = ",".join(f"N{k + 1}" for k in range(d)) + ",error,fitted"
        out = [head]
        for row in self.rows():
            out.append(",".join(str(v) for v in row[:d]) + f",{row[d]:.8g},{row[d + 1]:.8g}")
        return "\n".join(out) + "\n"


def default_design(d: int, levels=(25, 50, 100, 200)) -> list:
    """All level tuples from ``levels``; anisotropic rows keep the regression well posed."""
    return list(itertools.product(levels, repeat=d))


def expansion_check(
    f,
    dists,
    design,
    reference: float,
    store: GridStore | None = None,
) -> ExpansionTable:
    """Fit ``E f(X) - E f(X_hat) ~ sum_k c_k / N_k^2`` over a level design.

    Each row is weighted by the inverse of its own ``sum_k 1/N_k^2`` so that
    the fit is in relative terms.
    """
    dists = list(dists)
    design = np.asarray(design, dtype=int)
    if design.ndim != 2 or design.shape[1] != len(dists):
        raise ValueError("design rows must give one level per component")
    A = 1.0 / design.astype(float) ** 2
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularDesignError("level design does not separate the per-axis terms; vary the levels per axis")
    errors = np.array(
        [reference - product_expectation(ProductGrid.build(dists, row, store), f) for row in design]
    )
    # relative weighting: coarse rows would otherwise dominate the fit
    scale = A.sum(axis=1)
    coef, *_ = np.linalg.lstsq(A / scale[:, None], errors / scale, rcond=None)
    return ExpansionTable(design, errors, coef, A @ coef)
