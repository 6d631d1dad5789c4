"""Grid files and an on-disk grid cache.

File layout::

    # dist=normal:0.0,1.0 N=2 distortion=0.36338022763241862
    -0.79788456080286541,0.5
    0.79788456080286541,0.5

Numbers carry 17 significant digits so that a float64 grid round-trips
exactly.
"""

from __future__ import annotations

import math
import os
import re
import threading
from pathlib import Path

import numpy as np

from .distrib import Distribution, normal, parse_distribution
from .quantizer import InvalidGridError, OptimizeConfig, QuantizerGrid, optimize

__all__ = ["GridFileError", "write_grid", "read_grid", "format_grid", "GridStore", "default_store"]

_HEADER = re.compile(r"^#\s*dist=(\S+)\s+N=(\d+)\s+distortion=(\S+)\s*$")


class GridFileError(ValueError):
    pass


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def format_grid(grid: QuantizerGrid) -> str:
    lines = [f"# dist={grid.distribution.spec} N={grid.level} distortion={_g17(grid.distortion)}"]
    lines += [f"{_g17(x)},{_g17(p)}" for x, p in zip(grid.points, grid.weights)]
    return "\n".join(lines) + "\n"


def write_grid(path, grid: QuantizerGrid) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(format_grid(grid), encoding="ascii")
    os.replace(tmp, path)


def read_grid(path, validate: bool = True) -> QuantizerGrid:
    """Load a grid file, checking ordering, weights and the header count."""
    text = Path(path).read_text(encoding="ascii")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GridFileError(f"{path}: empty grid file")
    m = _HEADER.match(lines[0])
    if not m:
        raise GridFileError(f"{path}: bad header {lines[0]!r}")
    try:
        dist = parse_distribution(m.group(1))
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}") from None
    n = int(m.group(2))
    dist_value = float(m.group(3))
    try:
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError:
        raise GridFileError(f"{path}: non-numeric row") from None
    if rows.shape != (n, 2):
        raise GridFileError(f"{path}: expected {n} rows of x,p, found shape {rows.shape}")
    grid = QuantizerGrid(dist, rows[:, 0].copy(), rows[:, 1].copy(), dist_value)
    if validate:
        x, p = grid.points, grid.weights
        if np.any(np.diff(x) <= 0):
            raise GridFileError(f"{path}: points not strictly increasing")
        if np.any(p <= 0):
            raise GridFileError(f"{path}: non-positive weight")
        if abs(math.fsum(p) - 1.0) > 1e-12:
            raise GridFileError(f"{path}: weights sum to {math.fsum(p)!r}")
        if not (math.isfinite(dist_value) and dist_value >= 0):
            raise GridFileError(f"{path}: bad distortion {dist_value!r}")
        lo, hi = dist.support
        if x[0] < lo or x[-1] > hi:
            raise GridFileError(f"{path}: points outside support")
    return grid


class GridStore:
    """Cache of optimal grids keyed by (law, N).

    With a ``directory`` grids persist as CSV files and are read back on
    later runs.  Gaussian laws are derived from the stored N(0,1) grid by an
    affine map, which preserves optimality.
    """

    def __init__(self, directory=None, config: OptimizeConfig | None = None):
        self.directory = Path(directory) if directory is not None else None
        self.config = config or OptimizeConfig()
        self._memory: dict = {}
        self._lock = threading.Lock()
        if self.directory is not None:
            if self.directory.exists() and not self.directory.is_dir():
                raise GridFileError(f"grid store {self.directory} is not a directory")
            self.directory.mkdir(parents=True, exist_ok=True)

    def path_for(self, dist: Distribution, n: int) -> Path | None:
        if self.directory is None:
            return None
        tag = re.sub(r"[^A-Za-z0-9.+-]", "_", dist.spec)
        return self.directory / f"{tag}_N{n}.csv"

    def get(self, dist: Distribution, n: int) -> QuantizerGrid:
        if dist.kind == "normal" and dist.params != (0.0, 1.0):
            mu, sigma = dist.params
            return self.get(normal(), n).rescaled(mu, sigma, dist)
        key = (dist, n)
        with self._lock:
            grid = self._memory.get(key)
        if grid is not None:
            return grid
        path = self.path_for(dist, n)
        if path is not None and path.exists():
            try:
                grid = read_grid(path)
            except (GridFileError, InvalidGridError, OSError):
                grid = None
        if grid is None:
            grid, report = optimize(dist, n, self.config)
            if not report.converged:
                raise ArithmeticError(
                    f"optimizer did not converge for {dist} N={n} "
                    f"(gradient {report.final_gradient_norm:.3g} after {report.iterations} iterations)"
                )
            if path is not None:
                write_grid(path, grid)
        with self._lock:
            self._memory[key] = grid
        return grid


_default = None


def default_store() -> GridStore:
    """Process-wide in-memory store."""
    global _default
    if _default is None:
        _default = GridStore()
    return _default
