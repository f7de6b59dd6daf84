"""Stock dynamics dX = b(t,X) dt + sigma(t,X) dW, path simulation and one-step quadrature.

Two coefficient families are shipped so that the sup-norm bounds and the
Lipschitz constant are exact: ``constant`` and ``affine`` (a + k*x clamped to
a symmetric band for the drift, to ``[0, cap]`` for the volatility).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError

# Paths are generated in fixed-size blocks, each with its own spawned stream,
# so the result does not depend on how blocks are spread over workers.
PATH_BLOCK = 4096


@dataclass(frozen=True)
class MarketModel:
    drift_kind: str = "constant"
    drift_params: tuple = (0.0,)
    vol_kind: str = "constant"
    vol_params: tuple = (0.0,)
    drift_cap: float | None = None
    vol_cap: float | None = None

    def __post_init__(self):
        for kind, params, cap, name in (
            (self.drift_kind, self.drift_params, self.drift_cap, "drift"),
            (self.vol_kind, self.vol_params, self.vol_cap, "vol"),
        ):
            if kind == "constant":
                if len(params) != 1:
                    raise InputError(f"{name}: constant kind takes one parameter")
            elif kind == "affine":
                if len(params) != 2:
                    raise InputError(f"{name}: affine kind takes (intercept, slope)")
                if cap is None or not cap >= 0:
                    raise InputError(f"{name}: affine kind needs a non-negative cap")
            else:
                raise InputError(f"{name}: unknown kind {kind!r}")
            if not all(np.isfinite(p) for p in params):
                raise InputError(f"{name}: non-finite parameter")
        if self.vol_kind == "constant" and self.vol_params[0] < 0:
            raise InputError("vol: volatility must be non-negative")

    @classmethod
    def constant(cls, drift: float, vol: float) -> "MarketModel":
        return cls("constant", (float(drift),), "constant", (float(vol),))

    @property
    def is_constant(self) -> bool:
        return self.drift_kind == "constant" and self.vol_kind == "constant"

    @property
    def b_sup(self) -> float:
        if self.drift_kind == "constant":
            return abs(self.drift_params[0])
        return float(self.drift_cap)

    @property
    def s_sup(self) -> float:
        if self.vol_kind == "constant":
            return float(self.vol_params[0])
        return float(self.vol_cap)

    @property
    def lipschitz_k(self) -> float:
        k = 0.0
        if self.drift_kind == "affine":
            k = max(k, abs(self.drift_params[1]))
        if self.vol_kind == "affine":
            k = max(k, abs(self.vol_params[1]))
        return k


def coefficients(model: MarketModel, t, x):
    """Return ``(drift, vol)`` at ``(t, x)``; broadcasts over array ``x``.

    The shipped families are time-homogeneous, ``t`` is accepted for the
    general signature only.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("coefficients: non-finite price")
    if model.drift_kind == "constant":
        b = np.full_like(x, model.drift_params[0])
    else:
        a, k = model.drift_params
        b = np.clip(a + k * x, -model.drift_cap, model.drift_cap)
    if model.vol_kind == "constant":
        s = np.full_like(x, model.vol_params[0])
    else:
        a, k = model.vol_params
        s = np.clip(a + k * x, 0.0, model.vol_cap)
    if b.ndim == 0:
        return float(b), float(s)
    return b, s


@dataclass
class PathSet:
    t0: float
    time_grid: np.ndarray
    x_values: np.ndarray  # (n_paths, n_times)
    seed: int
    x0: float = field(default=0.0)

    @property
    def n_paths(self) -> int:
        return self.x_values.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "t", "x"])
            for p in range(self.n_paths):
                for t, x in zip(self.time_grid, self.x_values[p]):
                    w.writerow([p, repr(float(t)), repr(float(x))])


def _simulate_block(model, time_grid, x0, n, ss):
    rng = np.random.default_rng(ss)
    n_t = len(time_grid)
    out = np.empty((n, n_t))
    out[:, 0] = x0
    dts = np.diff(time_grid)
    xi = rng.standard_normal((n, n_t - 1))
    x = out[:, 0].copy()
    for k, dt in enumerate(dts):
        b, s = coefficients(model, time_grid[k], x)
        x = x + b * dt + s * np.sqrt(dt) * xi[:, k]
        out[:, k + 1] = x
    return out


def simulate_paths(model: MarketModel, t0: float, x0: float, time_grid, n_paths: int,
                   seed: int, workers: int = 1) -> PathSet:
    """Euler-Maruyama paths on ``time_grid`` (no substeps).

    Reproducible in ``seed`` and independent of ``workers``.
    """
    time_grid = np.asarray(time_grid, dtype=float)
    if time_grid.ndim != 1 or time_grid.size == 0:
        raise InputError("simulate_paths: empty time grid")
    if np.any(np.diff(time_grid) <= 0):
        raise InputError("simulate_paths: time grid must be strictly increasing")
    if not np.isclose(time_grid[0], t0):
        raise InputError("simulate_paths: time grid must start at t0")
    if n_paths < 1:
        raise InputError("simulate_paths: n_paths must be >= 1")
    if not np.isfinite(x0):
        raise InputError("simulate_paths: non-finite x0")

    sizes = [min(PATH_BLOCK, n_paths - s) for s in range(0, n_paths, PATH_BLOCK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, streams))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda j: _simulate_block(model, time_grid, x0, *j), jobs))
    else:
        blocks = [_simulate_block(model, time_grid, x0, *j) for j in jobs]
    return PathSet(float(t0), time_grid, np.vstack(blocks), int(seed), float(x0))


@lru_cache(maxsize=None)
def _hermite_rule(n_nodes: int):
    if n_nodes == 2:
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    xi, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    return xi, w


def _check_quadrature_args(dt, n_nodes):
    if not dt > 0:
        raise InputError("transition_quadrature: dt must be > 0")
    if n_nodes != 2 and (n_nodes < 3 or n_nodes % 2 == 0):
        raise InputError("transition_quadrature: n_nodes must be odd and >= 3 (or 2 for the binomial rule)")


def transition_quadrature(model: MarketModel, t: float, x: float, dt: float, n_nodes: int = 7):
    """Discretise the one-step Euler law of X_{t+dt} given X_t = x.

    Returns a list of ``(x_next, weight)``. ``n_nodes=2`` gives the symmetric
    binomial rule x + b dt +/- sigma sqrt(dt).
    """
    _check_quadrature_args(dt, n_nodes)
    b, s = coefficients(model, t, x)
    if s == 0:
        return [(x + b * dt, 1.0)]
    xi, w = _hermite_rule(n_nodes)
    nodes = x + b * dt + s * np.sqrt(dt) * xi
    return list(zip(nodes.tolist(), w.tolist()))


def transition_nodes(model: MarketModel, t: float, x, dt: float, n_nodes: int = 7):
    """Vectorised form used by the solver: ``(x_next[len(x), n], weights[n])``.

    Degenerate volatility collapses the nodes onto one point; weights are unchanged.
    """
    _check_quadrature_args(dt, n_nodes)
    x = np.asarray(x, dtype=float)
    b, s = coefficients(model, t, x)
    xi, w = _hermite_rule(n_nodes)
    nodes = (x + b * dt)[:, None] + (s * np.sqrt(dt))[:, None] * xi[None, :]
    return nodes, w
