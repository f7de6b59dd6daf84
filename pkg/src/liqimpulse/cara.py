"""Exponential utility with constant coefficients: the (t, z) reduction.

For U(y) = -exp(-y) the value factorises as V(t, x, y, z) = -exp(-y) * W(t, z),
where W is the smallest achievable E[exp(liquidity costs - trading gains)].
W is solved here directly on a (t, z) lattice, in log space, and compared
with a full four-dimensional solve as a consistency check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .costs import CostSpec, cost
from .errors import GridMismatchError, InputError
from .lattice import ValueSurface, interpolate

# Strict-improvement margin for a jump in the reduced problem (log units).
JUMP_TOL = 1e-12


@dataclass(frozen=True)
class CaraProblem:
    b0: float
    s0: float
    alpha: float
    c0_coeff: float
    t_nodes: tuple
    z_nodes: tuple
    M: float
    n_rounds: int | None = None  # None: unlimited jumps; k: at most k trades

    def __post_init__(self):
        t = np.asarray(self.t_nodes, dtype=float)
        z = np.asarray(self.z_nodes, dtype=float)
        if self.s0 < 0:
            raise InputError("cara: s0 must be >= 0")
        if not 0 < self.alpha < 1:
            raise InputError("cara: alpha must lie in (0, 1)")
        if self.c0_coeff < 0:
            raise InputError("cara: c0_coeff must be >= 0")
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise InputError("cara: t_nodes must be strictly increasing with >= 2 entries")
        if np.any(np.diff(z) <= 0) or not np.allclose(z, -z[::-1], atol=1e-12) or 0.0 not in z:
            raise InputError("cara: z_nodes must be increasing, symmetric and contain 0")
        if np.max(np.abs(z)) > self.M * (1 + 1e-12):
            raise InputError("cara: z_nodes exceed M")
        if self.n_rounds is not None and self.n_rounds < 1:
            raise InputError("cara: n_rounds must be >= 1 or None")

    @property
    def cost_spec(self) -> CostSpec:
        return CostSpec("power", c0=self.c0_coeff, alpha=self.alpha, M=self.M)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.t_nodes, dtype=float)

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.z_nodes, dtype=float)


@dataclass
class CaraSurface:
    t: np.ndarray
    z: np.ndarray
    log_value: np.ndarray  # log W, shape (nt, nz)
    jump: np.ndarray  # bool, jump taken at (t, z)
    target: np.ndarray  # z value after the (collapsed) jump, z itself otherwise
    layers: list = field(default_factory=list)  # log W per budget round when n_rounds is set

    @property
    def value(self) -> np.ndarray:
        return np.exp(self.log_value)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "z", "value", "action", "target"])
            for n, t in enumerate(self.t):
                for i, z in enumerate(self.z):
                    w.writerow([repr(float(t)), repr(float(z)), repr(float(np.exp(self.log_value[n, i]))),
                                "jump" if self.jump[n, i] else "hold", repr(float(self.target[n, i]))])


def _closure(cmat: np.ndarray):
    """Min-plus transitive closure of the jump-cost matrix, with successor table.

    ``nxt[i, j]`` is the first hop on a cheapest route from i to j, so a route
    found here is a chain of same-instant jumps.
    """
    d = cmat.copy()
    n = d.shape[0]
    nxt = np.tile(np.arange(n), (n, 1))
    for m in range(n):
        via = d[:, m:m + 1] + d[m:m + 1, :]
        better = via < d - JUMP_TOL
        d = np.where(better, via, d)
        nxt = np.where(better, nxt[:, m:m + 1], nxt)
    return d, nxt


def _jump_relax(hold, dist, z_idx_zero):
    """min over targets of dist + hold, with the stay option preferred on ties.

    Among equally good targets the origin wins, then z = 0, then the lowest index.
    """
    cand = dist + hold[None, :]
    best = cand.min(axis=1)
    stay = hold <= best + JUMP_TOL
    arg = np.argmin(cand, axis=1)
    zero_ok = cand[:, z_idx_zero] <= best + JUMP_TOL
    arg = np.where(zero_ok, z_idx_zero, arg)
    idx = np.arange(hold.size)
    arg = np.where(stay, idx, arg)
    return np.where(stay, hold, best), arg


def solve_cara(problem: CaraProblem) -> CaraSurface:
    """Backward induction for log W.

    Terminal layer: log W(T, z) = c(-z). Holding over one step multiplies W by
    exp(-b0 z dt + s0^2 z^2 dt / 2), the exact Gaussian moment. Trading from z to
    z' multiplies it by exp(c(z' - z)). With ``n_rounds`` set, the solve is the
    budget-limited recursion started from immediate liquidation.
    """
    t, z = problem.t, problem.z
    spec = problem.cost_spec
    nt, nz = t.size, z.size
    izero = int(np.flatnonzero(z == 0.0)[0])
    cmat = cost(spec, z[None, :] - z[:, None])
    np.fill_diagonal(cmat, 0.0)
    liq = cost(spec, -z)
    dts = np.diff(t)

    def hold_drift(dt):
        return -problem.b0 * z * dt + 0.5 * problem.s0 ** 2 * z ** 2 * dt

    if problem.n_rounds is None:
        dist, nxt = _closure(cmat)
        L = np.empty((nt, nz))
        jump = np.zeros((nt, nz), dtype=bool)
        target = np.tile(z, (nt, 1))
        L[-1] = liq
        jump[-1] = z != 0.0
        target[-1] = 0.0
        for n in range(nt - 2, -1, -1):
            hold = L[n + 1] + hold_drift(dts[n])
            L[n], arg = _jump_relax(hold, dist, izero)
            jump[n] = arg != np.arange(nz)
            target[n] = z[arg]
        return CaraSurface(t, z, L, jump, target)

    # budget-limited rounds: one trade per round, chained through the layers
    prev = np.tile(liq, (nt, 1))
    resolved = np.full((nt, nz), izero)
    layers = []
    idx = np.arange(nz)
    for _ in range(problem.n_rounds):
        cur = np.empty((nt, nz))
        res = np.tile(idx, (nt, 1))
        bar_T, arg_T = _jump_relax(prev[-1], cmat, izero)
        cur[-1] = bar_T
        res[-1] = izero
        for n in range(nt - 2, -1, -1):
            bar, arg = _jump_relax(prev[n], cmat, izero)
            hold = cur[n + 1] + hold_drift(dts[n])
            stop = bar < hold - JUMP_TOL
            cur[n] = np.where(stop, bar, hold)
            tgt = np.where(arg != idx, arg, resolved[n])
            res[n] = np.where(stop, tgt, idx)
        layers.append(cur)
        prev, resolved = cur, res
    jump = resolved != idx[None, :]
    jump[-1] = z != 0.0
    return CaraSurface(t, z, prev, jump, z[resolved], layers)


def cross_check_factorization(generic: ValueSurface, reduced: CaraSurface, x0: float, y0: float) -> float:
    """max over (t, z) of |V(t, x0, y0, z) + exp(-y0) W(t, z)| / (1 + |W(t, z)|).

    The generic surface must be solved with exponential utility on the same
    t and z nodes as the reduced one.
    """
    g = generic.grid
    if g.t.size != reduced.t.size or not np.allclose(g.t, reduced.t, rtol=0, atol=1e-12):
        raise GridMismatchError("cross-check: time nodes differ")
    if g.z.size != reduced.z.size or not np.allclose(g.z, reduced.z, rtol=0, atol=1e-12):
        raise GridMismatchError("cross-check: position nodes differ")
    if not (g.x[0] <= x0 <= g.x[-1] and g.y[0] <= y0 <= g.y[-1]):
        raise GridMismatchError("cross-check: reference column outside the generic grid")
    W = reduced.value
    worst = 0.0
    for n, t in enumerate(g.t):
        for i, z in enumerate(g.z):
            v = interpolate(generic, t, x0, y0, z)
            err = abs(v + np.exp(-y0) * W[n, i]) / (1 + abs(W[n, i]))
            worst = max(worst, err)
    return float(worst)
