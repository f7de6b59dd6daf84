"""Iterated optimal stopping for the n-transaction value functions V^n.

With phi a value tensor on the lattice,

    bar phi(t,x,y,z) = max over grid targets zt of phi(t, x, y - c(zt - z), zt)
    hat phi(t,x,y,z) = sup over stopping times of E[bar phi(tau, X_tau, y + z (X_tau - x), z)]

and V^n = hat V^{n-1}. The recursion starts from the immediate-liquidation value
V^0 = U(y - c(-z)) on every time slice; under a subadditive cost bar V^0 = V^0,
so hat V^0 is the single-trade value V^1.

Each backward layer is fully vectorised over (x, y, z); the transaction-budget
recursion over k is sequential.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .costs import CostSpec, cost
from .errors import InputError, PolicyError, SolverInvariantError
from .lattice import ClampCounter, GridSpec, PolicyField, ValueSurface, nearest_index, x_stencil, y_stencil
from .market import MarketModel, transition_nodes
from .payoff import UtilitySpec, value as utility_value

log = logging.getLogger(__name__)

TIE_KEYS = ("stay", "to_zero", "nearest")


@dataclass
class SolverConfig:
    grid: GridSpec
    n_max: int = 8
    stop_tol: float = 1e-4
    tie_break: tuple = TIE_KEYS
    exercise_tol: float = 1e-8
    tie_tol: float = 1e-12
    n_quad: int = 7
    monotone_tol: float = 1e-10
    full_depth: bool = False  # ignore stop_tol and compute every layer up to n_max

    def __post_init__(self):
        if self.n_max < 1:
            raise InputError("solver: n_max must be >= 1")
        if not self.stop_tol > 0:
            raise InputError("solver: stop_tol must be > 0")
        if self.exercise_tol < 0 or self.tie_tol < 0:
            raise InputError("solver: tolerances must be >= 0")
        if sorted(self.tie_break) != sorted(TIE_KEYS):
            raise InputError(f"solver: tie_break must order {TIE_KEYS}")


def y_slopes_for(utility: UtilitySpec):
    """Edge slopes for extending values beyond the y box.

    With slopes in [lam, Lam] the value drops at least as fast as Lam going down
    and rises at least lam going up, so these extensions never overstate it.
    """
    b = utility.slope_bounds
    return (b[1], b[0]) if b else (None, None)


def terminal_layer(grid: GridSpec, utility: UtilitySpec, cost_spec: CostSpec) -> np.ndarray:
    """Liquidation value U(y - c(-z)) on one (x, y, z) slice."""
    liq = cost(cost_spec, -grid.z)
    v = utility_value(utility, grid.y[:, None] - liq[None, :])
    return np.broadcast_to(v, (grid.x.size,) + v.shape).copy()


def _priority(grid: GridSpec, order) -> np.ndarray:
    """perm[i] lists target indices from most to least preferred on ties."""
    z = grid.z
    perm = np.empty((z.size, z.size), dtype=np.intp)
    for i in range(z.size):
        keys = {
            "stay": lambda m: m != i,
            "to_zero": lambda m: z[m] != 0.0,
            "nearest": lambda m: abs(z[m] - z[i]),
        }
        perm[i] = sorted(range(z.size), key=lambda m: tuple(keys[k](m) for k in order) + (z[m],))
    return perm


class BarKernel:
    """Precomputed shifts c(zt - z) and y stencils for the bar operator."""

    def __init__(self, grid: GridSpec, cost_spec: CostSpec, y_slopes=(None, None),
                 tie_break=TIE_KEYS, tie_tol=1e-12):
        self.grid = grid
        z = grid.z
        self.shift = cost(cost_spec, z[None, :] - z[:, None])  # [i, m]
        q = grid.y[:, None, None] - self.shift[None, :, :]  # [j, i, m]
        self.st = y_stencil(grid.y, q, y_slopes)
        self.perm = _priority(grid, tie_break)
        self.tie_tol = tie_tol
        self._m = np.arange(z.size)[None, None, :]
        self._i = np.arange(z.size)[:, None]

    def candidates(self, phi: np.ndarray) -> np.ndarray:
        """cand[a, j, i, m] = phi(x_a, y_j - c(z_m - z_i), z_m)."""
        st = self.st
        return st.apply(phi[:, st.i0, self._m], phi[:, st.i0 + 1, self._m])

    def __call__(self, phi: np.ndarray, counter: ClampCounter | None = None):
        cand = self.candidates(phi)
        if counter is not None:
            counter.add("bar_y", int(self.st.outside.sum()) * phi.shape[0])
        best = cand.max(axis=-1)
        ordered = cand[:, :, self._i, self.perm]
        ok = ordered >= (best - self.tie_tol * (1 + np.abs(best)))[..., None]
        first = np.argmax(ok, axis=-1)
        psi = self.perm[np.arange(self.grid.z.size)[None, None, :], first]
        bar = np.take_along_axis(cand, psi[..., None], axis=-1)[..., 0]
        return bar, psi


def bar_operator(phi: np.ndarray, grid: GridSpec, cost_spec: CostSpec, tie_break=TIE_KEYS,
                 y_slopes=(None, None), counter=None):
    """Best value immediately after one trade and the chosen target index psi."""
    return BarKernel(grid, cost_spec, y_slopes, tie_break)(phi, counter)


class HatKernel:
    """Quadrature nodes and bilinear stencils for one backward step of length dt."""

    def __init__(self, grid: GridSpec, market: MarketModel, t: float, dt: float, n_quad=7,
                 y_slopes=(None, None)):
        xn, self.w = transition_nodes(market, t, grid.x, dt, n_quad)  # [a, q]
        self.xs = x_stencil(grid.x, xn)
        yq = grid.y[None, None, :, None] + grid.z[None, None, None, :] * (xn - grid.x[:, None])[:, :, None, None]
        self.ys = y_stencil(grid.y, yq, y_slopes)  # [a, q, j, i]
        self._i = np.arange(grid.z.size)[None, None, None, :]
        self.n_outside = (int(self.xs.outside.sum()) * grid.y.size * grid.z.size, int(self.ys.outside.sum()))

    def continuation(self, nxt: np.ndarray) -> np.ndarray:
        ys, xs = self.ys, self.xs
        out = 0.0
        for ix, wx in ((xs.i0, xs.w_lo), (xs.i0 + 1, xs.w_hi)):
            ix4 = ix[:, :, None, None]
            col = ys.apply(nxt[ix4, ys.i0, self._i], nxt[ix4, ys.i0 + 1, self._i])
            out = out + wx[:, :, None, None] * col
        return np.tensordot(out, self.w, axes=([1], [0]))


def hat_step(next_slice, bar_slice, market, grid, t, dt, n_quad=7, y_slopes=(None, None),
             exercise_tol=1e-8, counter=None, kernel: HatKernel | None = None):
    """One backward step: hat = max(bar, E[next(X', y + z (X' - x), z)]).

    Returns ``(hat, continue_mask)``; ties within ``exercise_tol`` count as continuation.
    """
    k = kernel or HatKernel(grid, market, t, dt, n_quad, y_slopes)
    cont = k.continuation(next_slice)
    if counter is not None:
        counter.add("hat_x", k.n_outside[0])
        counter.add("hat_y", k.n_outside[1])
    keep = cont >= bar_slice - exercise_tol * (1 + np.abs(bar_slice))
    return np.maximum(bar_slice, cont), keep


@dataclass
class SolveResult:
    grid: GridSpec
    surfaces: list  # V^1 .. V^k
    liquidation: np.ndarray  # V^0 slice
    exercise: np.ndarray  # final pass, bool (t, x, y, z)
    psi: np.ndarray  # final pass target indices
    increments: list = field(default_factory=list)  # sup |V^k - V^{k-1}|, k = 1..
    clamps: dict = field(default_factory=dict)
    layer_seconds: list = field(default_factory=list)
    y_slopes: tuple = (None, None)

    @property
    def final(self) -> ValueSurface:
        return self.surfaces[-1]

    def report(self) -> dict:
        """Deterministic solve summary (timings are kept separately)."""
        return {
            "k": len(self.surfaces),
            "sup_increment": [float(v) for v in self.increments],
            "clamps": {k: int(v) for k, v in sorted(self.clamps.items())},
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def solve_vn(config: SolverConfig, market: MarketModel, cost_spec: CostSpec,
             utility: UtilitySpec) -> SolveResult:
    grid = config.grid
    if np.max(np.abs(grid.z)) * 2 > 2 * cost_spec.M * (1 + 1e-12):
        raise InputError("solver: z nodes exceed the cost's position bound M")
    slopes = y_slopes_for(utility)
    counter = ClampCounter()
    bar_k = BarKernel(grid, cost_spec, slopes, config.tie_break, config.tie_tol)
    dts = np.diff(grid.t)
    hat_cache = {}

    def hat_kernel(n):
        key = round(float(dts[n]), 15)
        if key not in hat_cache:
            hat_cache[key] = HatKernel(grid, market, grid.t[n], dts[n], config.n_quad, slopes)
        return hat_cache[key]

    nt = grid.t.size
    v0 = terminal_layer(grid, utility, cost_spec)
    prev = np.broadcast_to(v0, grid.shape)
    surfaces, increments, layer_secs = [], [], []
    exercise = psi = None
    zidx = np.arange(grid.z.size)

    # Stopping in pass k with bar-argmax "stay" hands the state over to the
    # (k-1)-budget rule at the same node; for V^0 that rule is liquidation.
    # ``resolved`` carries the trade that stopping in the previous pass implies.
    resolved = np.full(grid.shape, grid.zero_index, dtype=np.intp)

    for k in range(1, config.n_max + 1):
        cur = np.empty(grid.shape)
        ex = np.zeros(grid.shape, dtype=bool)
        ps = np.empty(grid.shape, dtype=np.intp)
        t0 = time.perf_counter()
        bar_T, psi_T = bar_k(prev[-1], counter)
        cur[-1] = bar_T
        # terminal time: liquidation is forced
        ex[-1] = (grid.z != 0.0)[None, None, :]
        ps[-1] = grid.zero_index
        for n in range(nt - 2, -1, -1):
            bar, p = bar_k(prev[n], counter)
            hat, keep = hat_step(cur[n + 1], bar, market, grid, grid.t[n], dts[n],
                                 exercise_tol=config.exercise_tol, counter=counter, kernel=hat_kernel(n))
            cur[n] = hat
            target = np.where(p != zidx, p, resolved[n])
            trade = ~keep & (target != zidx)
            ex[n] = trade
            ps[n] = np.where(trade, target, zidx)
        layer_secs.append(time.perf_counter() - t0)

        diff = cur - prev
        worst = float(diff.min())
        if worst < -config.monotone_tol:
            loc = np.unravel_index(int(np.argmin(diff)), diff.shape)
            raise SolverInvariantError(
                f"V^{k} < V^{k-1} by {-worst:.3e} at index {loc}",
                diagnostic={"k": k, "index": [int(v) for v in loc], "slice": cur[loc[0]]},
            )
        inc = float(np.abs(diff).max())
        increments.append(inc)
        surfaces.append(ValueSurface(grid, k, cur, slopes))
        exercise, psi = ex, ps
        prev, resolved = cur, ps
        log.info("k=%d sup increment %.3e (%.2fs)", k, inc, layer_secs[-1])
        if inc < config.stop_tol and not config.full_depth:
            break

    return SolveResult(grid, surfaces, v0, exercise, psi, increments, dict(counter), layer_secs, slopes)


def extract_policy(result: SolveResult, cost_spec: CostSpec) -> PolicyField:
    """Exercise set and jump targets of the final pass, with same-instant chains collapsed.

    From an exercise state the trade lands at (y - c(psi - z), psi); if that state
    is itself an exercise state the chain is followed to its end and the first
    trade is redirected there. A chain longer than the number of z nodes is a cycle.
    """
    grid = result.grid
    nz = grid.z.size
    ex = result.exercise.copy()
    tgt = result.psi.copy()
    t_idx, a_idx, j_idx, i_idx = np.nonzero(ex[:-1])
    if t_idx.size:
        y = grid.y[j_idx].copy()
        cur = tgt[t_idx, a_idx, j_idx, i_idx]
        active = np.ones(t_idx.size, dtype=bool)
        prev_z = i_idx.copy()
        for _ in range(nz + 1):
            y[active] -= cost(cost_spec, grid.z[cur[active]] - grid.z[prev_z[active]])
            jn = nearest_index(grid.y, y)
            more = active & ex[t_idx, a_idx, jn, cur]
            if not more.any():
                active[:] = False
                break
            nxt = tgt[t_idx, a_idx, jn, cur]
            prev_z = np.where(more, cur, prev_z)
            cur = np.where(more, nxt, cur)
            active = more
        if active.any():
            bad = np.flatnonzero(active)[:5]
            states = [(float(grid.t[t_idx[b]]), float(grid.x[a_idx[b]]), float(grid.y[j_idx[b]]),
                       float(grid.z[i_idx[b]])) for b in bad]
            raise PolicyError(f"jump chain cycle detected at states {states}")
        tgt[t_idx, a_idx, j_idx, i_idx] = cur
        stay = cur == i_idx
        ex[t_idx[stay], a_idx[stay], j_idx[stay], i_idx[stay]] = False
    tgt = np.where(ex, tgt, np.arange(nz)[None, None, None, :])
    return PolicyField(grid, ex, grid.z[tgt], result.final.n_jumps)
