"""Running an extracted policy along simulated price paths.

Wealth moves by z * dX between trades. Each trade from z to z' debits c(z' - z).
The position is always closed at the final time. Lookups use the nearest x and y
node and the exact z node, so the strategy stays piecewise constant in time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .costs import CostSpec, cost
from .errors import GridMismatchError, InputError, PolicyError
from .lattice import PolicyField, nearest_index
from .market import PathSet
from .payoff import UtilitySpec, value


@dataclass
class StrategyPath:
    path_id: int
    jump_times: list
    positions: list  # position after each jump
    deltas: list
    costs: list
    wealth_after: list  # running wealth right after each jump
    wealth_terminal: float
    y0: float = 0.0
    z0: float = 0.0

    @property
    def n_jumps(self) -> int:
        return sum(1 for d in self.deltas if d != 0.0)

    @property
    def final_position(self) -> float:
        return self.positions[-1] if self.positions else self.z0


@dataclass
class JumpStats:
    mean_n: float
    small_jump_counts: list  # entry m: number of paths with exactly m small jumps
    large_jump_freq: float  # P(next jump large | current jump small), 0 if never observed
    land_zero_rate: float  # 1.0 when there are no small jumps (vacuous)
    n_paths: int = 0
    n_small: int = 0
    n_large: int = 0
    n_small_with_next: int = 0
    eps1: float = 0.0

    def tail(self, m: int) -> float:
        """Empirical P(number of small jumps >= m)."""
        return float(sum(self.small_jump_counts[m:])) / self.n_paths if self.n_paths else 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def execute_policy(policy: PolicyField, paths: PathSet, initial, cost_spec: CostSpec) -> list:
    """Run ``policy`` on every path of ``paths`` from ``initial = (y, z)``."""
    grid = policy.grid
    y0, z0 = map(float, initial)
    if paths.time_grid.size != grid.t.size or not np.allclose(paths.time_grid, grid.t, rtol=0, atol=1e-12):
        raise GridMismatchError("execute_policy: path times differ from the policy grid")
    try:
        iz = int(grid.z_index(z0))
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise InputError(f"execute_policy: initial position {z0} is not a z node") from exc

    X = paths.x_values
    P, nt = X.shape
    nz = grid.z.size
    y = np.full(P, y0)
    zi = np.full(P, iz, dtype=np.intp)
    logs = [[] for _ in range(P)]
    tix = policy.target_index

    def trade(rows, new_i, n):
        dz = grid.z[new_i] - grid.z[zi[rows]]
        c = cost(cost_spec, dz)
        y[rows] -= c
        for r, zb, za, cp, ya in zip(rows, grid.z[zi[rows]], grid.z[new_i], np.atleast_1d(c), y[rows]):
            logs[r].append((float(grid.t[n]), float(zb), float(za), float(cp), float(ya)))
        zi[rows] = new_i

    for n in range(nt):
        if n > 0:
            y += grid.z[zi] * (X[:, n] - X[:, n - 1])
        if n == nt - 1:
            rows = np.flatnonzero(grid.z[zi] != 0.0)
            if rows.size:
                trade(rows, np.full(rows.size, grid.zero_index, dtype=np.intp), n)
            break
        a = nearest_index(grid.x, X[:, n])
        active = np.arange(P)
        for _ in range(nz + 1):
            j = nearest_index(grid.y, y[active])
            go = policy.exercise[n, a[active], j, zi[active]]
            if not go.any():
                active = active[:0]
                break
            rows = active[go]
            new_i = tix[n, a[rows], j[go], zi[rows]]
            moved = new_i != zi[rows]
            rows, new_i = rows[moved], new_i[moved]
            if rows.size == 0:
                active = active[:0]
                break
            trade(rows, new_i, n)
            active = rows
        if active.size:
            raise PolicyError(f"execute_policy: jump chain does not terminate at t={grid.t[n]} "
                              f"for paths {active[:5].tolist()}")

    out = []
    for p in range(P):
        lg = logs[p]
        out.append(StrategyPath(
            path_id=p,
            jump_times=[r[0] for r in lg],
            positions=[r[2] for r in lg],
            deltas=[r[2] - r[1] for r in lg],
            costs=[r[3] for r in lg],
            wealth_after=[r[4] for r in lg],
            wealth_terminal=float(y[p]),
            y0=y0, z0=z0,
        ))
    return out


def write_trade_log(strategies, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "z_before", "z_after", "cost_paid", "y_after"])
        for s in strategies:
            zb = s.z0
            for t, za, c, ya in zip(s.jump_times, s.positions, s.costs, s.wealth_after):
                w.writerow([s.path_id, repr(t), repr(zb), repr(za), repr(c), repr(ya)])
                zb = za


def jump_statistics(strategies, eps1: float) -> JumpStats:
    """Count small (0 < |dZ| < eps1) and large (|dZ| >= eps1) jumps."""
    if not strategies:
        raise InputError("jump_statistics: empty strategy list")
    per_path = []
    n_small = n_large = small_zero = small_next = small_then_large = 0
    for s in strategies:
        kinds = []
        for d, zp in zip(s.deltas, s.positions):
            if d == 0.0:
                continue
            small = abs(d) < eps1
            kinds.append(small)
            if small:
                n_small += 1
                small_zero += zp == 0.0
            else:
                n_large += 1
        for a, b in zip(kinds, kinds[1:]):
            if a:
                small_next += 1
                small_then_large += not b
        per_path.append(sum(kinds))
    hist = np.bincount(np.asarray(per_path, dtype=np.intp)).tolist()
    return JumpStats(
        mean_n=float(np.mean([s.n_jumps for s in strategies])),
        small_jump_counts=[int(v) for v in hist],
        large_jump_freq=small_then_large / small_next if small_next else 0.0,
        land_zero_rate=small_zero / n_small if n_small else 1.0,
        n_paths=len(strategies), n_small=n_small, n_large=n_large,
        n_small_with_next=small_next, eps1=float(eps1),
    )


def mc_value_estimate(strategies, utility: UtilitySpec):
    """Sample mean of U(Y_T) and the half-width of its normal 95% interval."""
    if len(strategies) < 100:
        raise InputError("mc_value_estimate: need at least 100 strategies")
    u = value(utility, np.array([s.wealth_terminal for s in strategies]))
    half = 1.96 * u.std(ddof=1) / np.sqrt(u.size)
    return float(u.mean()), float(half)


@dataclass
class AuditResult:
    max_error: float
    worst_path: int
    errors: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_error <= 1e-10


def self_financing_audit(strategies, paths: PathSet, cost_spec: CostSpec) -> AuditResult:
    """Rebuild Y_T from the trade log alone and compare with the running wealth."""
    t = paths.time_grid
    worst, where = 0.0, -1
    for s in strategies:
        x = paths.x_values[s.path_id]
        z_step = np.full(t.size - 1, s.z0)
        total_cost = 0.0
        zb = s.z0
        for tj, za in zip(s.jump_times, s.positions):
            n = int(np.argmin(np.abs(t - tj)))
            z_step[n:] = za
            total_cost += float(cost(cost_spec, za - zb))
            zb = za
        y = s.y0 + float(np.sum(z_step * np.diff(x))) - total_cost
        err = abs(y - s.wealth_terminal)
        if err > worst:
            worst, where = err, s.path_id
    return AuditResult(worst, where)
