"""Trade-size cost c(z) and its derived analytics.

Covers the modulus of continuity and its n-fold splitting bound, the
subadditive envelope obtained by splitting an order into pieces, the
small-jump constants (eta, gamma, alpha1, beta1, C0, C1, eps1) and a
sampled assumption audit.

Monotonicity convention: cost is nondecreasing in |z| on each side of 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, InputError

KINDS = ("power", "fixed_plus_power", "proportional", "tabulated")
FIXED_KINDS = ("fixed_plus_power",)

# limsup estimation: z_k = eps0 * 2**-k, k = 1..40, max over the tail k >= 20
_LIMSUP_K = np.arange(1, 41)
_LIMSUP_TAIL = 20


@dataclass(frozen=True)
class CostSpec:
    kind: str = "power"
    c0: float = 1.0
    alpha: float = 0.5
    fixed: float = 0.0
    M: float = 2.0
    eps0: float | None = None
    L0: float | None = None
    table_z: tuple = ()
    table_c: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"cost kind must be one of {KINDS}, got {self.kind!r}")
        if not self.M > 0:
            raise InputError("cost: M must be > 0")
        if self.c0 < 0 or self.fixed < 0:
            raise InputError("cost: c0 and fixed must be >= 0")
        if self.kind in ("power", "fixed_plus_power") and not self.alpha > 0:
            raise InputError("cost: alpha must be > 0")
        if self.kind == "tabulated":
            z = np.asarray(self.table_z, dtype=float)
            c = np.asarray(self.table_c, dtype=float)
            if z.size < 3 or z.shape != c.shape:
                raise InputError("cost: tabulated kind needs matching z and c columns")
            if np.any(np.diff(z) <= 0):
                raise InputError("cost: tabulated z must be strictly increasing")
            if not np.allclose(z, -z[::-1], atol=1e-12):
                raise InputError("cost: tabulated z range must be symmetric")
            if z[-1] < 2 * self.M - 1e-12:
                raise InputError("cost: tabulated z must cover [-2M, 2M]")
        if self.eps0 is not None and not 0 < self.eps0 <= self.M:
            raise InputError("cost: eps0 must lie in (0, M]")

    @property
    def concavity_radius(self) -> float:
        return self.M if self.eps0 is None else float(self.eps0)

    @property
    def zero_limit(self) -> float:
        """One-sided limit c(0+) = c(0-)."""
        return self.fixed if self.kind == "fixed_plus_power" else 0.0

    @property
    def lipschitz_outside(self) -> float:
        """L0: Lipschitz constant of c on [eps0, 2M] and [-2M, -eps0]."""
        if self.L0 is not None:
            return float(self.L0)
        e = self.concavity_radius
        if self.kind in ("power", "fixed_plus_power"):
            # derivative of |z|**alpha is monotone on [eps0, 2M]
            return self.c0 * self.alpha * max(e ** (self.alpha - 1), (2 * self.M) ** (self.alpha - 1))
        if self.kind == "proportional":
            return self.c0
        z = np.linspace(e, 2 * self.M, 4001)
        return float(max(np.max(np.abs(np.diff(self(s * z)) / np.diff(z))) for s in (1.0, -1.0)))

    def __call__(self, z):
        return cost(self, z)

    def to_dict(self) -> dict:
        return asdict(self)


def cost(spec: CostSpec, z):
    """c(z), vectorised. Raises DomainError for |z| > 2M."""
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) > 2 * spec.M * (1 + 1e-12)):
        raise DomainError(f"cost: |z| exceeds 2M = {2 * spec.M}")
    a = np.abs(z)
    if spec.kind == "power":
        out = spec.c0 * a ** spec.alpha
    elif spec.kind == "fixed_plus_power":
        out = np.where(a > 0, spec.fixed + spec.c0 * a ** spec.alpha, 0.0)
    elif spec.kind == "proportional":
        out = spec.c0 * a
    else:
        out = np.interp(z, spec.table_z, spec.table_c)
        out = np.where(z == 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def load_tabulated(path, M: float, **kw) -> CostSpec:
    """Read a ``z,c`` CSV into a tabulated CostSpec."""
    zs, cs = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            zs.append(float(row["z"]))
            cs.append(float(row["c"]))
    return CostSpec(kind="tabulated", M=M, table_z=tuple(zs), table_c=tuple(cs), **kw)


def _side_samples(spec: CostSpec, hmax: float) -> np.ndarray:
    top = 2 * spec.M - hmax
    if top <= 0:
        return np.zeros(1)
    geo = np.geomspace(1e-12, top, 400)
    return np.unique(np.concatenate([[0.0], geo, np.linspace(0.0, top, 2001)]))


def _rho(spec: CostSpec, h: np.ndarray) -> np.ndarray:
    """Sampled modulus sup |c(z+h) - c(z)| over z, z+h on the same side of 0."""
    h = np.atleast_1d(np.asarray(h, dtype=float))
    out = np.zeros_like(h)
    for k, hk in enumerate(h):
        if hk == 0:
            continue
        z = _side_samples(spec, hk)
        best = 0.0
        for sgn in (1.0, -1.0):
            lo = np.where(z == 0, spec.zero_limit, cost(spec, sgn * z))
            hi = cost(spec, sgn * (z + hk))
            best = max(best, float(np.max(np.abs(hi - lo))))
        out[k] = best
    return out


def modulus(spec: CostSpec, h: float, n: int = 1) -> float:
    """rho(h) for n = 1; otherwise sup over convex splittings sum rho(theta_i h).

    The splitting supremum is taken over fractions on a grid of 120*n cells,
    which contains the equal split.
    """
    if h < 0:
        raise DomainError("modulus: h must be >= 0")
    if n < 1:
        raise DomainError("modulus: n must be >= 1")
    if h == 0:
        return 0.0
    if n == 1:
        return float(_rho(spec, [h])[0])
    cells = 120 * n
    r = _rho(spec, h * np.arange(cells + 1) / cells)
    best = r.copy()
    for _ in range(n - 1):
        # best[j] = max_i r[i] + prev[j - i]
        prev = best
        best = np.array([np.max(r[: j + 1] + prev[j::-1]) for j in range(cells + 1)])
    return float(best[-1])


@dataclass
class Envelope:
    z: np.ndarray
    c: np.ndarray
    rounds: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "c_envelope"])
            for z, c in zip(self.z, self.c):
                w.writerow([repr(float(z)), repr(float(c))])


def subadditive_envelope(spec: CostSpec, z_grid, max_splits: int) -> Envelope:
    """Cheapest cost of reaching each grid size by splitting, via repeated min-plus doubling.

    Round k allows up to 2**k pieces; iteration stops at ``max_splits`` or a fixed point.
    """
    z = np.asarray(z_grid, dtype=float)
    if z.ndim != 1 or z.size < 3 or np.any(np.diff(z) <= 0):
        raise InputError("subadditive_envelope: grid must be strictly increasing")
    if not np.allclose(z, -z[::-1], atol=1e-12 * max(1.0, abs(z[-1]))):
        raise InputError("subadditive_envelope: grid must be symmetric about 0")
    if np.max(np.abs(z)) > 2 * spec.M * (1 + 1e-12):
        raise InputError("subadditive_envelope: grid exceeds [-2M, 2M]")

    diff = z[:, None] - z[None, :]  # piece z_j plus remainder z_i - z_j
    idx = np.clip(np.searchsorted(z, diff), 0, z.size - 1)
    idx_lo = np.clip(idx - 1, 0, z.size - 1)
    tol = 1e-9 * max(1.0, abs(z[-1]))
    idx = np.where(np.abs(z[idx_lo] - diff) < np.abs(z[idx] - diff), idx_lo, idx)
    valid = np.abs(z[idx] - diff) <= tol

    env = np.asarray(cost(spec, z), dtype=float)
    rounds = 0
    while rounds < max_splits:
        cand = np.where(valid, env[None, :] + env[idx], np.inf).min(axis=1)
        new = np.minimum(env, cand)
        rounds += 1
        if np.array_equal(new, env):
            break
        env = new
    return Envelope(z, env, rounds)


@dataclass(frozen=True)
class ConcavityConstants:
    eta_32: float
    eta_2: float
    eta_3: float
    gamma: float
    alpha1: float
    beta1: float
    C0: float
    C1: float
    eps1: float
    normalization: str
    diagnostics: tuple = field(default=())

    @property
    def large_jump_bound(self) -> float:
        """C0/C1, meaningful only when C1 > 0."""
        return self.C0 / self.C1 if self.C1 > 0 else math.inf

    @property
    def bound_checkable(self) -> bool:
        return self.C1 > 2 * self.C0

    def to_json(self) -> str:
        d = asdict(self)
        d["diagnostics"] = list(self.diagnostics)
        return json.dumps(d, indent=2, sort_keys=True)


def limsup_ratio(spec: CostSpec, num, den) -> float:
    """Estimate limsup_{z->0} num(z)/den(z) over z = +/- eps0 * 2**-k."""
    zk = spec.concavity_radius * 2.0 ** (-_LIMSUP_K.astype(float))
    vals = []
    for s in (1.0, -1.0):
        r = np.asarray(num(s * zk), dtype=float) / np.asarray(den(s * zk), dtype=float)
        vals.append(np.max(r[_LIMSUP_TAIL - 1:]))
    return float(max(vals))


def eta(spec: CostSpec, theta: float) -> float:
    return limsup_ratio(spec, lambda z: cost(spec, theta * z), lambda z: cost(spec, z))


def gamma_ratio(spec: CostSpec) -> float:
    return limsup_ratio(spec, lambda z: cost(spec, -2 * z) - cost(spec, -z), lambda z: cost(spec, z))


def small_jump_radius(spec: CostSpec, C0: float) -> float:
    """Largest e <= eps0 with c(z) >= C0 |z| on 0 < |z| < e, by bisection on each side.

    c(z)/|z| is nonincreasing near 0 for the concave kinds, so the set is an interval.
    """
    e0 = spec.concavity_radius
    radius = e0
    for s in (1.0, -1.0):
        def ok(z):
            return cost(spec, s * z) >= C0 * z
        if ok(e0):
            continue
        lo, hi = 0.0, e0
        if not ok(1e-300):
            return 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if ok(mid):
                lo = mid
            else:
                hi = mid
        radius = min(radius, lo)
    return radius


def concavity_constants(spec: CostSpec, market, lam: float, Lam: float, T: float,
                        normalization: str = "literal") -> ConcavityConstants:
    """Constants controlling the small-jump structure.

    ``literal`` uses eta_2 = limsup c(2z)/c(z) as written; ``positivized`` divides the
    eta ratios by theta, which makes alpha1, beta1 positive for power costs.
    """
    if not 0 < lam <= Lam:
        raise InputError("concavity_constants: need 0 < lambda <= Lambda")
    if not T > 0:
        raise InputError("concavity_constants: T must be > 0")
    if normalization not in ("literal", "positivized"):
        raise InputError("normalization must be 'literal' or 'positivized'")

    e32, e2, e3 = (eta(spec, th) for th in (1.5, 2.0, 3.0))
    g = gamma_ratio(spec)
    e2_used = e2 / 2.0 if normalization == "positivized" else e2
    alpha1 = (1 - e2_used) / e2_used
    beta1 = (1 - e2_used) / (1 + g)
    C0 = Lam / lam * (market.b_sup * T + market.s_sup * math.sqrt(T) + spec.lipschitz_outside) + 1
    inv = sum(math.inf if v == 0 else 1.0 / v for v in (alpha1, beta1))
    C1 = C0 * (2 + Lam * inv)

    diags = []
    if not C1 > 0:
        diags.append(f"C1 = {C1:.6g} <= 0 under {normalization} normalization")
    if spec.kind in FIXED_KINDS:
        eps1 = spec.concavity_radius
    else:
        eps1 = small_jump_radius(spec, C0)
        if eps1 <= 0:
            diags.append("no positive eps1: c(z) < C0|z| arbitrarily close to 0")
    return ConcavityConstants(e32, e2, e3, g, alpha1, beta1, C0, C1, eps1, normalization, tuple(diags))


def checkable_constants(spec, market, lam, Lam, T) -> ConcavityConstants:
    """Literal constants if they give C1 > 2 C0, otherwise the positivized ones."""
    lit = concavity_constants(spec, market, lam, Lam, T, "literal")
    if lit.bound_checkable:
        return lit
    return concavity_constants(spec, market, lam, Lam, T, "positivized")


@dataclass
class AssumptionReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e["pass"] for e in self.entries)

    def clause(self, name: str) -> dict:
        for e in self.entries:
            if e["clause"] == name:
                return e
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps(self.entries, indent=2)


def _entry(clause, ok, witness=None):
    return {"clause": clause, "pass": bool(ok), "witness": witness}


def check_assumptions(spec: CostSpec, z_samples: int = 400) -> AssumptionReport:
    """Sampled audit of positivity, monotonicity, subadditivity, local concavity,
    the outer Lipschitz bound and the eta/gamma limits."""
    if z_samples < 100:
        raise InputError("check_assumptions: need at least 100 samples")
    M2 = 2 * spec.M
    e0 = spec.concavity_radius
    zpos = np.linspace(M2 / z_samples, M2, z_samples)
    z = np.concatenate([-zpos[::-1], zpos])
    c = np.asarray(cost(spec, z))
    out = []

    bad = np.flatnonzero(c <= 0)
    out.append(_entry("positivity", bad.size == 0 and cost(spec, 0.0) == 0.0,
                      None if bad.size == 0 else {"z": float(z[bad[0]]), "c": float(c[bad[0]])}))

    cp = np.asarray(cost(spec, zpos))
    cn = np.asarray(cost(spec, -zpos))
    drop = np.concatenate([np.diff(cp), np.diff(cn)])
    k = int(np.argmin(drop))
    out.append(_entry("monotone_in_abs_z", drop[k] >= -1e-12,
                      None if drop[k] >= -1e-12 else {"z": float(np.r_[zpos[1:], -zpos[1:]][k]), "drop": float(drop[k])}))

    zs = np.linspace(-M2, M2, 201)
    z1, z2 = np.meshgrid(zs, zs, indexing="ij")
    ok_dom = np.abs(z1 + z2) <= M2 + 1e-12
    s1 = np.where(ok_dom, z1 + z2, 0.0)
    gap = np.where(ok_dom, cost(spec, s1) - cost(spec, z1) - cost(spec, z2), -np.inf)
    k = np.unravel_index(np.argmax(gap), gap.shape)
    worst = float(gap[k])
    out.append(_entry("subadditivity", worst <= 1e-12,
                      None if worst <= 1e-12 else {"z1": float(z1[k]), "z2": float(z2[k]), "excess": worst}))

    for name, sgn in (("concavity_pos", 1.0), ("concavity_neg", -1.0)):
        zz = sgn * np.linspace(2 * e0 / z_samples, 2 * e0, z_samples)
        cc = np.asarray(cost(spec, zz))
        d2 = cc[2:] - 2 * cc[1:-1] + cc[:-2]
        scale = 1e-12 * max(1.0, float(np.max(np.abs(cc))))
        k = int(np.argmax(d2))
        out.append(_entry(name, d2[k] <= scale,
                          None if d2[k] <= scale else {"z": float(zz[k + 1]), "second_difference": float(d2[k])}))

    L0 = spec.lipschitz_outside
    zo = np.linspace(e0, M2, z_samples)
    slopes = np.concatenate([np.diff(cost(spec, zo)) / np.diff(zo), np.diff(cost(spec, -zo)) / np.diff(zo)])
    k = int(np.argmax(np.abs(slopes)))
    out.append(_entry("lipschitz_outside", abs(slopes[k]) <= L0 + 1e-9,
                      {"L0": L0, "max_slope": float(abs(slopes[k]))}))

    for th in (1.5, 2.0, 3.0):
        e = eta(spec, th)
        out.append(_entry(f"eta_{th:g}_below_theta", e < th - 1e-9, {"eta": e, "theta": th}))
    g = gamma_ratio(spec)
    out.append(_entry("gamma_finite", math.isfinite(g), {"gamma": g}))
    return AssumptionReport(out)
