"""Terminal payoffs U.

``bounded_slope``: U(y) = Lam*y - (Lam - lam)*softplus(y), concave with slope in (lam, Lam).
``cara``: U(y) = -exp(-a*y); concave and increasing but its slope is not bounded
below, so it is only meant for the CARA reduced problem and its cross-check.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class UtilitySpec:
    kind: str = "bounded_slope"
    lam: float = 0.5
    Lam: float = 1.5
    risk_aversion: float = 1.0

    def __post_init__(self):
        if self.kind == "bounded_slope":
            if not 0 < self.lam <= self.Lam:
                raise InputError("utility: need 0 < lambda <= Lambda")
        elif self.kind == "cara":
            if not self.risk_aversion > 0:
                raise InputError("utility: risk_aversion must be > 0")
        else:
            raise InputError(f"utility: unknown kind {self.kind!r}")

    @property
    def slope_bounds(self):
        """(lower, upper) slope bounds, or None when U' is unbounded."""
        if self.kind == "bounded_slope":
            return self.lam, self.Lam
        return None

    def __call__(self, y):
        return value(self, y)

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(y):
    return np.exp(-np.logaddexp(0.0, -y))


def value(u: UtilitySpec, y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InputError("utility: non-finite wealth")
    if u.kind == "bounded_slope":
        out = u.Lam * y - (u.Lam - u.lam) * np.logaddexp(0.0, y)
    else:
        out = -np.exp(-u.risk_aversion * y)
    return float(out) if out.ndim == 0 else out


def slope(u: UtilitySpec, y):
    y = np.asarray(y, dtype=float)
    if u.kind == "bounded_slope":
        out = u.Lam - (u.Lam - u.lam) * _sigmoid(y)
    else:
        out = u.risk_aversion * np.exp(-u.risk_aversion * y)
    return float(out) if out.ndim == 0 else out


@dataclass
class H2Report:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e["pass"] for e in self.entries)

    def clause(self, name):
        return next(e for e in self.entries if e["clause"] == name)

    def to_json(self) -> str:
        return json.dumps(self.entries, indent=2)


def check_h2(u: UtilitySpec, y_samples: int = 401, y_range=(-20.0, 20.0)) -> H2Report:
    """Finite-difference audit of monotonicity, concavity and the slope sandwich."""
    lo, hi = y_range
    if y_samples < 100 or lo > -20 or hi < 20:
        raise InputError("check_h2: need >= 100 samples spanning at least [-20, 20]")
    y = np.linspace(lo, hi, y_samples)
    v = value(u, y)
    s = np.diff(v) / np.diff(y)
    d2 = v[2:] - 2 * v[1:-1] + v[:-2]
    lam, Lam = u.slope_bounds or (0.0, np.inf)
    out = []
    k = int(np.argmin(s))
    out.append({"clause": "increasing", "pass": bool(s[k] > 0), "witness": {"y": float(y[k]), "slope": float(s[k])}})
    k = int(np.argmax(d2))
    out.append({"clause": "concave", "pass": bool(d2[k] <= 1e-9),
                "witness": {"y": float(y[k + 1]), "second_difference": float(d2[k])}})
    k = int(np.argmin(s))
    out.append({"clause": "lower_slope_bound", "pass": bool(lam > 0 and s[k] >= lam - 1e-9),
                "witness": {"y": float(y[k]), "slope": float(s[k]), "lambda": lam}})
    k = int(np.argmax(s))
    out.append({"clause": "upper_slope_bound", "pass": bool(s[k] <= Lam + 1e-9),
                "witness": {"y": float(y[k]), "slope": float(s[k]), "Lambda": float(Lam)}})
    return H2Report(out)
