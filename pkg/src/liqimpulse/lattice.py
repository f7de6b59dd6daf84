"""State lattice (t, x, y, z), value/policy tensors, interpolation and persistence.

Interpolation rules:

* time is never interpolated, queries must hit a grid time;
* x is multilinear with clamping at the box edges;
* y is multilinear; outside the box the value is extended affinely with the
  configured edge slopes (``None`` means: continue the boundary chord);
* z is piecewise linear only between nodes of the same sign. A query strictly
  between 0 and the nearest nonzero node takes that node's value, so the
  stored z = 0 column is never averaged with its neighbours.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptionError, GridMismatchError, InputError

MAGIC_SURFACE = b"LQVS"
MAGIC_POLICY = b"LQVP"
FORMAT_VERSION = 1
_NODE_TOL = 1e-12


def _uniform(lo, hi, n):
    if n < 2 or not hi > lo:
        raise InputError("grid axis needs n >= 2 and hi > lo")
    return np.linspace(lo, hi, n)


@dataclass(eq=False)
class GridSpec:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.t, self.x, self.y, self.z = (np.asarray(a, dtype=float) for a in (self.t, self.x, self.y, self.z))
        for name in ("t", "x", "y", "z"):
            a = getattr(self, name)
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise InputError(f"grid axis {name} must be strictly increasing with >= 2 nodes")
        if not np.allclose(self.z, -self.z[::-1], atol=_NODE_TOL):
            raise InputError("z nodes must be symmetric about 0")
        if not np.any(self.z == 0.0):
            raise InputError("z nodes must contain 0")

    @classmethod
    def build(cls, T, n_steps, x_range, n_x, y_range, n_y, M, n_z, extra_z=()):
        z = np.linspace(-M, M, n_z)
        z[np.abs(z) < _NODE_TOL * M] = 0.0
        extra = [abs(float(e)) for e in extra_z if 0 < abs(e) < M]
        z = np.concatenate([z, extra, [-e for e in extra], [0.0]])
        z = np.unique(z)
        z = z[np.concatenate([[True], np.diff(z) > _NODE_TOL * M])]
        return cls(_uniform(0.0, T, n_steps + 1), _uniform(*x_range, n_x), _uniform(*y_range, n_y), z)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def M(self) -> float:
        return float(self.z[-1])

    @property
    def shape(self):
        return (self.t.size, self.x.size, self.y.size, self.z.size)

    @property
    def zero_index(self) -> int:
        return int(np.flatnonzero(self.z == 0.0)[0])

    def z_index(self, z: float) -> int:
        k = int(np.argmin(np.abs(self.z - z)))
        if abs(self.z[k] - z) > _NODE_TOL * max(1.0, self.M):
            raise InputError(f"z = {z} is not a lattice node")
        return k

    def t_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-9 * max(1.0, self.T):
            raise InputError(f"t = {t} is not a grid time; time is never interpolated")
        return k

    def same_as(self, other: "GridSpec") -> bool:
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in ("t", "x", "y", "z"))

    def require_same(self, other: "GridSpec") -> None:
        if not self.same_as(other):
            raise GridMismatchError("lattices differ")

    def to_dict(self) -> dict:
        return {a: getattr(self, a).tolist() for a in ("t", "x", "y", "z")}

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(d["t"], d["x"], d["y"], d["z"])


def problem_grid(market, cost_spec, T, n_steps, x0, y0, n_x, n_y, n_z, eps1=None):
    """Truncated lattice: x within 6 sd of x0 (plus the drift excursion),
    y wide enough to absorb M times the x range plus the largest cost."""
    hx = 6.0 * market.s_sup * np.sqrt(T) + market.b_sup * T
    if hx <= 0:
        hx = 1.0
    x_lo, x_hi = x0 - hx, x0 + hx
    c_max = float(cost_spec(2 * cost_spec.M))
    hy = cost_spec.M * (x_hi - x_lo) + c_max
    extra = (eps1,) if eps1 else ()
    return GridSpec.build(T, n_steps, (x_lo, x_hi), n_x, (y0 - hy, y0 + hy), n_y, cost_spec.M, n_z, extra)


def nearest_index(nodes, q) -> np.ndarray:
    """Index of the nearest node (clamped to the axis)."""
    nodes = np.asarray(nodes, dtype=float)
    q = np.asarray(q, dtype=float)
    i = np.clip(np.searchsorted(nodes, q), 1, nodes.size - 1)
    return np.where(np.abs(q - nodes[i - 1]) <= np.abs(nodes[i] - q), i - 1, i)


@dataclass
class Stencil:
    """Two-point linear stencil: value = w_lo*v[i0] + w_hi*v[i0+1] + offset."""
    i0: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray
    offset: np.ndarray
    outside: np.ndarray  # bool mask of out-of-box queries

    def apply(self, v_lo, v_hi):
        return self.w_lo * v_lo + self.w_hi * v_hi + self.offset


def y_stencil(nodes, q, slopes=(None, None)) -> Stencil:
    """Linear stencil along y with affine extension outside the box."""
    nodes = np.asarray(nodes, dtype=float)
    q = np.asarray(q, dtype=float)
    n = nodes.size
    i0 = np.clip(np.searchsorted(nodes, q, side="right") - 1, 0, n - 2)
    w = (q - nodes[i0]) / (nodes[i0 + 1] - nodes[i0])
    w_lo, w_hi = 1.0 - w, w
    offset = np.zeros_like(q)
    below, above = q < nodes[0], q > nodes[-1]
    s_lo, s_hi = slopes
    if s_lo is not None:
        w_lo = np.where(below, 1.0, w_lo)
        w_hi = np.where(below, 0.0, w_hi)
        offset = np.where(below, -s_lo * (nodes[0] - q), offset)
    if s_hi is not None:
        w_lo = np.where(above, 0.0, w_lo)
        w_hi = np.where(above, 1.0, w_hi)
        offset = np.where(above, s_hi * (q - nodes[-1]), offset)
    return Stencil(i0, w_lo, w_hi, offset, below | above)


def x_stencil(nodes, q) -> Stencil:
    """Linear stencil along x with clamping at the box edges."""
    nodes = np.asarray(nodes, dtype=float)
    q = np.asarray(q, dtype=float)
    qc = np.clip(q, nodes[0], nodes[-1])
    i0 = np.clip(np.searchsorted(nodes, qc, side="right") - 1, 0, nodes.size - 2)
    w = (qc - nodes[i0]) / (nodes[i0 + 1] - nodes[i0])
    return Stencil(i0, 1.0 - w, w, np.zeros_like(q), (q < nodes[0]) | (q > nodes[-1]))


@dataclass(eq=False)
class ValueSurface:
    grid: GridSpec
    n_jumps: int
    values: np.ndarray
    y_slopes: tuple = (None, None)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    def to_csv(self, path, times=None) -> None:
        g = self.grid
        ts = range(g.t.size) if times is None else [g.t_index(t) for t in times]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "z", "value"])
            for k in ts:
                for a, xv in enumerate(g.x):
                    for j, yv in enumerate(g.y):
                        for i, zv in enumerate(g.z):
                            w.writerow([repr(float(g.t[k])), repr(float(xv)), repr(float(yv)),
                                        repr(float(zv)), repr(float(self.values[k, a, j, i]))])


@dataclass(eq=False)
class PolicyField:
    grid: GridSpec
    exercise: np.ndarray
    target: np.ndarray
    n_jumps: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exercise = np.asarray(self.exercise, dtype=bool)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.exercise.shape != self.grid.shape or self.target.shape != self.grid.shape:
            raise GridMismatchError("policy tensors do not match the grid")

    @property
    def target_index(self) -> np.ndarray:
        return np.searchsorted(self.grid.z, self.target)


class ClampCounter(dict):
    def add(self, key, n) -> None:
        self[key] = self.get(key, 0) + int(n)


def _z_bracket(zn, z):
    """Same-sign z bracket: returns (i_lo, i_hi, weight_hi)."""
    k = int(np.argmin(np.abs(zn - z)))
    if abs(zn[k] - z) <= _NODE_TOL * max(1.0, abs(zn[-1])):
        return k, k, 0.0
    if abs(z) > zn[-1] * (1 + 1e-12):
        raise InputError(f"|z| = {abs(z)} exceeds M")
    i_hi = int(np.searchsorted(zn, z))
    i_lo = i_hi - 1
    if zn[i_lo] < 0 < zn[i_hi] or zn[i_lo] == 0.0 or zn[i_hi] == 0.0:
        # bracket touches 0: take the nonzero node of the query's sign
        k = i_hi if z > 0 else i_lo
        return k, k, 0.0
    w = (z - zn[i_lo]) / (zn[i_hi] - zn[i_lo])
    return i_lo, i_hi, w


def interpolate(surface: ValueSurface, t, x, y, z, counter: ClampCounter | None = None) -> float:
    g = surface.grid
    if not all(np.isfinite(v) for v in (t, x, y, z)):
        raise InputError("interpolate: non-finite query")
    k = g.t_index(t)
    xs = x_stencil(g.x, np.array([x]))
    ys = y_stencil(g.y, np.array([y]), surface.y_slopes)
    if counter is not None:
        counter.add("x", xs.outside.sum())
        counter.add("y", ys.outside.sum())
    i_lo, i_hi, wz = _z_bracket(g.z, z)
    a, j = int(xs.i0[0]), int(ys.i0[0])

    def at(i):
        col = surface.values[k, :, :, i]
        v_lo = ys.apply(col[a, j], col[a, j + 1])[0]
        v_hi = ys.apply(col[a + 1, j], col[a + 1, j + 1])[0]
        return xs.w_lo[0] * v_lo + xs.w_hi[0] * v_hi

    v = at(i_lo)
    if i_hi != i_lo:
        v = (1 - wz) * v + wz * at(i_hi)
    return float(v)


# ---------------------------------------------------------------- persistence

def _payload(obj) -> bytes:
    if isinstance(obj, ValueSurface):
        return np.ascontiguousarray(obj.values, dtype="<f8").tobytes()
    return (np.ascontiguousarray(obj.exercise, dtype=np.uint8).tobytes()
            + np.ascontiguousarray(obj.target, dtype="<f8").tobytes())


def _digest(grid_json: str, payload: bytes) -> str:
    h = hashlib.sha256(grid_json.encode())
    h.update(payload)
    return h.hexdigest()


def save(obj, path) -> str:
    """Write a surface or policy; returns the content hash."""
    is_surface = isinstance(obj, ValueSurface)
    payload = _payload(obj)
    grid_json = json.dumps(obj.grid.to_dict(), sort_keys=True)
    digest = _digest(grid_json, payload)
    header = {
        "kind": "surface" if is_surface else "policy",
        "dims": list(obj.grid.shape),
        "n_jumps": int(obj.n_jumps),
        "grid": obj.grid.to_dict(),
        "hash": digest,
        "payload_bytes": len(payload),
        "provenance": obj.provenance,
    }
    if is_surface:
        header["y_slopes"] = list(obj.y_slopes)
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC_SURFACE if is_surface else MAGIC_POLICY)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
    return digest


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] not in (MAGIC_SURFACE, MAGIC_POLICY):
        raise CorruptionError(f"{path}: bad magic or truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CorruptionError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header") from exc
    payload = raw[12 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CorruptionError(f"{path}: payload length {len(payload)} != {header['payload_bytes']}")
    grid_json = json.dumps(header["grid"], sort_keys=True)
    if _digest(grid_json, payload) != header["hash"]:
        raise CorruptionError(f"{path}: content hash mismatch")
    grid = GridSpec.from_dict(header["grid"])
    shape = tuple(header["dims"])
    if raw[:4] == MAGIC_SURFACE:
        values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        return ValueSurface(grid, header["n_jumps"], values, tuple(header["y_slopes"]), header["provenance"])
    n = int(np.prod(shape))
    exercise = np.frombuffer(payload[:n], dtype=np.uint8).reshape(shape).astype(bool)
    target = np.frombuffer(payload[n:], dtype="<f8").reshape(shape).copy()
    return PolicyField(grid, exercise, target, header["n_jumps"], header["provenance"])
