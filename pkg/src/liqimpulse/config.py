"""Run configuration: one INI file fixes a whole run.

Sections mirror the model pieces: [market] [cost] [utility] [grid] [solver]
[simulation] [output]. Every key has a default (see ``DEFAULT_INI``), so an
empty file is the default desk-scale run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field, replace

from .costs import CostSpec, load_tabulated
from .errors import ConfigError, LiqImpulseError
from .market import MarketModel
from .payoff import UtilitySpec
from .solver import TIE_KEYS

DEFAULT_INI = """\
[market]
# constant | affine ; affine takes "intercept, slope" and needs a cap
drift_kind = constant
drift_params = 0.05
drift_cap =
vol_kind = constant
vol_params = 0.2
vol_cap =

[cost]
# power | fixed_plus_power | proportional | tabulated
kind = power
c0 = 0.1
alpha = 0.5
fixed = 0.0
M = 2.0
# concavity radius and outer Lipschitz constant (blank: derived)
eps0 =
L0 =
# CSV with columns z,c when kind = tabulated
table_file =

[utility]
# bounded_slope | cara
kind = bounded_slope
lam = 0.5
Lam = 1.5
risk_aversion = 1.0

[grid]
T = 1.0
n_steps = 50
n_x = 41
n_y = 41
n_z = 21
x0 = 1.0
y0 = 0.0

[solver]
n_max = 8
stop_tol = 1e-4
# true: compute every layer up to n_max even after the increments fall below stop_tol
full_depth = false
exercise_tol = 1e-8
n_quad = 7
# equal-value targets: preference order (smaller z breaks any remaining tie)
tie_break = stay, to_zero, nearest
# literal | positivized | auto (literal when its C1 > 2 C0)
normalization = auto

[simulation]
n_paths = 20000
seed = 12345
z0 = 1.0

[output]
dir = out
"""

_FLOAT = float
_SECTIONS = ("market", "cost", "utility", "grid", "solver", "simulation", "output")


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _opt_float(s):
    return None if s is None or not str(s).strip() else float(s)


@dataclass(frozen=True)
class RunConfig:
    market: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    utility: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    # ------------------------------------------------------------ builders
    def market_model(self) -> MarketModel:
        m = self.market
        return _build(lambda: MarketModel(m["drift_kind"], _floats(m["drift_params"]), m["vol_kind"],
                                          _floats(m["vol_params"]), _opt_float(m["drift_cap"]),
                                          _opt_float(m["vol_cap"])), "market")

    def cost_spec(self) -> CostSpec:
        c = self.cost
        kw = dict(eps0=_opt_float(c["eps0"]), L0=_opt_float(c["L0"]))
        if c["kind"] == "tabulated":
            if not c["table_file"].strip():
                raise ConfigError("cost.table_file: required when kind = tabulated")
            return _build(lambda: load_tabulated(c["table_file"].strip(), float(c["M"]), **kw), "cost")
        return _build(lambda: CostSpec(c["kind"], c0=float(c["c0"]), alpha=float(c["alpha"]),
                                       fixed=float(c["fixed"]), M=float(c["M"]), **kw), "cost")

    def utility_spec(self) -> UtilitySpec:
        u = self.utility
        return _build(lambda: UtilitySpec(u["kind"], float(u["lam"]), float(u["Lam"]),
                                          float(u["risk_aversion"])), "utility")

    def g(self, key):
        return _num(self.grid, "grid", key)

    def s(self, key):
        return _num(self.solver, "solver", key)

    @property
    def seed(self) -> int:
        return int(_num(self.simulation, "simulation", "seed"))

    @property
    def n_paths(self) -> int:
        return int(_num(self.simulation, "simulation", "n_paths"))

    @property
    def out_dir(self) -> str:
        return self.output["dir"]

    def full_depth(self) -> bool:
        v = self.solver["full_depth"].strip().lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"solver.full_depth: expected true/false, got {v!r}")
        return v in ("true", "1", "yes")

    def tie_break(self) -> tuple:
        return tuple(v.strip() for v in self.solver["tie_break"].split(","))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, simulation={**self.simulation, "seed": str(int(seed))})

    def with_out(self, path) -> "RunConfig":
        return replace(self, output={**self.output, "dir": str(path)})

    def validate(self) -> None:
        """Build every spec once so a bad field is reported by name before any work."""
        self.market_model()
        self.cost_spec()
        u = self.utility_spec()
        for key in ("T", "x0", "y0"):
            self.g(key)
        for key in ("n_steps", "n_x", "n_y", "n_z"):
            if int(self.g(key)) < 2:
                raise ConfigError(f"grid.{key}: must be >= 2")
        for key in ("n_max", "stop_tol", "exercise_tol", "n_quad"):
            self.s(key)
        self.full_depth()
        if sorted(self.tie_break()) != sorted(TIE_KEYS):
            raise ConfigError(f"solver.tie_break: must be an ordering of {', '.join(TIE_KEYS)}")
        if self.solver["normalization"] not in ("literal", "positivized", "auto"):
            raise ConfigError("solver.normalization: must be literal, positivized or auto")
        if self.n_paths < 1:
            raise ConfigError("simulation.n_paths: must be >= 1")
        _num(self.simulation, "simulation", "z0")
        if u.kind == "cara" and not self.market_model().is_constant:
            raise ConfigError("utility.kind: cara requires constant market coefficients")

    # ------------------------------------------------------------ round trip
    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec in _SECTIONS:
            cp[sec] = dict(getattr(self, sec))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {sec: dict(sorted(getattr(self, sec).items())) for sec in _SECTIONS}

    @property
    def config_hash(self) -> str:
        """sha256 of everything that determines the numbers (the output directory is excluded)."""
        d = self.to_dict()
        d.pop("output")
        c = self.cost
        if c.get("kind") == "tabulated" and c.get("table_file", "").strip():
            spec = self.cost_spec()
            d["cost_table"] = [list(spec.table_z), list(spec.table_c)]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _num(section: dict, name: str, key: str) -> float:
    try:
        return _FLOAT(section[key])
    except KeyError:
        raise ConfigError(f"{name}.{key}: missing") from None
    except ValueError:
        raise ConfigError(f"{name}.{key}: not a number: {section[key]!r}") from None


def _build(fn, section):
    try:
        return fn()
    except ConfigError:
        raise
    except (LiqImpulseError, ValueError, KeyError, TypeError, OSError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_ini(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(DEFAULT_INI)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from exc
    unknown = [s for s in cp.sections() if s not in _SECTIONS]
    if unknown:
        raise ConfigError(f"config: unknown section(s) {unknown}")
    defaults = configparser.ConfigParser(interpolation=None)
    defaults.optionxform = str
    defaults.read_string(DEFAULT_INI)
    for sec in _SECTIONS:
        extra = set(cp[sec]) - set(defaults[sec])
        if extra:
            raise ConfigError(f"{sec}.{sorted(extra)[0]}: unknown key")
    return RunConfig(**{sec: {k: v.strip() for k, v in cp[sec].items()} for sec in _SECTIONS})


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_ini("")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    return parse_ini(text)


def default_config() -> RunConfig:
    return parse_ini("")
