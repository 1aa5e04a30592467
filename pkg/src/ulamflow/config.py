"""Experiment configuration read from an INI file.

Example::

    [model]
    kind = periodic_dwp            ; quasi_periodic_dwp | gridded
    gamma = 0.1                    ; quasi-periodic amplitude
    path = winds.txt               ; gridded data, relative to the config file

    [domain]
    lo = -pi, -pi
    hi = pi, pi
    bins = 64, 64
    periodic = false, false
    seed_axis = 1                  ; optional growing-domain seeding
    seed_below = -60

    [time]
    t_i = 0
    t_F = 500
    tau = 1
    h = 0.1                        ; optional, defaults to tau / 10

    [ulam]
    Q = 100
    scheme = lattice               ; or rng
    seed = 0

    [windows]
    n = 50
    N = 4

    [tracking]
    method = values                ; or vectors

    [output]
    dir = out                      ; relative to the config file
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

MODELS = {
    "periodic_dwp": "periodic_double_well",
    "quasi_periodic_dwp": "quasi_periodic_double_well",
    "gridded": "gridded",
}
METHODS = ("values", "vectors")


class ConfigError(ValueError):
    """The configuration is incomplete or violates an invariant."""


def _floats(text, n=None, name="value"):
    out = []
    for tok in text.replace(",", " ").split():
        tok = tok.strip().lower()
        sign = -1.0 if tok.startswith("-") else 1.0
        body = tok.lstrip("+-")
        try:
            val = math.pi if body == "pi" else float(body)
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {tok!r} as a number") from None
        out.append(sign * val)
    if n is not None and len(out) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(out)}")
    return tuple(out)


def _bools(text, n, name):
    vals = []
    for tok in text.replace(",", " ").split():
        low = tok.lower()
        if low in ("1", "true", "yes", "on"):
            vals.append(True)
        elif low in ("0", "false", "no", "off"):
            vals.append(False)
        else:
            raise ConfigError(f"{name}: cannot parse {tok!r} as a boolean")
    if len(vals) != n:
        raise ConfigError(f"{name}: expected {n} values, got {len(vals)}")
    return tuple(vals)


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    lo: tuple
    hi: tuple
    bins: tuple
    t_i: float
    t_F: float
    tau: float
    n: int
    N: int
    Q: int = 100
    h: float | None = None
    gamma: float = 0.0
    data_path: Path | None = None
    periodic: tuple = ()
    method: str = "values"
    output: Path = Path("out")
    seed: int = 0
    scheme: str = "lattice"
    seed_axis: int | None = None
    seed_below: float | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        if self.model == "gridded" and self.data_path is None:
            raise ConfigError("gridded model needs [model] path")
        dim = len(self.bins)
        if len(self.lo) != dim or len(self.hi) != dim:
            raise ConfigError("domain bounds and bins must have the same length")
        if any(b < 1 for b in self.bins):
            raise ConfigError("bins must be positive")
        if any(not a < b for a, b in zip(self.lo, self.hi)):
            raise ConfigError("need lo < hi on every axis")
        if not self.t_i < self.t_F:
            raise ConfigError("need t_i < t_F")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        steps = (self.t_F - self.t_i) / self.tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("t_F - t_i must be a whole number of tau steps")
        if not 1 <= self.n <= round(steps):
            raise ConfigError(f"window length n={self.n} must lie in [1, {round(steps)}]")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.Q < 1:
            raise ConfigError("Q must be at least 1")
        if self.N > math.prod(self.bins):
            raise ConfigError("N cannot exceed the number of bins")
        if self.h is not None:
            ratio = self.tau / self.h
            if not (0 < self.h <= self.tau) or abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ConfigError("h must divide tau")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.scheme not in ("lattice", "rng"):
            raise ConfigError("scheme must be lattice or rng")
        if self.scheme == "lattice":
            side = round(self.Q ** (1.0 / dim))
            if side ** dim != self.Q:
                raise ConfigError(f"lattice seeding needs Q to be a perfect {dim}-th power")
        if (self.seed_axis is None) != (self.seed_below is None):
            raise ConfigError("seed_axis and seed_below must be given together")
        if self.seed_axis is not None and not 0 <= self.seed_axis < dim:
            raise ConfigError("seed_axis out of range")

    @property
    def steps(self) -> int:
        return int(round((self.t_F - self.t_i) / self.tau))

    @property
    def n_windows(self) -> int:
        return self.steps - self.n + 1

    @property
    def growing(self) -> bool:
        return self.seed_axis is not None

    def canonical(self) -> str:
        """Stable text form used for the provenance hash."""
        items = []
        for name in self.__dataclass_fields__:
            if name == "output":
                continue
            val = getattr(self, name)
            if name == "data_path" and val is not None:
                val = hashlib.sha256(Path(val).read_bytes()).hexdigest() if Path(val).exists() else str(val)
            items.append(f"{name}={val!r}")
        return "\n".join(items)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def make_field(self):
        from .fields import AnalyticField, read_gridded

        if self.model == "gridded":
            return read_gridded(self.data_path)
        return AnalyticField(MODELS[self.model], self.gamma)

    def make_flow(self, field=None):
        from .integrate import FlowSpec

        return FlowSpec(self.tau, self.make_field() if field is None else field, self.h)

    def make_partition(self):
        from .ulam import BinPartition

        return BinPartition.grid(self.lo, self.hi, self.bins, self.periodic)

    def seed_rows(self):
        """Seeded bin ids in growing-domain mode, else ``None``."""
        if not self.growing:
            return None
        return self.make_partition().seeded_below(self.seed_axis, self.seed_below).active_rows

    def check_field_range(self, field):
        """Raise :class:`ConfigError` if gridded data do not cover ``[t_i, t_F]``."""
        if self.model != "gridded":
            return
        eps = 1e-9 * max(1.0, abs(self.t_F))
        if self.t_i < field.t0 - eps or self.t_F > field.t_last + eps:
            raise ConfigError(
                f"time range [{self.t_i}, {self.t_F}] exceeds the gridded data "
                f"[{field.t0}, {field.t_last}]")
        lat_lo, lat_hi = field.lat_limits()
        if self.lo[1] < lat_lo or self.hi[1] > lat_hi:
            raise ConfigError(f"latitude bounds exceed the usable data range [{lat_lo}, {lat_hi}]")


def load_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # n and N are different keys
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = path.parent

    def get(section, key, default=None, required=False):
        if cp.has_option(section, key):
            return cp.get(section, key).strip()
        if required:
            raise ConfigError(f"missing [{section}] {key}")
        return default

    def num(section, key, cast, default=None, required=False):
        raw = get(section, key, None, required)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: bad value {raw!r}") from None

    bins = tuple(int(b) for b in _floats(get("domain", "bins", required=True), name="bins"))
    dim = len(bins)
    periodic_raw = get("domain", "periodic")
    periodic = _bools(periodic_raw, dim, "periodic") if periodic_raw else (False,) * dim
    data = get("model", "path")
    out = Path(get("output", "dir", "out"))
    return ExperimentConfig(
        model=get("model", "kind", required=True),
        gamma=num("model", "gamma", float, 0.0),
        data_path=(base / data) if data else None,
        lo=_floats(get("domain", "lo", required=True), dim, "lo"),
        hi=_floats(get("domain", "hi", required=True), dim, "hi"),
        bins=bins,
        periodic=periodic,
        seed_axis=num("domain", "seed_axis", int),
        seed_below=num("domain", "seed_below", float),
        t_i=num("time", "t_i", float, required=True),
        t_F=num("time", "t_F", float, required=True),
        tau=num("time", "tau", float, 1.0),
        h=num("time", "h", float),
        Q=num("ulam", "Q", int, 100),
        scheme=get("ulam", "scheme", "lattice"),
        seed=num("ulam", "seed", int, 0),
        n=num("windows", "n", int, required=True),
        N=num("windows", "N", int, required=True),
        method=get("tracking", "method", "values"),
        output=out if out.is_absolute() else base / out,
    )


def window_index(cfg: ExperimentConfig, k: int) -> float:
    """Start time of window ``k``."""
    return cfg.t_i + k * cfg.tau

