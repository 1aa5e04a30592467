"""Time-dependent velocity fields.

Two analytic double-well models (periodic and quasi-periodic forcing) and a
gridded wind field on a longitude/latitude grid with linear space-time
interpolation. Every field is a callable ``field(t, points)`` taking a scalar
time and an ``(P, d)`` array of state points and returning velocities of the
same shape. Fields that can leave their data range also expose
``velocity(t, points) -> (vel, ok)`` where ``ok`` flags valid rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

PERIOD = 100.0
# m/s over metres gives rad/s; convert to degrees per hour
_RAD_PER_S_TO_DEG_PER_H = 3600.0 * 180.0 / np.pi


class OutOfRange(ValueError):
    """Query outside the time or latitude range of a gridded field."""


def alpha(t):
    """Periodic well-separation forcing, period 100.

    Piecewise: 1 on [0, 10], a cos^2 descent to 0 on [10, 40], 0 on [40, 60],
    a cos^2 ascent back to 1 on [60, 90], and 1 on [90, 100].

    Parameters
    ----------
    t : float or array_like
        Time(s).

    Returns
    -------
    float or ndarray
    """
    s = np.mod(np.asarray(t, dtype=float), PERIOD)
    out = np.ones_like(s)
    down = (s > 10.0) & (s < 40.0)
    out = np.where(down, np.cos((s - 10.0) * np.pi / 60.0) ** 2, out)
    out = np.where((s >= 40.0) & (s <= 60.0), 0.0, out)
    up = (s > 60.0) & (s < 90.0)
    out = np.where(up, np.cos((s - 30.0) * np.pi / 60.0) ** 2, out)
    if out.ndim == 0:
        return float(out)
    return out


def alpha_tilde(t, gamma):
    """Quasi-periodic forcing ``alpha(t) + gamma * cos(10 t)**2``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    extra = gamma * np.cos(10.0 * np.asarray(t, dtype=float)) ** 2
    out = alpha(t) + extra
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class AnalyticField:
    """Forced double well ``x' = y``, ``y' = x (x/2 + a)(a - x/2)``.

    ``kind`` selects the forcing ``a``: ``"periodic_double_well"`` uses
    :func:`alpha`, ``"quasi_periodic_double_well"`` uses :func:`alpha_tilde`
    with amplitude ``gamma``.
    """

    kind: str = "periodic_double_well"
    gamma: float = 0.0

    KINDS = ("periodic_double_well", "quasi_periodic_double_well")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown analytic field kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.kind == "periodic_double_well" and self.gamma != 0:
            raise ValueError("gamma only applies to the quasi-periodic model")

    @property
    def dim(self) -> int:
        return 2

    def forcing(self, t):
        if self.kind == "periodic_double_well":
            return alpha(t)
        return alpha_tilde(t, self.gamma)

    def __call__(self, t, points):
        pts = np.asarray(points, dtype=float)
        a = self.forcing(t)
        x = pts[..., 0]
        y = pts[..., 1]
        out = np.empty_like(pts)
        out[..., 0] = y
        out[..., 1] = x * (x / 2.0 + a) * (a - x / 2.0)
        return out

    def velocity(self, t, points):
        vel = self(t, points)
        return vel, np.ones(vel.shape[:-1], dtype=bool)


@dataclass(frozen=True)
class ConstantField:
    """Spatially uniform, time-independent velocity (test hook)."""

    value: tuple

    @property
    def dim(self) -> int:
        return len(self.value)

    def __call__(self, t, points):
        pts = np.asarray(points, dtype=float)
        return np.broadcast_to(np.asarray(self.value, dtype=float), pts.shape).copy()

    def velocity(self, t, points):
        vel = self(t, points)
        return vel, np.ones(vel.shape[:-1], dtype=bool)


@dataclass(frozen=True)
class LinearField:
    """``x' = rate * x`` in any dimension (test hook with closed-form flow)."""

    rate: float = 1.0
    ndim: int = 1

    @property
    def dim(self) -> int:
        return self.ndim

    def __call__(self, t, points):
        return self.rate * np.asarray(points, dtype=float)

    def velocity(self, t, points):
        vel = self(t, points)
        return vel, np.ones(vel.shape[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class GriddedField:
    """Wind data on a uniform (time, lat, lon) grid.

    Longitudes are periodic over 360 degrees. Winds ``u`` (eastward) and ``v``
    (northward) are in m/s, times in hours. Evaluation returns angular
    velocity in degrees per hour, ordered (d lon/dt, d lat/dt).
    """

    lon0: float
    dlon: float
    lat0: float
    dlat: float
    t0: float
    dt: float
    u: np.ndarray = dc_field(repr=False)
    v: np.ndarray = dc_field(repr=False)
    radius: float = 6.371e6

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=float)
        v = np.ascontiguousarray(self.v, dtype=float)
        if u.ndim != 3 or u.shape != v.shape:
            raise ValueError(f"u and v must share a (nt, nlat, nlon) shape, got {u.shape} and {v.shape}")
        if not (self.dlon > 0 and self.dlat > 0 and self.dt > 0):
            raise ValueError("grid spacings must be strictly positive")
        if u.shape[0] < 2 or u.shape[1] < 2:
            raise ValueError("need at least two times and two latitudes")
        if not np.isclose(u.shape[2] * self.dlon, 360.0):
            raise ValueError("longitude grid must cover exactly 360 degrees")
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return 2

    @property
    def shape(self):
        return self.u.shape

    @property
    def t_last(self) -> float:
        return self.t0 + (self.u.shape[0] - 1) * self.dt

    @property
    def lat_last(self) -> float:
        return self.lat0 + (self.u.shape[1] - 1) * self.dlat

    def lat_limits(self):
        """Latitude interval on which evaluation succeeds."""
        lo, hi = self.lat0, self.lat_last
        # keep one grid cell away from either pole
        return max(lo, -90.0 + self.dlat), min(hi, 90.0 - self.dlat)

    def velocity(self, t, points):
        """Interpolated angular velocity and a validity mask.

        Rows outside the latitude range get velocity 0 and ``ok = False``.
        A time outside the data range raises :class:`OutOfRange`.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        nt, nlat, nlon = self.u.shape
        tt = (t - self.t0) / self.dt
        if not (-1e-9 <= tt <= nt - 1 + 1e-9):
            raise OutOfRange(f"time {t} outside gridded data [{self.t0}, {self.t_last}]")
        it = min(max(int(np.floor(tt)), 0), nt - 2)
        ft = tt - it

        lat_lo, lat_hi = self.lat_limits()
        lat = pts[:, 1]
        ok = (lat >= lat_lo) & (lat <= lat_hi)
        latc = np.where(ok, lat, self.lat0)

        yy = (latc - self.lat0) / self.dlat
        iy = np.clip(np.floor(yy).astype(np.int64), 0, nlat - 2)
        fy = yy - iy
        xx = np.mod(pts[:, 0] - self.lon0, 360.0) / self.dlon
        ix = np.floor(xx).astype(np.int64) % nlon
        fx = xx - np.floor(xx)
        ix1 = (ix + 1) % nlon

        def bilinear(arr):
            a = arr[:, iy, ix] * (1 - fx) + arr[:, iy, ix1] * fx
            b = arr[:, iy + 1, ix] * (1 - fx) + arr[:, iy + 1, ix1] * fx
            return a * (1 - fy) + b * fy

        pair = slice(it, it + 2)
        u2 = bilinear(self.u[pair])
        v2 = bilinear(self.v[pair])
        uu = u2[0] * (1 - ft) + u2[1] * ft
        vv = v2[0] * (1 - ft) + v2[1] * ft

        coslat = np.cos(np.deg2rad(latc))
        out = np.empty_like(pts)
        out[:, 0] = uu / (self.radius * coslat) * _RAD_PER_S_TO_DEG_PER_H
        out[:, 1] = vv / self.radius * _RAD_PER_S_TO_DEG_PER_H
        out[~ok] = 0.0
        return out, ok

    def __call__(self, t, points):
        vel, ok = self.velocity(t, points)
        if not ok.all():
            raise OutOfRange("latitude outside gridded data")
        return vel


def eval_field(field, t, x):
    """Velocity of ``field`` at time ``t`` and a single state point ``x``."""
    return field(t, np.asarray(x, dtype=float)[None, :])[0]


def write_gridded(path, field: GriddedField) -> None:
    """Write a :class:`GriddedField` in the plain-text grid format."""
    nt, nlat, nlon = field.shape
    rows = np.column_stack([field.u.ravel(), field.v.ravel()])
    header = (
        f"{field.lon0!r} {field.dlon!r} {nlon}\n"
        f"{field.lat0!r} {field.dlat!r} {nlat}\n"
        f"{field.t0!r} {field.dt!r} {nt}\n"
        f"{field.radius!r}\n"
    )
    with open(path, "w") as fh:
        fh.write(header)
        np.savetxt(fh, rows, fmt="%.17g")


def read_gridded(path) -> GriddedField:
    """Read a gridded field file, rejecting any shape mismatch."""
    path = Path(path)
    with open(path) as fh:
        head = [fh.readline().split() for _ in range(4)]
        body = fh.read().split()
    try:
        lon0, dlon, nlon = float(head[0][0]), float(head[0][1]), int(head[0][2])
        lat0, dlat, nlat = float(head[1][0]), float(head[1][1]), int(head[1][2])
        t0, dt, nt = float(head[2][0]), float(head[2][1]), int(head[2][2])
        radius = float(head[3][0])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed gridded-field header") from exc
    if any(len(h) != n for h, n in zip(head, (3, 3, 3, 1))):
        raise ValueError(f"{path}: malformed gridded-field header")
    expected = nt * nlat * nlon * 2
    if len(body) != expected:
        raise ValueError(
            f"{path}: expected {nt * nlat * nlon} rows of 'u v' for shape "
            f"({nt}, {nlat}, {nlon}), found {len(body)} values"
        )
    data = np.asarray(body, dtype=float).reshape(nt, nlat, nlon, 2)
    return GriddedField(lon0, dlon, lat0, dlat, t0, dt,
                        data[..., 0], data[..., 1], radius)
