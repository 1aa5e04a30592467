"""Fixed-step RK4 flow maps over one step of flow time ``tau``.

The batch entry point is :func:`advect`, which moves an ``(P, d)`` array of
particles and reports which ones escaped the domain. It dispatches to the
compiled kernels for the built-in fields when they are available and to a
vectorised numpy integrator otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .fields import AnalyticField, GriddedField


class _Escaped:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "ESCAPED"

    def __bool__(self):
        return False


#: Returned by :func:`flow_map` when a trajectory leaves the domain.
ESCAPED = _Escaped()


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box with optional periodic axes."""

    lo: tuple
    hi: tuple
    periodic: tuple = ()

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        per = tuple(bool(p) for p in self.periodic) or (False,) * len(lo)
        if not (len(lo) == len(hi) == len(per)):
            raise ValueError("lo, hi and periodic must have one entry per axis")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("domain bounds must satisfy lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "periodic", per)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def arrays(self):
        return (np.array(self.lo), np.array(self.hi),
                np.array(self.periodic, dtype=np.uint8))


@dataclass(frozen=True)
class FlowSpec:
    """One step of the flow: integrate ``field`` over ``tau`` with RK4 substeps ``h``.

    ``tau = 0`` is allowed and gives the identity map. ``h`` defaults to
    ``tau / 10``.
    """

    tau: float
    field: object
    h: float | None = None
    domain: Domain | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        h = self.tau / 10.0 if self.h is None else float(self.h)
        if self.tau > 0:
            if not 0 < h <= self.tau:
                raise ValueError("need 0 < h <= tau")
            ratio = self.tau / h
            if abs(ratio - round(ratio)) > 1e-9 * ratio:
                raise ValueError(f"tau/h = {ratio} is not an integer")
        object.__setattr__(self, "h", h)

    @property
    def nsub(self) -> int:
        if self.tau == 0:
            return 0
        return int(round(self.tau / self.h))


def rk4_numpy(field, points, t, h, nsub, domain=None):
    """Vectorised RK4 for any field; returns ``(positions, escaped)``.

    Escaped particles keep their last in-domain position. Periodic axes are
    wrapped after each substep and the escape test is applied after wrapping.
    """
    x = np.array(points, dtype=float, copy=True)
    if x.ndim != 2:
        raise ValueError("points must be an (P, d) array")
    escaped = np.zeros(len(x), dtype=bool)
    if domain is not None:
        lo, hi, per = domain.arrays()
        per = per.astype(bool)
        span = hi - lo
    velocity = getattr(field, "velocity", None)

    def vel(tt, pts):
        if velocity is not None:
            return velocity(tt, pts)
        return field(tt, pts), np.ones(len(pts), dtype=bool)

    if domain is not None:
        escaped |= _outside(x, lo, hi, per)
    for i in range(nsub):
        idx = np.flatnonzero(~escaped)
        if idx.size == 0:
            break
        ti = t + i * h
        xa = x[idx]
        k1, ok = vel(ti, xa)
        k2, ok2 = vel(ti + 0.5 * h, xa + 0.5 * h * k1)
        k3, ok3 = vel(ti + 0.5 * h, xa + 0.5 * h * k2)
        k4, ok4 = vel(ti + h, xa + h * k3)
        ok = ok & ok2 & ok3 & ok4
        xn = xa + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(xn[ok]).all():
            raise FloatingPointError(f"non-finite state at t={ti}; check the field data")
        if domain is not None:
            if per.any():
                xn[:, per] = lo[per] + np.mod(xn[:, per] - lo[per], span[per])
            ok &= ~_outside(xn, lo, hi, per)
        x[idx[ok]] = xn[ok]
        escaped[idx[~ok]] = True
    return x, escaped


def _outside(x, lo, hi, per):
    bad = (x < lo) | (x > hi)
    bad[:, per] = False
    return bad.any(axis=1)


def advect(spec: FlowSpec, t, points, domain=None, backend=None):
    """Move particles from ``t`` to ``t + tau``.

    Parameters
    ----------
    spec : FlowSpec
    t : float
        Start time.
    points : (P, d) array_like
    domain : Domain, optional
        Overrides ``spec.domain``.
    backend : {"compiled", "python"}, optional
        Force a kernel implementation; defaults to the one selected at import.

    Returns
    -------
    positions : (P, d) ndarray
    escaped : (P,) bool ndarray
    """
    domain = spec.domain if domain is None else domain
    kernels = _backend.select(backend)
    field = spec.field
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if spec.nsub == 0:
        escaped = np.zeros(len(pts), dtype=bool)
        if domain is not None:
            lo, hi, per = domain.arrays()
            escaped = _outside(pts, lo, hi, per.astype(bool))
        return pts.copy(), escaped
    if kernels is not None and pts.shape[1] == 2:
        if isinstance(field, AnalyticField):
            return kernels.advect_double_well(field, pts, float(t), spec.h, spec.nsub, domain)
        if isinstance(field, GriddedField):
            return kernels.advect_gridded(field, pts, float(t), spec.h, spec.nsub, domain)
    return rk4_numpy(field, pts, float(t), spec.h, spec.nsub, domain)


def flow_map(spec: FlowSpec, t, x):
    """Position of ``x`` after one step from ``t``, or :data:`ESCAPED`."""
    pos, esc = advect(spec, t, np.asarray(x, dtype=float).reshape(1, -1))
    if esc[0]:
        return ESCAPED
    return pos[0]


def flow_compose(spec: FlowSpec, t, x, n: int):
    """``n`` successive steps starting at ``t``; ``n = 0`` returns ``x``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    y = np.asarray(x, dtype=float).copy()
    for i in range(n):
        y = flow_map(spec, t + i * spec.tau, y)
        if y is ESCAPED:
            return ESCAPED
    return y
