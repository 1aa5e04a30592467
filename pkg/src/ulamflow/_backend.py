"""Kernel backend selection.

The compiled extension is used when it imports; set ``ULAMFLOW_PURE_PYTHON=1``
to force the numpy integrator. ``BACKEND`` records the choice made at import.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    if os.environ.get("ULAMFLOW_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"

_threads = 1


def set_threads(n: int) -> None:
    """Number of threads the compiled kernels split particle batches across."""
    global _threads
    _threads = max(1, int(n))


def _domain_arrays(domain):
    if domain is None:
        return np.zeros(2), np.ones(2), np.zeros(2, dtype=np.uint8), 0
    lo, hi, per = domain.arrays()
    return lo, hi, per, 1


def _run_chunked(fn, pts, escaped, *args):
    n = len(pts)
    if _threads == 1 or n < 4096:
        return fn(pts, escaped, *args)
    bounds = np.linspace(0, n, _threads + 1).astype(int)
    with ThreadPoolExecutor(_threads) as pool:
        futs = [pool.submit(fn, pts[a:b], escaped[a:b], *args)
                for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        return sum(f.result() for f in futs)


class _Compiled:
    name = "compiled"

    @staticmethod
    def advect_double_well(field, pts, t, h, nsub, domain):
        kind = 0 if field.kind == "periodic_double_well" else 1
        table = _kernels.forcing_table(t, h, nsub, kind, float(field.gamma))
        x = np.array(pts, dtype=float, order="C", copy=True)
        esc = np.zeros(len(x), dtype=np.uint8)
        lo, hi, per, bounded = _domain_arrays(domain)
        bad = _run_chunked(_kernels.rk4_double_well, x, esc, table, h, lo, hi, per, bounded)
        if bad:
            raise FloatingPointError(f"{bad} particles hit non-finite states")
        return x, esc.astype(bool)

    @staticmethod
    def advect_gridded(field, pts, t, h, nsub, domain):
        from .fields import OutOfRange

        nt = field.shape[0]
        frame = np.empty((nsub, 3), dtype=np.int_)
        frac = np.empty((nsub, 3))
        for i in range(nsub):
            ti = t + i * h
            for s, tt in enumerate((ti, ti + 0.5 * h, ti + h)):
                q = (tt - field.t0) / field.dt
                if not (-1e-9 <= q <= nt - 1 + 1e-9):
                    raise OutOfRange(f"time {tt} outside gridded data [{field.t0}, {field.t_last}]")
                it = min(max(int(np.floor(q)), 0), nt - 2)
                frame[i, s] = it
                frac[i, s] = q - it
        lat_lo, lat_hi = field.lat_limits()
        x = np.array(pts, dtype=float, order="C", copy=True)
        esc = np.zeros(len(x), dtype=np.uint8)
        lo, hi, per, bounded = _domain_arrays(domain)
        bad = _run_chunked(_kernels.rk4_gridded, x, esc, frame, frac, h, field.u, field.v,
                           field.lon0, field.dlon, field.lat0, field.dlat,
                           lat_lo, lat_hi, field.radius, lo, hi, per, bounded)
        if bad:
            raise FloatingPointError(f"{bad} particles hit non-finite states")
        return x, esc.astype(bool)


def select(backend=None):
    """Kernel namespace for ``backend`` (``None`` = import-time default).

    Returns ``None`` for the numpy path.
    """
    if backend is None:
        backend = BACKEND
    if backend == "python":
        return None
    if backend == "compiled":
        if _kernels is None:
            raise RuntimeError("compiled kernels are not built")
        return _Compiled
    raise ValueError(f"unknown backend {backend!r}")
