"""Compare the compiled and numpy particle integrators.

Usage::

    python3 benchmarks/bench_kernels.py --bins 64 --Q 100 --repeat 3
"""
import argparse
import time

import numpy as np

from ulamflow import BACKEND, set_threads
from ulamflow.fields import AnalyticField, GriddedField
from ulamflow.integrate import FlowSpec, advect
from ulamflow.ulam import BinPartition, _seed_many


def synthetic_winds():
    t = np.arange(0.0, 48.1, 6.0)
    lat = np.arange(-90.0, 90.1, 2.5)
    lon = np.arange(0.0, 360.0, 2.5)
    T, LA, LO = np.meshgrid(t, lat, lon, indexing="ij")
    u = 30.0 * np.cos(np.deg2rad(LA)) + 5.0 * np.sin(np.deg2rad(2 * LO + T))
    v = 5.0 * np.cos(np.deg2rad(3 * LO - T)) * np.cos(np.deg2rad(LA))
    return GriddedField(0.0, 2.5, -90.0, 2.5, 0.0, 6.0, u, v)


def cases(nbins, Q):
    dw = BinPartition.grid((-np.pi, -np.pi), (np.pi, np.pi), (nbins, nbins))
    pts = _seed_many(dw, np.arange(dw.m), Q, "lattice", 0).reshape(-1, 2)
    yield "double well", FlowSpec(1.0, AnalyticField()), dw.domain, pts, 3.0
    sphere = BinPartition.grid((0.0, -80.0), (360.0, 80.0), (nbins, nbins // 2), (True, False))
    pts = _seed_many(sphere, np.arange(sphere.m), Q, "lattice", 0).reshape(-1, 2)
    yield "gridded", FlowSpec(6.0, synthetic_winds()), sphere.domain, pts, 12.0


def timed(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--bins", type=int, default=64)
    ap.add_argument("--Q", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    if BACKEND != "compiled":
        raise SystemExit("compiled kernels are not built; run 'pip install -e . --no-build-isolation'")
    set_threads(args.threads)
    print(f"{'case':<12} {'particles':>10} {'python s':>10} {'compiled s':>11} {'speedup':>8} {'max diff':>10}")
    for name, flow, dom, pts, t in cases(args.bins, args.Q):
        tp, (xp, ep) = timed(lambda: advect(flow, t, pts, dom, backend="python"), args.repeat)
        tc, (xc, ec) = timed(lambda: advect(flow, t, pts, dom, backend="compiled"), args.repeat)
        ok = ~(ep | ec)
        diff = float(np.max(np.abs(xp[ok] - xc[ok]))) if ok.any() else 0.0
        print(f"{name:<12} {len(pts):>10} {tp:>10.3f} {tc:>11.3f} {tp / tc:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
