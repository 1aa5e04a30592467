"""Command-line experiment runner.

Every command reads an INI config (see :mod:`ulamflow.config`) and works in
its output directory::

    out/matrices/ulam_00000.txt     one-step matrices
    out/svd/svd_00000.txt           window singular triples
    out/paths_values.csv            tracked paths, one file per method
    out/equivariance_values.csv
    out/frames/frame_{k}_{j}_{i}.csv / .pgm
    out/coherence_{k}_{j}.csv

Exit codes: 0 success, 2 configuration error, 3 missing or corrupt
artifact, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import _backend
from .cocycle import ConvergenceError, read_svd, rolling_windows, write_svd
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (animate_mode, coherence_curve, equivariance_series,
                          write_equivariance, write_frames)
from .fields import OutOfRange
from .tracking import read_paths, track_by_values, track_by_vectors, write_paths
from .ulam import MatrixFileError, build_ulam, read_ulam, write_ulam

log = logging.getLogger("ulamflow")

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4


class MissingArtifact(RuntimeError):
    """An upstream output is absent or unreadable."""


class LockError(RuntimeError):
    """Another run holds the output directory."""


def matrix_path(cfg, i):
    return cfg.output / "matrices" / f"ulam_{i:05d}.txt"


def svd_path(cfg, k):
    return cfg.output / "svd" / f"svd_{k:05d}.txt"


def paths_path(cfg, method):
    return cfg.output / f"paths_{method}.csv"


def _header_hash(path):
    with open(path) as fh:
        first = fh.readline().split()
    if len(first) == 3 and first[:2] == ["#", "config_hash"]:
        return first[2]
    return None


@contextmanager
def output_lock(outdir: Path):
    """Advisory lock file; a second concurrent run on the same directory fails."""
    outdir.mkdir(parents=True, exist_ok=True)
    lock = outdir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{outdir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def load_matrices(cfg, count=None):
    count = cfg.steps if count is None else count
    out = []
    for i in range(count):
        p = matrix_path(cfg, i)
        if not p.exists():
            raise MissingArtifact(f"matrix file {p} is missing; run 'build' first")
        try:
            out.append(read_ulam(p))
        except MatrixFileError as exc:
            raise MissingArtifact(str(exc)) from exc
    return out


def load_svds(cfg):
    out = []
    for k in range(cfg.n_windows):
        p = svd_path(cfg, k)
        if not p.exists():
            raise MissingArtifact(f"SVD file {p} is missing; run 'svd' first")
        try:
            out.append(read_svd(p))
        except ValueError as exc:
            raise MissingArtifact(str(exc)) from exc
    return out


def cmd_build(cfg: ExperimentConfig, force=False, field=None):
    """Write one matrix file per step, skipping up-to-date files unless ``force``."""
    field = cfg.make_field() if field is None else field
    cfg.check_field_range(field)
    flow = cfg.make_flow(field)
    part = cfg.make_partition()
    h = cfg.hash()
    (cfg.output / "matrices").mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(cfg.steps):
        p = matrix_path(cfg, i)
        if not force and p.exists() and _header_hash(p) == h:
            continue
        t = cfg.t_i + i * cfg.tau
        mat = build_ulam(flow, part, t, cfg.Q, cfg.scheme, cfg.seed)
        write_ulam(p, mat, h)
        written.append(p)
    log.info("built %d of %d matrices", len(written), cfg.steps)
    return written


def cmd_svd(cfg: ExperimentConfig, threads=1):
    mats = load_matrices(cfg)
    svds = rolling_windows(mats, cfg.t_i, cfg.t_F, cfg.n, cfg.N, seed_rows=cfg.seed_rows(),
                           workers=threads)
    (cfg.output / "svd").mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    for k, svd in enumerate(svds):
        write_svd(svd_path(cfg, k), svd, h)
    log.info("wrote %d window decompositions", len(svds))
    return svds


def _track(cfg, method, svds=None):
    svds = load_svds(cfg) if svds is None else svds
    if method == "values":
        return track_by_values(svds)
    mats = load_matrices(cfg, max(cfg.n_windows - 1, 0))
    return track_by_vectors(svds, mats, seed_rows=cfg.seed_rows())


def cmd_track(cfg: ExperimentConfig, method=None):
    method = method or cfg.method
    paths = _track(cfg, method)
    out = paths_path(cfg, method)
    write_paths(out, paths, cfg.hash())
    if paths.flagged:
        log.warning("windows %s had an evolved vector with zero norm", paths.flagged)
    return out


def cmd_equivariance(cfg: ExperimentConfig, method=None):
    method = method or cfg.method
    svds = load_svds(cfg)
    p = paths_path(cfg, method)
    if not p.exists():
        raise MissingArtifact(f"tracked paths {p} are missing; run 'track' first")
    paths = read_paths(p)
    if cfg.n >= len(svds):
        raise ConfigError(f"no window pairs n={cfg.n} apart among {len(svds)} windows")
    series = equivariance_series(svds, paths, cfg.n)
    out = cfg.output / f"equivariance_{method}.csv"
    write_equivariance(out, series, cfg.hash())
    return out


def _check_kj(cfg, k, j):
    if k is None or j is None:
        raise ConfigError("--window and --mode are required")
    if not 0 <= k < cfg.n_windows:
        raise ConfigError(f"window {k} outside 0..{cfg.n_windows - 1}")
    if not 1 <= j <= cfg.N:
        raise ConfigError(f"mode {j} outside 1..{cfg.N}")


def cmd_animate(cfg: ExperimentConfig, k, j):
    """Frames ``0..n`` of left singular vector ``j`` (1-based rank) in window ``k``."""
    _check_kj(cfg, k, j)
    p = svd_path(cfg, k)
    if not p.exists():
        raise MissingArtifact(f"SVD file {p} is missing; run 'svd' first")
    svd = read_svd(p)
    mats = load_matrices(cfg, k + cfg.n)
    frames = animate_mode(svd, mats, k, j - 1, growing=cfg.growing)
    if frames.empty:
        log.warning("frames %s are empty: all mass escaped", frames.empty)
    return write_frames(cfg.output / "frames", frames, cfg.make_partition(), k_label=k, j_label=j,
                        config_hash=cfg.hash())


def cmd_coherence_log(cfg: ExperimentConfig, k, j):
    """``(1/n_t) log ||u_j^T P^(n_t)||`` for ``n_t = 1..n`` as CSV."""
    _check_kj(cfg, k, j)
    if cfg.n < 1:
        raise ConfigError("coherence log needs n >= 1")
    p = svd_path(cfg, k)
    if not p.exists():
        raise MissingArtifact(f"SVD file {p} is missing; run 'svd' first")
    svd = read_svd(p)
    mats = load_matrices(cfg, k + cfg.n)
    curve = coherence_curve(svd.U[:, j - 1], mats, k, cfg.n, svd.row_index, cfg.growing)
    out = cfg.output / f"coherence_{k}_{j}.csv"
    with open(out, "w") as fh:
        fh.write(f"# config_hash {cfg.hash()}\n")
        fh.write("n_t,rate\n")
        for nt, r in enumerate(curve, start=1):
            fh.write(f"{nt},{r:.17g}\n")
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="ulamflow", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path, metavar="PATH")
        p.add_argument("--threads", type=int, default=1, metavar="N")
        return p

    p = add("build", "estimate the one-step matrices")
    p.add_argument("--force", action="store_true", help="rebuild existing matrix files")
    add("svd", "decompose every rolling window")
    for name, help_ in (("track", "pair singular values into paths"),
                        ("equivariance", "mismatch between consecutive window vectors")):
        p = add(name, help_)
        p.add_argument("--method", choices=("values", "vectors"))
    for name, help_ in (("animate", "evolve one mode through its window"),
                        ("coherence-log", "decay rate of one evolved mode")):
        p = add(name, help_)
        p.add_argument("--window", type=int, metavar="K", help="window index from t_i")
        p.add_argument("--mode", type=int, metavar="J", help="1-based rank")
    return ap


def run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.command in ("animate", "coherence-log"):
            _check_kj(cfg, args.window, args.mode)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    _backend.set_threads(args.threads)
    try:
        if cfg.model == "gridded" and args.command == "build":
            from .fields import read_gridded

            if not cfg.data_path.exists():
                raise MissingArtifact(f"gridded data {cfg.data_path} not found")
            try:
                field = read_gridded(cfg.data_path)
            except ValueError as exc:
                raise MissingArtifact(str(exc)) from exc
            cfg.check_field_range(field)
        else:
            field = None
        with output_lock(cfg.output):
            if args.command == "build":
                cmd_build(cfg, args.force, field)
            elif args.command == "svd":
                cmd_svd(cfg, args.threads)
            elif args.command == "track":
                cmd_track(cfg, args.method)
            elif args.command == "equivariance":
                cmd_equivariance(cfg, args.method)
            elif args.command == "animate":
                cmd_animate(cfg, args.window, args.mode)
            else:
                cmd_coherence_log(cfg, args.window, args.mode)
    except (ConfigError, OutOfRange, LockError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_ARTIFACT
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
