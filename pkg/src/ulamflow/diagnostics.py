"""Mode animation frames, coherence decay and equivariance mismatch."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ulam import growing_chain

SQRT2 = math.sqrt(2.0)


def _evolve_raw(u, matrices, k, steps, row_index=None, growing=False):
    """``u^T P_k ... P_{k+steps-1}`` and the bin ids it lives on."""
    vec = np.asarray(u, dtype=float)
    chain = list(matrices[k:k + steps])
    if len(chain) < steps:
        raise IndexError(f"need {steps} matrices from {k}, have {len(chain)}")
    if row_index is None:
        row_index = chain[0].row_index if chain else np.arange(len(vec))
    idx = np.asarray(row_index)
    if growing and chain:
        chain = growing_chain(chain, idx)
    for mat in chain:
        if not np.array_equal(mat.row_index, idx):
            raise ValueError(f"matrix at t={mat.t} does not act on the current index set")
        vec = mat.P.T @ vec
        idx = mat.col_index
    return vec, idx


def evolve_mode(u, matrices, k, n_tilde, row_index=None, growing=False):
    """Evolved row vector ``u^T P^{(n_tilde)}_k``, normalised to unit length.

    ``n_tilde = 0`` returns ``u``. A vector whose mass has fully escaped
    comes back as zeros with a :class:`RuntimeWarning`.

    Returns
    -------
    vec : ndarray
    index : ndarray
        Bin ids the entries of ``vec`` refer to.
    """
    vec, idx = _evolve_raw(u, matrices, k, n_tilde, row_index, growing)
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        warnings.warn(f"mode fully escaped after {n_tilde} steps", RuntimeWarning, stacklevel=2)
        return np.zeros_like(vec), idx
    return vec / nrm, idx


def coherence_log(u, matrices, k, n_t, row_index=None, growing=False) -> float:
    """``(1/n_t) log ||u^T P^{(n_t)}_k||``; ``-inf`` once all mass is lost."""
    if n_t < 1:
        raise ValueError("n_t must be at least 1")
    vec, _ = _evolve_raw(u, matrices, k, n_t, row_index, growing)
    nrm = np.linalg.norm(vec)
    if nrm == 0:
        return -math.inf
    return math.log(nrm) / n_t


def coherence_curve(u, matrices, k, n, row_index=None, growing=False):
    """Coherence log for every ``n_t = 1..n`` in a single pass."""
    vec = np.asarray(u, dtype=float)
    idx = np.asarray(row_index if row_index is not None else matrices[k].row_index)
    chain = list(matrices[k:k + n])
    if growing:
        chain = growing_chain(chain, idx)
    out = np.empty(n)
    for i, mat in enumerate(chain):
        vec = mat.P.T @ vec
        nrm = np.linalg.norm(vec)
        out[i] = math.log(nrm) / (i + 1) if nrm > 0 else -math.inf
    return out


def _common(a, ia, b, ib):
    if ia is None or ib is None or (len(ia) == len(ib) and np.array_equal(ia, ib)):
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _, pa, pb = np.intersect1d(ia, ib, return_indices=True)
    return np.asarray(a, dtype=float)[pa], np.asarray(b, dtype=float)[pb]


def equivariance_mismatch(v, u_next, v_index=None, u_index=None) -> float:
    """Sign-insensitive distance ``min(||v + u||, ||v - u||) / sqrt(2)`` in ``[0, 1]``.

    With index lists the vectors are compared on the shared bin ids and each
    restriction is renormalised; an empty overlap gives 1.
    """
    a, b = _common(v, v_index, u_next, u_index)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    a = a / na
    b = b / nb
    return float(min(np.linalg.norm(a + b), np.linalg.norm(a - b)) / SQRT2)


@dataclass
class EquivarianceSeries:
    """``sigma[p, k]`` for tracked path ``p`` and window start ``t0[k]``."""

    method: str
    t0: np.ndarray
    sigma: np.ndarray

    def mean(self):
        return self.sigma.mean(axis=1)


def equivariance_series(svds, paths, n: int) -> EquivarianceSeries:
    """Mismatch between each path's right vector in window ``k`` and its left vector in window ``k + n``.

    Only window starts with a partner ``n`` windows later are evaluated.
    """
    K = len(svds)
    if paths.ranks.shape[1] != K:
        raise ValueError("paths and windows disagree on the number of windows")
    if n >= K:
        raise ValueError(f"no window pairs {n} apart among {K} windows")
    sigma = np.empty((paths.N, K - n))
    for p in range(paths.N):
        for k in range(K - n):
            a = svds[k]
            b = svds[k + n]
            v = a.V[:, paths.ranks[p, k]]
            u = b.U[:, paths.ranks[p, k + n]]
            sigma[p, k] = equivariance_mismatch(v, u, a.col_index, b.row_index)
    return EquivarianceSeries(paths.method, np.array([s.t0 for s in svds[:K - n]]), sigma)


def write_equivariance(path, series: EquivarianceSeries, config_hash: str | None = None):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mode", "k", "sigma"])
        for p in range(series.sigma.shape[0]):
            for k, t in enumerate(series.t0):
                w.writerow([series.method, p + 1, repr(float(t)), f"{series.sigma[p, k]:.17g}"])


def fsm_normalize(evolved_mode, evolved_leading):
    """Entrywise quotient by the evolved leading vector, scaled to unit sup-norm.

    Entries where the leading vector vanishes are masked to zero.

    Returns
    -------
    out : ndarray
    masked : bool ndarray
        Entries that could not be divided.
    """
    mode = np.asarray(evolved_mode, dtype=float)
    lead = np.asarray(evolved_leading, dtype=float)
    masked = lead == 0
    out = np.zeros_like(mode)
    np.divide(mode, lead, out=out, where=~masked)
    peak = np.max(np.abs(out)) if out.size else 0.0
    if peak > 0:
        out /= peak
    return out, masked & (mode != 0)


def continuous_signs(vectors):
    """Flip each vector so it has nonnegative inner product with its predecessor."""
    out = [np.asarray(vectors[0], dtype=float)]
    for v in vectors[1:]:
        v = np.asarray(v, dtype=float)
        prev = out[-1]
        if len(prev) == len(v) and float(prev @ v) < 0:
            v = -v
        out.append(v)
    return out


@dataclass
class ModeFrames:
    """Frames ``0..n`` of one left singular vector evolved through its window."""

    t0: float
    n: int
    mode: int
    frames: list
    indices: list
    colour_limit: float
    empty: list = field(default_factory=list)


def animate_mode(svd, matrices, k, j, n_frames=None, growing=False) -> ModeFrames:
    """Evolve column ``j`` (0-based) of ``svd.U`` from window start ``k`` for ``0..n`` steps."""
    u = svd.U[:, j]
    n = svd.n if n_frames is None else n_frames
    frames, indices, empty = [], [], []
    vec = np.asarray(u, dtype=float)
    idx = np.asarray(svd.row_index)
    chain = list(matrices[k:k + n])
    if len(chain) < n:
        raise IndexError(f"window at {k} needs {n} matrices")
    if growing:
        chain = growing_chain(chain, idx)
    frames.append(vec / np.linalg.norm(vec))
    indices.append(idx)
    for i, mat in enumerate(chain):
        vec = mat.P.T @ vec
        idx = mat.col_index
        nrm = np.linalg.norm(vec)
        if nrm == 0:
            empty.append(i + 1)
            frames.append(np.zeros_like(vec))
        else:
            frames.append(vec / nrm)
        indices.append(idx)
    return ModeFrames(svd.t0, n, j, frames, indices, float(np.max(np.abs(u))), empty)


def render_frame(frame, partition, limit=None, index=None):
    """Place a vector on the bin raster.

    Returns a float array of shape ``nbins[::-1]`` (rows are the second axis,
    e.g. latitude) with NaN for bins outside ``index``. The colour limit
    defaults to ``max|frame|``.
    """
    frame = np.asarray(frame, dtype=float)
    index = np.arange(partition.m) if index is None else np.asarray(index)
    if len(index) != len(frame):
        raise ValueError("frame length does not match its bin index")
    grid = np.full(partition.m, np.nan)
    grid[index] = frame
    if limit is None:
        limit = float(np.max(np.abs(frame))) if frame.size else 0.0
    return grid.reshape(partition.nbins[::-1]), limit


def to_grey(grid, limit):
    """Map ``[-limit, limit]`` to 0..255; zero and missing cells are mid-grey."""
    g = np.nan_to_num(np.asarray(grid, dtype=float), nan=0.0)
    if limit <= 0:
        return np.full(g.shape, 128, dtype=np.uint8)
    scaled = np.clip(g / limit, -1.0, 1.0)
    return np.clip(np.rint(127.5 + 127.5 * scaled + 1e-9), 0, 255).astype(np.uint8)


def write_grid_csv(path, grid, config_hash=None):
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow(["" if np.isnan(x) else f"{x:.17g}" for x in row])


def read_grid_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    return np.array([[float(x) if x else np.nan for x in r] for r in rows])


def write_pgm(path, grey, config_hash=None):
    """Binary greyscale PGM; the last raster row is drawn at the top."""
    grey = np.asarray(grey, dtype=np.uint8)[::-1]
    h, w = grey.shape
    comment = f"# config_hash {config_hash}\n" if config_hash else ""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{comment}{w} {h}\n255\n".encode())
        fh.write(grey.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if not line.startswith(b"#"):
            fields.extend(line.split())
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)[::-1]


def write_frames(outdir, frames: ModeFrames, partition, k_label=None, j_label=None,
                 config_hash=None):
    """Write ``frame_{k}_{j}_{n}.csv`` and ``.pgm`` for every frame; returns the csv paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    k_label = frames.t0 if k_label is None else k_label
    j_label = frames.mode + 1 if j_label is None else j_label
    k_txt = f"{k_label:g}" if isinstance(k_label, float) else str(k_label)
    paths = []
    for i, (vec, idx) in enumerate(zip(frames.frames, frames.indices)):
        grid, _ = render_frame(vec, partition, frames.colour_limit, idx)
        stem = outdir / f"frame_{k_txt}_{j_label}_{i}"
        write_grid_csv(stem.with_suffix(".csv"), grid, config_hash)
        write_pgm(stem.with_suffix(".pgm"), to_grey(grid, frames.colour_limit), config_hash)
        paths.append(stem.with_suffix(".csv"))
    return paths
