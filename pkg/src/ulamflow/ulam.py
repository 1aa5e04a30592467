"""Bin partitions and Ulam transition matrices.

Bins are numbered row-major with the first axis fastest, so a vector over
all bins reshapes to ``(n_y, n_x)`` for a 2-D partition.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .integrate import Domain, FlowSpec, advect


@dataclass(frozen=True, eq=False)
class BinPartition:
    """Uniform rectangular grid of bins over ``domain``.

    ``active_rows`` (seeded bins) and ``active_cols`` are ``None`` for the
    full partition. In growing-domain mode both are sorted bin-id arrays with
    ``active_rows`` a subset of ``active_cols``.
    """

    domain: Domain
    nbins: tuple
    active_rows: np.ndarray | None = None
    active_cols: np.ndarray | None = None

    def __post_init__(self):
        nb = tuple(int(n) for n in self.nbins)
        if len(nb) != self.domain.dim or any(n < 1 for n in nb):
            raise ValueError("need a positive bin count per domain axis")
        object.__setattr__(self, "nbins", nb)
        rows, cols = self.active_rows, self.active_cols
        if (rows is None) != (cols is None):
            raise ValueError("active_rows and active_cols must be given together")
        if rows is not None:
            rows = np.unique(np.asarray(rows, dtype=np.int64))
            cols = np.union1d(np.asarray(cols, dtype=np.int64), rows)
            if rows.size == 0:
                raise ValueError("growing-domain mode needs at least one seeded bin")
            if rows.min() < 0 or cols.max() >= self.m:
                raise ValueError("active bin ids out of range")
            object.__setattr__(self, "active_rows", rows)
            object.__setattr__(self, "active_cols", cols)

    @classmethod
    def grid(cls, lo, hi, nbins, periodic=()):
        return cls(Domain(tuple(lo), tuple(hi), tuple(periodic)), tuple(nbins))

    def seeded(self, mask):
        """Growing-domain copy seeding the bins where ``mask`` (over all bins) holds."""
        rows = np.flatnonzero(np.asarray(mask, dtype=bool))
        return BinPartition(self.domain, self.nbins, rows, rows)

    def seeded_below(self, axis: int, threshold: float):
        """Seed the bins whose centre coordinate on ``axis`` is below ``threshold``."""
        return self.seeded(self.centres()[:, axis] < threshold)

    @property
    def growing(self) -> bool:
        return self.active_rows is not None

    @property
    def m(self) -> int:
        return math.prod(self.nbins)

    @property
    def widths(self) -> np.ndarray:
        lo, hi, _ = self.domain.arrays()
        return (hi - lo) / np.array(self.nbins)

    def row_ids(self) -> np.ndarray:
        if self.active_rows is None:
            return np.arange(self.m)
        return self.active_rows

    def col_ids(self) -> np.ndarray:
        if self.active_cols is None:
            return np.arange(self.m)
        return self.active_cols

    def multi_index(self, ids):
        return np.stack(np.unravel_index(np.asarray(ids), self.nbins[::-1])[::-1], axis=-1)

    def lower_corner(self, ids):
        lo = np.array(self.domain.lo)
        return lo + self.multi_index(ids) * self.widths

    def centres(self, ids=None):
        ids = np.arange(self.m) if ids is None else ids
        return self.lower_corner(ids) + 0.5 * self.widths

    def bin_of(self, points) -> np.ndarray:
        """Bin id of each point, ``-1`` outside the domain.

        Bins are half-open ``[lo, hi)`` per axis; the upper domain face is
        folded into the last bin so the bins tile the closed box.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi, per = self.domain.arrays()
        nb = np.array(self.nbins)
        rel = (pts - lo) / self.widths
        idx = np.floor(rel).astype(np.int64)
        inside = np.ones(len(pts), dtype=bool)
        for d in range(pts.shape[1]):
            if per[d]:
                idx[:, d] %= nb[d]
            else:
                edge = pts[:, d] == hi[d]
                idx[edge, d] = nb[d] - 1
                inside &= (idx[:, d] >= 0) & (idx[:, d] < nb[d])
        out = np.full(len(pts), -1, dtype=np.int64)
        stride = np.cumprod(np.r_[1, nb[:-1]])
        out[inside] = idx[inside] @ stride
        return out


def _lattice_offsets(Q: int, dim: int) -> np.ndarray:
    side = math.isqrt(Q) if dim == 2 else round(Q ** (1.0 / dim))
    if side ** dim != Q:
        raise ValueError(f"lattice seeding needs Q to be a perfect {dim}-th power, got {Q}")
    g = (np.arange(side) + 0.5) / side
    mesh = np.meshgrid(*([g] * dim), indexing="ij")
    return np.stack([a.ravel() for a in mesh[::-1]], axis=-1)


def seed_points(partition: BinPartition, bin: int, Q: int, scheme="lattice", seed=0):
    """``Q`` test points inside one bin.

    ``scheme="lattice"`` gives the centred regular sublattice (``Q`` must be a
    perfect square in 2-D); ``scheme="rng"`` gives i.i.d. uniform draws from a
    PCG64 generator keyed by ``(seed, bin)``.
    """
    return _seed_many(partition, np.array([bin]), Q, scheme, seed)[0]


def _seed_many(partition, ids, Q, scheme, seed):
    if Q < 1:
        raise ValueError("Q must be at least 1")
    dim = partition.domain.dim
    corners = partition.lower_corner(ids)
    w = partition.widths
    if scheme == "lattice":
        offs = _lattice_offsets(Q, dim)
        return corners[:, None, :] + offs[None, :, :] * w
    if scheme == "rng":
        offs = np.empty((len(ids), Q, dim))
        for r, b in enumerate(ids):
            rng = np.random.Generator(np.random.PCG64([int(seed), int(b)]))
            offs[r] = rng.random((Q, dim))
        return corners[:, None, :] + offs * w
    raise ValueError(f"unknown seeding scheme {scheme!r}")


@dataclass(frozen=True, eq=False)
class UlamMatrix:
    """One-step transition matrix between two lists of bins.

    ``counts[i, j]`` is the number of the ``Q`` test points of bin
    ``row_index[i]`` that land in bin ``col_index[j]``; the weights are
    ``counts / Q``.
    """

    t: float
    tau: float
    Q: int
    row_index: np.ndarray
    col_index: np.ndarray
    counts: sp.csr_matrix

    @property
    def shape(self):
        return self.counts.shape

    @property
    def P(self) -> sp.csr_matrix:
        out = self.counts.astype(float)
        out.data /= self.Q
        return out

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel() / self.Q

    def triplets(self):
        """``(row, col, weight)`` arrays in lexicographic order."""
        coo = self.counts.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order] / self.Q


def build_ulam(flow: FlowSpec, partition: BinPartition, t, Q=100, scheme="lattice",
               seed=0, backend=None) -> UlamMatrix:
    """Estimate the one-step transfer matrix from ``t`` to ``t + tau``.

    In growing-domain mode the rows are ``partition.active_rows`` and the
    columns are ``partition.active_cols`` extended by every bin hit.
    """
    rows = partition.row_ids()
    pts = _seed_many(partition, rows, Q, scheme, seed).reshape(-1, partition.domain.dim)
    pos, esc = advect(flow, t, pts, domain=partition.domain, backend=backend)
    dest = partition.bin_of(pos)
    dest[esc] = -1
    src = np.repeat(np.arange(len(rows)), Q)
    keep = dest >= 0
    src, dest = src[keep], dest[keep]
    if partition.growing:
        cols = np.union1d(partition.col_ids(), dest)
        dest = np.searchsorted(cols, dest)
    else:
        cols = np.arange(partition.m)
    counts = sp.csr_matrix((np.ones(len(src), dtype=np.int64), (src, dest)),
                           shape=(len(rows), len(cols)))
    counts.sum_duplicates()
    counts.sort_indices()
    return UlamMatrix(float(t), float(flow.tau), int(Q), np.asarray(rows, dtype=np.int64),
                      np.asarray(cols, dtype=np.int64), counts)


def restrict(matrix: UlamMatrix, rows) -> UlamMatrix:
    """Growing-domain view of a full matrix, seeded on ``rows``.

    Row ``i`` of a full matrix depends only on the test points of bin ``i``,
    so this equals building the matrix with only ``rows`` seeded. Columns are
    ``rows`` together with every bin the seeded mass reaches.
    """
    rows = np.asarray(rows, dtype=np.int64)
    pos = np.searchsorted(matrix.row_index, rows)
    if np.any(pos >= len(matrix.row_index)) or np.any(matrix.row_index[pos] != rows):
        raise ValueError("requested rows are not present in the matrix")
    sub = matrix.counts[pos].tocsr()
    hit = matrix.col_index[sub.indices]
    cols = np.union1d(rows, hit)
    counts = sp.csr_matrix((sub.data.copy(), np.searchsorted(cols, hit), sub.indptr.copy()),
                           shape=(len(rows), len(cols)))
    counts.sort_indices()
    return UlamMatrix(matrix.t, matrix.tau, matrix.Q, rows, cols, counts)


def growing_chain(matrices, rows):
    """Chain full-domain matrices into a growing-domain sequence from ``rows``."""
    out = []
    current = np.asarray(rows, dtype=np.int64)
    for mat in matrices:
        r = restrict(mat, current)
        out.append(r)
        current = r.col_index
    return out


def _body_lines(matrix: UlamMatrix):
    r, c, w = matrix.triplets()
    return [f"{i} {j} {x:.12g}" for i, j, x in zip(r, c, w)]


def write_ulam(path, matrix: UlamMatrix, config_hash: str | None = None) -> None:
    """Write a matrix as ``ULAM m m' Q t tau`` followed by sorted triplets.

    Index lists and a SHA-256 of the triplet lines go in ``#`` comment lines.
    """
    m, mp = matrix.shape
    body = _body_lines(matrix)
    digest = hashlib.sha256("\n".join(body).encode()).hexdigest()
    lines = []
    if config_hash:
        lines.append(f"# config_hash {config_hash}")
    lines.append(f"ULAM {m} {mp} {matrix.Q} {matrix.t!r} {matrix.tau!r}")
    lines.append("# row_index " + " ".join(map(str, matrix.row_index)))
    lines.append("# col_index " + " ".join(map(str, matrix.col_index)))
    lines.extend(body)
    lines.append(f"# sha256 {digest}")
    Path(path).write_text("\n".join(lines) + "\n")


class MatrixFileError(ValueError):
    """Malformed, truncated or corrupted matrix file."""


def read_ulam(path) -> UlamMatrix:
    path = Path(path)
    header = None
    row_index = col_index = digest = None
    body = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "row_index":
                row_index = np.array(parts[1:], dtype=np.int64)
            elif parts and parts[0] == "col_index":
                col_index = np.array(parts[1:], dtype=np.int64)
            elif parts and parts[0] == "sha256":
                digest = parts[1]
            continue
        if header is None:
            header = line.split()
            continue
        body.append(line)
    if header is None or len(header) != 6 or header[0] != "ULAM":
        raise MatrixFileError(f"{path}: missing 'ULAM m m' Q t tau' header")
    try:
        m, mp, Q = int(header[1]), int(header[2]), int(header[3])
        t, tau = float(header[4]), float(header[5])
    except ValueError as exc:
        raise MatrixFileError(f"{path}: bad header values") from exc
    if digest is None and row_index is not None:
        # index comments and the trailer are written together
        raise MatrixFileError(f"{path}: checksum line missing; file is truncated")
    if digest is not None:
        got = hashlib.sha256("\n".join(body).encode()).hexdigest()
        if got != digest:
            raise MatrixFileError(f"{path}: checksum mismatch")
    if row_index is None:
        row_index = np.arange(m)
    if col_index is None:
        col_index = np.arange(mp)
    if len(row_index) != m or len(col_index) != mp:
        raise MatrixFileError(f"{path}: index lists do not match shape ({m}, {mp})")
    if body:
        try:
            trip = np.array([ln.split() for ln in body], dtype=float)
        except ValueError as exc:
            raise MatrixFileError(f"{path}: malformed triplet line") from exc
        if trip.ndim != 2 or trip.shape[1] != 3:
            raise MatrixFileError(f"{path}: triplet lines need three fields")
    else:
        trip = np.zeros((0, 3))
    r = trip[:, 0].astype(np.int64)
    c = trip[:, 1].astype(np.int64)
    k = np.rint(trip[:, 2] * Q)
    if np.any(np.abs(trip[:, 2] * Q - k) > 1e-6) or np.any(k < 1):
        raise MatrixFileError(f"{path}: weights are not positive multiples of 1/Q")
    if len(r) and (r.min() < 0 or r.max() >= m or c.min() < 0 or c.max() >= mp):
        raise MatrixFileError(f"{path}: index out of range for shape ({m}, {mp})")
    counts = sp.csr_matrix((k.astype(np.int64), (r, c)), shape=(m, mp))
    counts.sum_duplicates()
    counts.sort_indices()
    if np.any(np.asarray(counts.sum(axis=1)).ravel() > Q):
        raise MatrixFileError(f"{path}: a row sum exceeds 1")
    return UlamMatrix(t, tau, Q, row_index, col_index, counts)
