"""Pairing singular values across neighbouring windows into mode paths.

Two trackers: :func:`track_by_values` extracts minimum-cost paths through the
layered graph of singular values one at a time; :func:`track_by_vectors`
greedily matches one-step-evolved left singular vectors.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .ulam import restrict


def edge_weight(s_a, s_b):
    """Plot distance between ``(k, s_a)`` and ``(k+1, s_b)``."""
    return math.sqrt((s_a - s_b) ** 2 + 1.0)


@dataclass
class TrackedPaths:
    """Mode paths over window starts.

    ``ranks[p, k]`` is the 0-based rank occupied by path ``p`` in window ``k``;
    paths are ordered by mean value, largest first.
    """

    method: str
    t0: np.ndarray
    ranks: np.ndarray
    values: np.ndarray
    signs: np.ndarray
    costs: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.ranks.shape[0]

    def rank_of(self, path: int, k: int) -> int:
        return int(self.ranks[path, k])

    def crossings(self):
        """``(k, path_a, path_b)`` for each adjacent window pair where two paths swap order."""
        out = []
        for k in range(self.ranks.shape[1] - 1):
            for a in range(self.N):
                for b in range(a + 1, self.N):
                    before = self.ranks[a, k] - self.ranks[b, k]
                    after = self.ranks[a, k + 1] - self.ranks[b, k + 1]
                    if before * after < 0:
                        out.append((k, a, b))
        return out


def _values(svds):
    N = svds[0].N
    if any(s.N != N for s in svds):
        raise ValueError("every window must carry the same number of singular values")
    return np.array([s.s for s in svds]), np.array([s.t0 for s in svds])


def _sorted(method, t0, ranks, values, signs, costs=(), flagged=()):
    means = values.mean(axis=1)
    order = np.argsort(-means, kind="stable")
    return TrackedPaths(method, t0, ranks[order], values[order], signs[order],
                        list(costs), list(flagged))


def extract_paths(S):
    """Successive minimum-cost source-to-sink paths through a layered graph.

    ``S`` is ``(K, N)``: node ``(k, j)`` carries value ``S[k, j]``. A virtual
    source feeds every node of layer 0 and every node of the last layer drains
    to a virtual sink, both at zero cost. Each extracted path removes its
    vertices and their edges. Ties resolve to the lowest rank.

    Returns
    -------
    paths : list of int arrays
        Rank sequences in extraction order.
    costs : list of float
    """
    S = np.asarray(S, dtype=float)
    K, N = S.shape
    alive = np.ones((K, N), dtype=bool)
    paths, costs = [], []
    for _ in range(N):
        dist = np.full((K, N), np.inf)
        pred = np.full((K, N), -1, dtype=np.int64)
        done = np.zeros((K, N), dtype=bool)
        heap = []
        for j in range(N):
            if alive[0, j]:
                dist[0, j] = 0.0
                heap.append((0.0, 0, j))
        heapq.heapify(heap)
        best_end, best = -1, np.inf
        while heap:
            d, k, j = heapq.heappop(heap)
            if done[k, j]:
                continue
            done[k, j] = True
            if k == K - 1:
                # sink edge: first last-layer node settled is the cheapest
                if d < best:
                    best, best_end = d, j
                continue
            for jj in range(N):
                if not alive[k + 1, jj] or done[k + 1, jj]:
                    continue
                nd = d + edge_weight(S[k, j], S[k + 1, jj])
                if nd < dist[k + 1, jj]:
                    dist[k + 1, jj] = nd
                    pred[k + 1, jj] = j
                    heapq.heappush(heap, (nd, k + 1, jj))
        if best_end < 0:
            break
        path = np.empty(K, dtype=np.int64)
        path[-1] = best_end
        for k in range(K - 1, 0, -1):
            path[k - 1] = pred[k, path[k]]
        alive[np.arange(K), path] = False
        paths.append(path)
        costs.append(best)
    return paths, costs


def track_by_values(svds) -> TrackedPaths:
    """Track modes by minimum total change in singular value."""
    S, t0 = _values(svds)
    paths, costs = extract_paths(S)
    ranks = np.array(paths)
    K = len(t0)
    values = S[np.arange(K)[None, :], ranks]
    signs = np.ones_like(ranks)
    return _sorted("values", t0, ranks, values, signs, costs)


def _on_index(vec, idx, target_idx):
    """Restrict ``vec`` (over bin ids ``idx``) to ``target_idx`` ids, zero elsewhere."""
    if len(idx) == len(target_idx) and np.array_equal(idx, target_idx):
        return vec
    out = np.zeros(len(target_idx))
    common, ia, ib = np.intersect1d(idx, target_idx, return_indices=True)
    out[ib] = vec[ia]
    return out


def pair_greedy(D):
    """Greedy matching on a distance matrix, smallest entry first.

    Returns ``match`` with ``match[a] = b``; ties go to the lowest ``a`` then
    lowest ``b``.
    """
    D = np.array(D, dtype=float)
    n = D.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    for _ in range(n):
        a, b = np.unravel_index(int(np.argmin(D)), D.shape)
        match[a] = b
        D[a, :] = np.inf
        D[:, b] = np.inf
    return match


def vector_distances(W, Unext):
    """``D[a, b] = min(||w_a - u_b||, ||w_a + u_b||)`` and the better sign (+1 aligned)."""
    minus = np.linalg.norm(W[:, :, None] - Unext[:, None, :], axis=0)
    plus = np.linalg.norm(W[:, :, None] + Unext[:, None, :], axis=0)
    sign = np.where(minus <= plus, 1, -1)
    return np.minimum(minus, plus), sign


def track_by_vectors(svds, matrices, seed_rows=None) -> TrackedPaths:
    """Track modes by greedy matching of one-step-evolved left vectors.

    ``matrices[k]`` is the one-step matrix at the start of window ``k``. In
    growing-domain mode (``seed_rows`` given) the matrices are restricted to
    the seeded rows and evolved vectors are compared on the next window's
    row index.
    """
    S, t0 = _values(svds)
    K, N = S.shape
    if len(matrices) < K - 1:
        raise ValueError("need a one-step matrix for every consecutive window pair")
    ranks = np.empty((N, K), dtype=np.int64)
    signs = np.ones((N, K), dtype=np.int64)
    ranks[:, 0] = np.arange(N)
    flagged = []
    for k in range(K - 1):
        cur, nxt = svds[k], svds[k + 1]
        P = matrices[k]
        if seed_rows is not None:
            P = restrict(P, cur.row_index)
        if not np.array_equal(P.row_index, cur.row_index):
            raise ValueError(f"matrix {k} rows do not match window {k} left vectors")
        W = P.P.T @ cur.U
        W = np.column_stack([_on_index(W[:, j], P.col_index, nxt.row_index) for j in range(N)])
        norms = np.linalg.norm(W, axis=0)
        if np.any(norms == 0):
            flagged.append(k)
            W = np.column_stack([_on_index(cur.U[:, j], cur.row_index, nxt.row_index)
                                 for j in range(N)])
            norms = np.linalg.norm(W, axis=0)
        W = W / np.where(norms > 0, norms, 1.0)
        D, sign = vector_distances(W, nxt.U)
        match = pair_greedy(D)
        ranks[:, k + 1] = match[ranks[:, k]]
        signs[:, k + 1] = sign[ranks[:, k], ranks[:, k + 1]]
    values = S[np.arange(K)[None, :], ranks]
    return _sorted("vectors", t0, ranks, values, signs, flagged=flagged)


def write_paths(path, paths: TrackedPaths, config_hash: str | None = None) -> None:
    """CSV ``method,mode,k,rank,value,sign`` with 1-based mode and rank."""
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "mode", "k", "rank", "value", "sign"])
        for p in range(paths.N):
            for k in range(paths.ranks.shape[1]):
                w.writerow([paths.method, p + 1, repr(float(paths.t0[k])), int(paths.ranks[p, k]) + 1,
                            f"{paths.values[p, k]:.17g}", int(paths.signs[p, k])])


def read_paths(path) -> TrackedPaths:
    with open(path) as fh:
        rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
    if not rows:
        raise ValueError(f"{path}: no tracked paths")
    method = rows[0]["method"]
    modes = sorted({int(r["mode"]) for r in rows})
    t0 = sorted({float(r["k"]) for r in rows})
    col = {t: i for i, t in enumerate(t0)}
    N, K = len(modes), len(t0)
    ranks = np.zeros((N, K), dtype=np.int64)
    values = np.zeros((N, K))
    signs = np.ones((N, K), dtype=np.int64)
    for r in rows:
        p, k = int(r["mode"]) - 1, col[float(r["k"])]
        ranks[p, k] = int(r["rank"]) - 1
        values[p, k] = float(r["value"])
        signs[p, k] = int(r["sign"])
    return TrackedPaths(method, np.array(t0), ranks, values, signs)
