"""Rolling-window matrix cocycles and their leading singular triples.

A window product ``P_k P_{k+1} ... P_{k+n-1}`` is never densified for large
bin counts; it is applied factor by factor inside a Golub-Kahan-Lanczos
bidiagonalisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .ulam import UlamMatrix, growing_chain

EXPLICIT_MAX_M = 1024


class ChainError(ValueError):
    """Consecutive matrices do not share a bin index set."""


class ConvergenceError(RuntimeError):
    """Lanczos bidiagonalisation hit its iteration cap."""

    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class WindowProduct(LinearOperator):
    """``P_k ... P_{k+n-1}`` as a linear operator.

    Either holds the explicit sparse product or applies the factors in turn.
    ``row_index``/``col_index`` are the bin ids of the first matrix's rows and
    the last matrix's columns.
    """

    def __init__(self, factors, row_index, col_index, explicit=None):
        self.factors = list(factors)
        self._ft = [f.T.tocsr() for f in self.factors]
        self.row_index = np.asarray(row_index)
        self.col_index = np.asarray(col_index)
        self.explicit = explicit
        super().__init__(dtype=np.float64, shape=(len(self.row_index), len(self.col_index)))

    def _matvec(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if self.explicit is not None:
            return self.explicit @ x
        for f in reversed(self.factors):
            x = f @ x
        return x

    def _rmatvec(self, y):
        y = np.asarray(y, dtype=float).ravel()
        if self.explicit is not None:
            return self.explicit.T @ y
        for ft in self._ft:
            y = ft @ y
        return y

    def _adjoint(self):
        return _Adjoint(self)

    def evolve_rows(self, u):
        """Row-vector evolution ``u^T P_k ... P_{k+n-1}``."""
        return self._rmatvec(u)

    def todense(self):
        out = np.eye(self.shape[0]) if not self.factors else None
        for f in self.factors:
            out = f.toarray() if out is None else out @ f.toarray()
        return out


class _Adjoint(LinearOperator):
    def __init__(self, op):
        self.op = op
        super().__init__(dtype=np.float64, shape=op.shape[::-1])

    def _matvec(self, x):
        return self.op._rmatvec(x)

    def _rmatvec(self, y):
        return self.op._matvec(y)


def check_chain(matrices):
    for a, b in zip(matrices[:-1], matrices[1:]):
        if len(a.col_index) != len(b.row_index) or np.any(a.col_index != b.row_index):
            raise ChainError(
                f"matrix at t={a.t} has columns that are not the rows of the matrix at t={b.t}")


def window_product(matrices, k: int, n: int, explicit_max=EXPLICIT_MAX_M) -> WindowProduct:
    """Product of ``matrices[k:k+n]``; ``n = 0`` gives the identity.

    The product is formed explicitly when every factor has at most
    ``explicit_max`` rows and columns.
    """
    if n < 0 or k < 0 or k + n > len(matrices):
        raise IndexError(f"window [{k}, {k + n}) outside the {len(matrices)} available matrices")
    if n == 0:
        ref = matrices[k] if k < len(matrices) else matrices[k - 1]
        idx = ref.row_index if k < len(matrices) else ref.col_index
        eye = sp.identity(len(idx), format="csr")
        return WindowProduct([], idx, idx, explicit=eye)
    chain = matrices[k:k + n]
    check_chain(chain)
    factors = [m.P for m in chain]
    explicit = None
    if max(max(f.shape) for f in factors) <= explicit_max:
        explicit = factors[0]
        for f in factors[1:]:
            explicit = (explicit @ f).tocsr()
    return WindowProduct(factors, chain[0].row_index, chain[-1].col_index, explicit)


@dataclass
class WindowSVD:
    """Leading singular triples of one window product.

    ``U`` is ``(m, N)`` over ``row_index``; ``V`` is ``(m', N)`` over ``col_index``.
    """

    t0: float
    n: int
    s: np.ndarray
    U: np.ndarray
    V: np.ndarray
    row_index: np.ndarray | None = None
    col_index: np.ndarray | None = None
    residuals: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return len(self.s)

    def __post_init__(self):
        if self.row_index is None:
            self.row_index = np.arange(self.U.shape[0])
        if self.col_index is None:
            self.col_index = np.arange(self.V.shape[0])


def start_vector(m: int) -> np.ndarray:
    """Normalised all-ones vector plus a fixed aperiodic perturbation."""
    i = np.arange(m, dtype=float)
    v = 1.0 + 0.5 * np.cos(2.399963229728653 * i * (1.0 + i / (m + 1.0)))
    return v / np.linalg.norm(v)


def _extra_vector(m: int, j: int) -> np.ndarray:
    # deterministic fill-in after a Krylov breakdown
    i = np.arange(m, dtype=float)
    return np.cos(0.7548776662466927 * (i + 1.0) * (j + 1.0) + 0.3 * j)


def _orth(x, basis, count):
    if count:
        B = basis[:, :count]
        for _ in range(2):
            x = x - B @ (B.T @ x)
    return x


def truncated_svd(op, N: int, tol: float = 1e-10, max_iter: int | None = None,
                  t0: float = 0.0, n: int = 0) -> WindowSVD:
    """Top-``N`` singular triples by Golub-Kahan-Lanczos bidiagonalisation.

    Full reorthogonalisation; a Krylov breakdown is continued with a fresh
    deterministic vector so repeated singular values are found. Converged when
    every wanted Ritz residual is at most ``tol * s_1``. Left vectors are
    sign-canonicalised so their largest-magnitude entry is nonnegative.

    Parameters
    ----------
    op : LinearOperator, sparse matrix or ndarray
    N : int
    tol : float
    max_iter : int, optional
        Defaults to ``10 * N * sqrt(m)``, never above ``min(m, m')``.
    """
    A = op if isinstance(op, LinearOperator) else aslinearoperator(op)
    m, mp = A.shape
    p = min(m, mp)
    if not 1 <= N <= p:
        raise ValueError(f"need 1 <= N <= min(m, m') = {p}, got {N}")
    kmax = min(p, max_iter if max_iter is not None else int(10 * N * math.sqrt(max(m, mp))))
    kmax = max(kmax, N)

    U = np.zeros((m, kmax))
    V = np.zeros((mp, kmax + 1))
    alphas = np.zeros(kmax)
    betas = np.zeros(kmax)
    eps = np.finfo(float).eps
    extra = 0

    def fresh(size, basis, count):
        nonlocal extra
        for _ in range(8):
            x = _orth(_extra_vector(size, extra), basis, count)
            extra += 1
            nx = np.linalg.norm(x)
            if nx > 1e-8:
                return x / nx
        return None

    V[:, 0] = start_vector(mp)
    k = 0
    beta_prev = 0.0
    converged = False
    res = np.full(N, np.inf)
    s = X = Yt = None
    aug = False
    check_every = max(1, N)
    anorm = 0.0
    while k < kmax:
        w = A.matvec(V[:, k]).ravel()
        if k:
            w = w - beta_prev * U[:, k - 1]
        w = _orth(w, U, k)
        a = np.linalg.norm(w)
        anorm = max(anorm, a, beta_prev)
        if a <= max(anorm, 1.0) * 1e3 * eps * math.sqrt(m) or k >= m:
            a = 0.0
            w = fresh(m, U, k) if k < m else None
            if w is None:
                w = np.zeros(m)
        else:
            w = w / a
        U[:, k] = w
        alphas[k] = a

        r = A.rmatvec(U[:, k]).ravel() - a * V[:, k]
        r = _orth(r, V, k + 1)
        b = np.linalg.norm(r)
        anorm = max(anorm, b)
        k += 1
        last = k >= kmax
        if b <= max(anorm, 1.0) * 1e3 * eps * math.sqrt(mp):
            b = 0.0
            if k < mp and not last:
                nv = fresh(mp, V, k)
                if nv is None:
                    last = True
                else:
                    V[:, k] = nv
            else:
                last = True
        else:
            V[:, k] = r / b
        betas[k - 1] = b
        beta_prev = b

        if k >= m and b != 0.0:
            # left basis complete: A^T U_k = V_{k+1} [B_k, b e_k]^T holds exactly
            B = np.diag(alphas[:k]) + np.diag(betas[:k - 1], 1)
            X, s, Yt = np.linalg.svd(np.column_stack([B, betas[k - 1] * np.eye(k)[:, -1]]))
            res = np.zeros(N)
            aug = converged = True
            break
        if k >= N and (k % check_every == 0 or last or k >= p):
            B = np.diag(alphas[:k]) + np.diag(betas[:k - 1], 1)
            X, s, Yt = np.linalg.svd(B)
            res = np.abs(b * X[k - 1, :N])
            scale = max(s[0], np.finfo(float).tiny)
            # a breakdown only proves the current Krylov block is invariant;
            # repeated singular values may still hide outside it
            if np.all(res <= tol * scale) and (b != 0.0 or k >= p):
                converged = True
                break
        if last:
            break

    if not converged:
        raise ConvergenceError(
            f"truncated SVD did not converge in {k} iterations; "
            f"max relative residual {np.max(res) / max(s[0], 1e-300):.3e}", res)
    Uo = U[:, :k] @ X[:, :N]
    Vo = V[:, :k + 1 if aug else k] @ Yt[:N].T
    s = s[:N].copy()
    # renormalise away rounding drift; zero singular values leave V undetermined
    Uo /= np.linalg.norm(Uo, axis=0)
    nv = np.linalg.norm(Vo, axis=0)
    Vo[:, nv > 0] /= nv[nv > 0]
    for j in range(N):
        i = int(np.argmax(np.abs(Uo[:, j])))
        if Uo[i, j] < 0:
            Uo[:, j] *= -1
            Vo[:, j] *= -1
    row_index = getattr(op, "row_index", None)
    col_index = getattr(op, "col_index", None)
    return WindowSVD(t0, n, s, Uo, Vo, row_index, col_index, res[:N].copy())


def rolling_windows(matrices, t_i, t_F, n: int, N: int, seed_rows=None,
                    explicit_max=EXPLICIT_MAX_M, tol=1e-10, workers=1):
    """One :class:`WindowSVD` per window start ``t_i, t_i + tau, ..., t_F - n tau``.

    ``matrices`` must be the consecutive one-step matrices from ``t_i``. With
    ``seed_rows`` each window is re-seeded on those bins and its columns grow
    as mass spreads.
    """
    if not matrices:
        raise ValueError("no matrices")
    tau = matrices[0].tau
    steps = int(round((t_F - t_i) / tau))
    if n < 0 or n > steps:
        raise ValueError(f"window length {n} exceeds the {steps} available steps")
    if len(matrices) < steps:
        raise ValueError(f"need {steps} matrices on [t_i, t_F), have {len(matrices)}")
    if abs(matrices[0].t - t_i) > 1e-9 * max(1.0, abs(t_i)):
        raise ValueError("first matrix does not start at t_i")
    starts = range(steps - n + 1)

    def one(k):
        chain = matrices[k:k + n]
        if seed_rows is not None:
            chain = growing_chain(chain, seed_rows)
        op = window_product(chain, 0, n, explicit_max)
        return truncated_svd(op, N, tol=tol, t0=t_i + k * tau, n=n)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, starts))
    return [one(k) for k in starts]


def lyapunov_rate(svd: WindowSVD, j: int) -> float:
    """``(1/n) log s_j`` for 1-based rank ``j``; ``-inf`` when ``s_j = 0``."""
    sj = svd.s[j - 1]
    if sj <= 0:
        return -math.inf
    return math.log(sj) / svd.n


def write_svd(path, svd: WindowSVD, config_hash: str | None = None) -> None:
    """``SVD t0 n N m m'`` then ``j s_j`` lines, then U and V column by column."""
    m, mp = svd.U.shape[0], svd.V.shape[0]
    lines = []
    if config_hash:
        lines.append(f"# config_hash {config_hash}")
    lines.append(f"SVD {svd.t0!r} {svd.n} {svd.N} {m} {mp}")
    lines.append("# row_index " + " ".join(map(str, svd.row_index)))
    lines.append("# col_index " + " ".join(map(str, svd.col_index)))
    lines.extend(f"{j + 1} {x:.17g}" for j, x in enumerate(svd.s))
    for mat in (svd.U, svd.V):
        for j in range(svd.N):
            lines.extend(f"{x:.17g}" for x in mat[:, j])
    Path(path).write_text("\n".join(lines) + "\n")


def read_svd(path) -> WindowSVD:
    path = Path(path)
    header = None
    row_index = col_index = None
    vals = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if parts and parts[0] == "row_index":
                row_index = np.array(parts[1:], dtype=np.int64)
            elif parts and parts[0] == "col_index":
                col_index = np.array(parts[1:], dtype=np.int64)
            continue
        if not line.strip():
            continue
        if header is None:
            header = line.split()
        else:
            vals.append(line.split())
    if header is None or len(header) != 6 or header[0] != "SVD":
        raise ValueError(f"{path}: missing 'SVD t0 n N m m'' header")
    t0, n, N, m, mp = float(header[1]), int(header[2]), int(header[3]), int(header[4]), int(header[5])
    if len(vals) != N + N * (m + mp):
        raise ValueError(f"{path}: expected {N + N * (m + mp)} value lines, found {len(vals)}")
    s = np.array([float(v[1]) for v in vals[:N]])
    flat = np.array([float(v[0]) for v in vals[N:]])
    U = flat[:N * m].reshape(N, m).T.copy()
    V = flat[N * m:].reshape(N, mp).T.copy()
    return WindowSVD(t0, n, s, U, V, row_index, col_index)
