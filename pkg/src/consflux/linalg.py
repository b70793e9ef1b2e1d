"""Sparse matrices and Krylov solvers.

Storage is delegated to :mod:`scipy.sparse` CSR; the solvers (CG,
SSOR-preconditioned CG, Jacobi-preconditioned BiCGStab) are implemented
here so iteration counts are under our control.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    """Krylov solver settings.

    Parameters
    ----------
    tolerance : float
        Relative residual target ``||b - Ax|| / ||b||``.
    max_iterations : int
    preconditioner : {None, "ssor", "jacobi"}
    relaxation : float
        SSOR relaxation parameter, only used with ``"ssor"``.
    method : {"iterative", "direct"}
        ``"direct"`` swaps the Krylov method for a sparse LU factorization;
        useful for long time loops on a fixed matrix.
    """

    tolerance: float = 1e-10
    max_iterations: int = 10000
    preconditioner: str | None = None
    relaxation: float = 1.5
    method: str = "iterative"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.preconditioner not in (None, "ssor", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0.0 < self.relaxation < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.method not in ("iterative", "direct"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Square sparse matrix in CSR layout with sorted, unique column indices."""

    csr: sp.csr_matrix
    symmetric: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def indptr(self):
        return self.csr.indptr

    @property
    def indices(self):
        return self.csr.indices

    @property
    def data(self):
        return self.csr.data

    def __matmul__(self, x):
        return self.csr @ x

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def is_symmetric(self, rtol=1e-12) -> bool:
        diff = abs(self.csr - self.csr.T)
        scale = abs(self.csr).max() if self.csr.nnz else 0.0
        return diff.nnz == 0 or diff.max() <= rtol * scale

    def equals(self, other: "SparseMatrix") -> bool:
        """Bitwise equality of structure and values."""
        return (
            self.csr.shape == other.csr.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )


def from_scipy(mat, symmetric=False) -> SparseMatrix:
    csr = sp.csr_matrix(mat, dtype=float)
    csr.sum_duplicates()
    csr.sort_indices()
    if csr.shape[0] != csr.shape[1]:
        raise ValueError("matrix must be square")
    return SparseMatrix(csr, symmetric)


def assemble(n: int, triplets=None, *, rows=None, cols=None, vals=None, symmetric=False) -> SparseMatrix:
    """Build an ``n x n`` matrix from ``(row, col, value)`` triplets.

    Triplets may be given as an iterable of tuples or as three parallel
    arrays via ``rows``, ``cols``, ``vals``. Duplicates are summed.
    """
    if triplets is not None:
        trip = list(triplets)
        rows = np.array([t[0] for t in trip], dtype=np.int64)
        cols = np.array([t[1] for t in trip], dtype=np.int64)
        vals = np.array([t[2] for t in trip], dtype=float)
    else:
        rows = np.asarray(rows if rows is not None else [], dtype=np.int64).ravel()
        cols = np.asarray(cols if cols is not None else [], dtype=np.int64).ravel()
        vals = np.asarray(vals if vals is not None else [], dtype=float).ravel()
    if n < 0:
        raise ValueError("dimension must be non-negative")
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
        raise IndexError("triplet index out of range")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return from_scipy(mat, symmetric)


def write_matrix_market(A: SparseMatrix, path) -> None:
    coo = A.csr.tocoo()
    lines = ["%%MatrixMarket matrix coordinate real general", f"{A.n} {A.n} {coo.nnz}"]
    lines += [f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(coo.row, coo.col, coo.data)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# preconditioners


def _ssor_factors(A: SparseMatrix, relaxation: float):
    key = ("ssor", relaxation)
    if key not in A._cache:
        d = A.diagonal()
        if np.any(d == 0):
            raise ZeroDivisionError("SSOR needs a nonzero diagonal")
        lower = sp.tril(A.csr, k=-1, format="csr") + sp.diags(d / relaxation)
        upper = sp.triu(A.csr, k=1, format="csr") + sp.diags(d / relaxation)
        A._cache[key] = (lower.tocsr(), upper.tocsr(), d)
    return A._cache[key]


def ssor_apply(A: SparseMatrix, relaxation: float, r: np.ndarray) -> np.ndarray:
    """Apply ``M^{-1}`` for ``M = (D/w + L) (w/(2-w)) D^{-1} (D/w + U)``."""
    if not 0.0 < relaxation < 2.0:
        raise ValueError("relaxation must lie in (0, 2)")
    lower, upper, d = _ssor_factors(A, relaxation)
    y = spla.spsolve_triangular(lower, r, lower=True)
    y = d * y * ((2.0 - relaxation) / relaxation)
    return spla.spsolve_triangular(upper, y, lower=False)


def _preconditioner(A: SparseMatrix, cfg: SolverConfig):
    if cfg.preconditioner == "ssor":
        _ssor_factors(A, cfg.relaxation)
        return lambda r: ssor_apply(A, cfg.relaxation, r)
    if cfg.preconditioner == "jacobi":
        d = A.diagonal()
        if np.any(d == 0):
            raise ZeroDivisionError("Jacobi preconditioning needs a nonzero diagonal")
        inv = 1.0 / d
        return lambda r: inv * r
    return lambda r: r


# ---------------------------------------------------------------------------
# solvers


def cg_solve(A: SparseMatrix, b, cfg: SolverConfig = SolverConfig(), x0=None, callback=None, project=None):
    """Preconditioned conjugate gradients.

    Returns ``(x, iterations)``. ``callback(x)`` is called after every
    iteration. ``project`` is applied to residuals and preconditioned
    residuals; singular solves use it to keep the iteration out of the
    nullspace.
    Raises :class:`SolverError` on non-convergence.
    """
    b = np.asarray(b, dtype=float)
    if cfg.method == "direct":
        return _direct(A, b), 0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    P = _preconditioner(A, cfg)
    M = P if project is None else (lambda r: project(P(r)))
    proj = (lambda r: r) if project is None else project

    def true_residual():
        return proj(b - A @ x)

    r = true_residual()
    rel = np.linalg.norm(r) / bnorm
    if rel <= cfg.tolerance:
        return x, 0
    z = M(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, cfg.max_iterations + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise SolverError("CG breakdown: matrix not positive definite", rel, it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if callback is not None:
            callback(x)
        rel = np.linalg.norm(r) / bnorm
        if rel <= cfg.tolerance:
            # guard against drift of the recursive residual
            r_true = true_residual()
            if np.linalg.norm(r_true) / bnorm <= cfg.tolerance * 10:
                return x, it
            r = r_true
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("CG did not converge", rel, cfg.max_iterations)


def bicgstab_solve(A: SparseMatrix, b, cfg: SolverConfig = SolverConfig(preconditioner="jacobi"), x0=None):
    """Right-preconditioned BiCGStab for nonsymmetric systems -> ``(x, iterations)``."""
    b = np.asarray(b, dtype=float)
    if cfg.method == "direct":
        return _direct(A, b), 0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    M = _preconditioner(A, cfg)
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    if rel <= cfg.tolerance:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, cfg.max_iterations + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0:
            raise SolverError("BiCGStab breakdown (rho = 0)", rel, it)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        p_hat = M(p)
        v = A @ p_hat
        alpha = rho / (r_hat @ v)
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= cfg.tolerance:
            x += alpha * p_hat
            return x, it
        s_hat = M(s)
        t = A @ s_hat
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rel = np.linalg.norm(r) / bnorm
        if rel <= cfg.tolerance:
            return x, it
        if omega == 0.0:
            raise SolverError("BiCGStab breakdown (omega = 0)", rel, it)
    raise SolverError("BiCGStab did not converge", rel, cfg.max_iterations)


def _direct(A: SparseMatrix, b):
    if "lu" not in A._cache:
        try:
            A._cache["lu"] = spla.splu(A.csr.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
    x = A._cache["lu"].solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("sparse LU produced non-finite values")
    return x


def solve_singular_spd(A: SparseMatrix, b, cfg: SolverConfig, weights=None):
    """Solve a symmetric system whose nullspace is the constants.

    The right-hand side is projected onto the range (zero sum) and the
    solution is shifted to zero ``weights``-weighted mean. Returns
    ``(x, iterations)``.
    """
    b = np.asarray(b, dtype=float)
    b = b - b.mean()
    w = np.ones_like(b) if weights is None else np.asarray(weights, dtype=float)
    if cfg.method == "direct":
        if "pinned" not in A._cache:
            pinned = A.csr.tolil()
            pinned[0, :] = 0.0
            pinned[:, 0] = 0.0
            pinned[0, 0] = 1.0
            A._cache["pinned"] = from_scipy(pinned.tocsr())
        rhs = b.copy()
        rhs[0] = 0.0
        x, its = _direct(A._cache["pinned"], rhs), 0
    else:
        x, its = cg_solve(A, b, cfg, project=lambda z: z - z.mean())
    x = x - (w @ x) / w.sum()
    return x, its
