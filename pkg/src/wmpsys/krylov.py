"""Linear solvers for the assembled systems.

Sparse storage is ``scipy.sparse.csr_matrix`` with sorted, de-duplicated
column indices.  Systems are nonsymmetric in general (drift and zeroth
order coupling), hence BiCGStab rather than CG.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import splu

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000

__all__ = ["SolverError", "BreakdownError", "SingularError", "SolveStats",
           "as_csr", "solve_bicgstab", "solve_dense_lu", "solve_auto", "DENSE_LIMIT"]


class SolverError(RuntimeError):
    def __init__(self, message: str, x=None, residual: float = float("nan")):
        super().__init__(message)
        self.x = x
        self.residual = residual


class BreakdownError(SolverError):
    pass


class SingularError(SolverError):
    pass


@dataclass
class SolveStats:
    path: str
    iterations: int
    residual: float

    def as_dict(self) -> dict:
        return {"path": self.path, "iterations": self.iterations, "residual": self.residual}


def as_csr(A) -> sparse.csr_matrix:
    A = sparse.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def solve_bicgstab(A, b, tol: float = 1e-10, maxit: int | None = None):
    """Jacobi-preconditioned BiCGStab with zero initial guess and shadow ``b``.

    Stops when ``||b - A x|| <= tol * ||b||``.  Raises
    :class:`BreakdownError` on a vanishing inner product or diagonal entry
    and :class:`SolverError` when ``maxit`` is exhausted; both carry the
    best iterate seen.
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError("A must be square and match b")
    maxit = 10 * n if maxit is None else int(maxit)
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise BreakdownError("zero diagonal entry; Jacobi preconditioner undefined",
                             np.zeros(n), 1.0)
    dinv = 1.0 / diag
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, SolveStats("bicgstab", 0, 0.0)
    target = tol * bnorm
    r = b.copy()
    rhat = b.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    best_x, best_res = x.copy(), 1.0
    tiny = np.finfo(float).tiny
    for it in range(1, maxit + 1):
        rho_new = float(rhat @ r)
        if abs(rho_new) <= tiny:
            raise BreakdownError("rho vanished", best_x, best_res)
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        y = dinv * p
        v = A @ y
        denom = float(rhat @ v)
        if abs(denom) <= tiny:
            raise BreakdownError("rhat . v vanished", best_x, best_res)
        alpha = rho_new / denom
        x_half = x + alpha * y
        s = r - alpha * v
        snorm = float(np.linalg.norm(s))
        if snorm <= target:
            return x_half, SolveStats("bicgstab", it, snorm / bnorm)
        z = dinv * s
        t = A @ z
        tt = float(t @ t)
        if tt <= tiny:
            raise BreakdownError("t vanished", x_half, snorm / bnorm)
        omega = float(t @ s) / tt
        if omega == 0.0:
            raise BreakdownError("omega vanished", x_half, snorm / bnorm)
        x = x_half + omega * z
        r = s - omega * t
        rho = rho_new
        rnorm = float(np.linalg.norm(r))
        if rnorm / bnorm < best_res:
            best_x, best_res = x.copy(), rnorm / bnorm
        if rnorm <= target:
            return x, SolveStats("bicgstab", it, rnorm / bnorm)
    raise SolverError(f"no convergence in {maxit} iterations", best_x, best_res)


def solve_dense_lu(A, b):
    """Partial-pivoting LU solve; raises :class:`SingularError` on a tiny pivot."""
    Ad = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = Ad.shape[0]
    if Ad.shape != (n, n) or b.shape != (n,):
        raise ValueError("A must be square and match b")
    scale = float(np.max(np.abs(Ad))) if Ad.size else 0.0
    if scale == 0.0:
        raise SingularError("zero matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(Ad, check_finite=True)
    if np.min(np.abs(np.diag(lu))) <= n * np.finfo(float).eps * scale:
        raise SingularError("numerically singular pivot")
    return scipy.linalg.lu_solve((lu, piv), b)


def solve_auto(A, b, tol: float = 1e-10, maxit: int | None = None,
               dense_limit: int = DENSE_LIMIT):
    """Dense LU up to ``dense_limit`` unknowns, BiCGStab above.

    If BiCGStab fails a sparse direct factorization takes over; the path
    actually taken is recorded in the returned stats.
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n <= dense_limit:
        x = solve_dense_lu(A, b)
        res = float(np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), np.finfo(float).tiny))
        return x, SolveStats("dense_lu", 0, res)
    try:
        return solve_bicgstab(A, b, tol, maxit)
    except SolverError as exc:
        logger.warning("BiCGStab failed (%s); falling back to sparse LU", exc)
        x = splu(A.tocsc()).solve(b)
        res = float(np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), np.finfo(float).tiny))
        return x, SolveStats("bicgstab->sparse_lu", 0, res)
