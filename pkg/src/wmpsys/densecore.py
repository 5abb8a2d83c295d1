"""Small dense linear algebra on stacks of matrices.

Every routine accepts either a single ``(k, k)`` matrix or a stack
``(..., k, k)`` and works on the trailing two axes.  The matrices involved
are tiny (order <= n*m <= 9 or so) but are evaluated at thousands of sample
points, so the loops run over matrix indices and vectorize over the stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exprlang import SampleSet

DEFAULT_MARGIN = 1e-9

__all__ = [
    "determinant", "minor_det", "symmetrize", "min_eigenvalue_sym",
    "jacobi_eigenvalues", "PDReport", "sampled_uniform_pd", "DEFAULT_MARGIN",
]


def determinant(M) -> np.ndarray | float:
    """Determinant by LU factorization with partial pivoting.

    Singular matrices come out as (numerically) zero rather than raising.
    The empty ``0 x 0`` matrix has determinant 1.
    """
    U = np.array(M, dtype=float, copy=True)
    if U.ndim < 2 or U.shape[-1] != U.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {U.shape}")
    k = U.shape[-1]
    stack = U.shape[:-2]
    U = U.reshape((int(np.prod(stack, dtype=int)), k, k))
    det = np.ones(U.shape[0])
    rows = np.arange(U.shape[0])
    for c in range(k):
        piv = c + np.argmax(np.abs(U[:, c:, c]), axis=1)
        swap = piv != c
        if np.any(swap):
            r = rows[swap]
            top = U[r, c, :].copy()
            U[r, c, :] = U[r, piv[swap], :]
            U[r, piv[swap], :] = top
            det[swap] = -det[swap]
        pivot = U[:, c, c]
        det *= pivot
        if c + 1 < k:
            nz = pivot != 0.0
            factors = np.zeros((U.shape[0], k - c - 1))
            factors[nz] = U[nz, c + 1:, c] / pivot[nz, None]
            U[:, c + 1:, c:] -= factors[:, :, None] * U[:, c, None, c:]
    det = det.reshape(stack)
    return float(det) if det.ndim == 0 else det


def minor_det(M, row: int, col: int):
    """Determinant of ``M`` with ``row`` and ``col`` deleted (unsigned minor)."""
    A = np.asarray(M, dtype=float)
    k = A.shape[-1]
    if k < 2:
        raise ValueError("minors need a matrix of order >= 2")
    if not (0 <= row < k and 0 <= col < k):
        raise IndexError(f"minor index ({row}, {col}) out of range for order {k}")
    sub = np.delete(np.delete(A, row, axis=-2), col, axis=-1)
    return determinant(sub)


def symmetrize(M) -> np.ndarray:
    """``(M + M^T) / 2`` on the trailing axes."""
    A = np.asarray(M, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def jacobi_eigenvalues(S, tol: float = 1e-13, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of symmetric matrices by cyclic Jacobi rotations.

    Sweeps visit the pairs ``(p, q)``, ``p < q``, in row-major order and stop
    once every off-diagonal entry is below ``tol * max|S|`` for every matrix
    of the stack.  Returns the (unsorted) diagonal, shape ``(..., k)``.
    """
    A = np.array(S, dtype=float, copy=True)
    k = A.shape[-1]
    stack = A.shape[:-2]
    A = A.reshape((int(np.prod(stack, dtype=int)), k, k))
    scale = np.max(np.abs(A), axis=(1, 2), initial=0.0)
    thresh = tol * scale
    offdiag = ~np.eye(k, dtype=bool)
    for _ in range(max_sweeps):
        if k < 2 or np.all(np.max(np.abs(A[:, offdiag]), axis=1) <= thresh):
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[:, p, q]
                active = np.abs(apq) > thresh
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t[theta == 0.0] = 1.0
                t[~active] = 0.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = A[:, :, p].copy()
                colq = A[:, :, q].copy()
                A[:, :, p] = c[:, None] * colp - s[:, None] * colq
                A[:, :, q] = s[:, None] * colp + c[:, None] * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :].copy()
                A[:, p, :] = c[:, None] * rowp - s[:, None] * rowq
                A[:, q, :] = s[:, None] * rowp + c[:, None] * rowq
                A[active, p, q] = 0.0
                A[active, q, p] = 0.0
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.diagonal(A, axis1=1, axis2=2).reshape(stack + (k,))


def min_eigenvalue_sym(S):
    """Smallest eigenvalue of a symmetric matrix (or of each in a stack).

    Raises ``ValueError`` if the input is not symmetric to within
    ``1e-12 * max(1, max|S|)``.
    """
    A = np.asarray(S, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    if A.size:
        asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(A)))):
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    lam = np.min(jacobi_eigenvalues(A), axis=-1)
    return float(lam) if lam.ndim == 0 else lam


@dataclass
class PDReport:
    """Outcome of a sampled uniform positive-definiteness test.

    ``min_lambda`` is the smallest eigenvalue of the symmetrized matrix over
    all samples, attained at ``worst_point``; ``passed`` iff it reaches
    ``margin``.
    """

    min_lambda: float
    worst_point: tuple
    passed: bool
    margin: float


def sampled_uniform_pd(field: Callable[[np.ndarray], np.ndarray], samples: SampleSet,
                       margin: float = DEFAULT_MARGIN) -> PDReport:
    """Certify ``field(x) >= margin * I`` at every sample point.

    ``field`` maps an ``(N, m)`` array of points to an ``(N, k, k)`` stack of
    matrices.  Each matrix is symmetrized before its smallest eigenvalue is
    taken, so this tests the quadratic form ``xi^T field(x) xi``.
    """
    mats = np.asarray(field(samples.points), dtype=float)
    if mats.ndim != 3 or mats.shape[0] != samples.points.shape[0]:
        raise ValueError(f"matrix field returned shape {mats.shape}")
    lam = min_eigenvalue_sym(symmetrize(mats))
    lam = np.atleast_1d(lam)
    w = int(np.argmin(lam))
    lo = float(lam[w])
    return PDReport(lo, tuple(float(v) for v in samples.points[w]), lo >= margin, margin)
