"""Problem data and the algebraic objects built from the coefficients.

Index conventions
-----------------
Coefficient arrays are stored in "equation-first" order: ``a[i, j]`` is
``a^{ij}`` (equation ``i``, unknown ``j``) and ``a_pq[i, j, p, q]`` is
``a^{ij}_{pq}``.  The displayed matrices put ``a^{ji}`` in row ``i``,
column ``j``::

    A[r, c]       = a^{cr}
    M_pq[r, c]    = a^{cr}_{pq}

Minors and cofactors are taken by *position* in these matrices: the
``(i, j)`` minor of ``A`` deletes row ``i`` and column ``j``.  With this
reading the closed forms

    T^{ji} = (-1)^{i+j} det B^{ji} / det B
    E^{ij} = f_pq / L_pq * sum_l h^{lj} v^{li}_pq

are exact solutions of their defining linear systems for non-symmetric
coefficients too (checked against direct solves in the test-suite).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .densecore import determinant, minor_det
from .exprlang import CoefficientField, DerivedField, parse_expression

__all__ = [
    "Box", "LowerOrderData", "IsotropicSpec", "AnisotropicSpec",
    "CofactorBundle", "PointBlockBundle", "HSolve",
    "SingularMatrixError", "SpecError",
    "assemble_A_B", "test_matrix_T", "residual_system22",
    "principal_values", "point_blocks", "solve_E", "build_VFM",
    "example6_build", "constant_field", "zero_lower",
]

SINGULAR_RTOL = 1e-14


class SpecError(ValueError):
    """Inconsistent problem data."""


class SingularMatrixError(ArithmeticError):
    def __init__(self, message: str, point=None):
        if point is not None:
            message = f"{message} at point {tuple(float(v) for v in point)}"
        super().__init__(message)
        self.point = None if point is None else tuple(float(v) for v in point)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise SpecError("box bounds must have matching, non-zero length")
        if any(not b > a for a, b in zip(lo, hi)):
            raise SpecError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, point, tol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= np.subtract(self.lo, tol)) and np.all(p <= np.add(self.hi, tol)))


def constant_field(value: float | str, dim: int) -> CoefficientField:
    return parse_expression(str(value), dim)


def _values(fields, pts) -> np.ndarray:
    """Evaluate a nested list of fields at ``pts``; result has the list shape last-but-N."""
    arr = np.asarray(fields, dtype=object)
    out = np.empty((pts.shape[0],) + arr.shape)
    for idx in np.ndindex(arr.shape):
        out[(slice(None),) + idx] = arr[idx].values(pts)
    return out


@dataclass(frozen=True)
class LowerOrderData:
    """Lower-order data ``C^{ij}``, ``D^i``, right-hand side and boundary data.

    ``C[i][j][p]`` is component ``p`` of ``C^{ij}``; ``D[i][k]`` is component
    ``k`` of ``D^i`` so that ``D^i . y = sum_k D[i][k] y^k``.
    """

    C: tuple
    D: tuple
    f: tuple
    g: tuple
    theta: float
    nu: float = 1.0

    def check(self, n: int, m: int):
        if np.shape(np.asarray(self.C, dtype=object)) != (n, n, m):
            raise SpecError(f"C must be an {n}x{n}x{m} grid")
        if np.shape(np.asarray(self.D, dtype=object)) != (n, n):
            raise SpecError(f"D must be an {n}x{n} grid")
        if len(self.f) != n or len(self.g) != n:
            raise SpecError(f"f and g must have {n} entries")
        if not self.theta > m:
            raise SpecError(f"theta must exceed the space dimension m={m}, got {self.theta}")
        if not self.nu > 0:
            raise SpecError("nu must be positive")
        for fld in _flat(self.C) + _flat(self.D) + list(self.f) + list(self.g):
            if fld.dim != m:
                raise SpecError(f"field {fld.source!r} has dim {fld.dim}, expected {m}")

    def C_values(self, pts):
        return _values(self.C, pts)

    def D_values(self, pts):
        return _values(self.D, pts)

    def f_values(self, pts):
        return _values(list(self.f), pts)

    def g_values(self, pts):
        return _values(list(self.g), pts)


def _same_field(a, b) -> bool:
    if a is b:
        return True
    ta, tb = getattr(a, "tree", None), getattr(b, "tree", None)
    return ta is not None and ta == tb


def _flat(grid) -> list:
    return list(np.asarray(grid, dtype=object).ravel())


def zero_lower(n: int, m: int, theta: float | None = None, nu: float = 1.0,
               f=None, g=None) -> LowerOrderData:
    """Lower-order data with ``C = D = 0``; ``f`` and ``g`` default to zero."""
    zero = constant_field(0, m)
    C = tuple(tuple(tuple(zero for _ in range(m)) for _ in range(n)) for _ in range(n))
    D = tuple(tuple(zero for _ in range(n)) for _ in range(n))
    f = tuple(f) if f is not None else tuple(zero for _ in range(n))
    g = tuple(g) if g is not None else tuple(zero for _ in range(n))
    return LowerOrderData(C, D, f, g, theta if theta is not None else m + 2.0, nu)


@dataclass(frozen=True)
class IsotropicSpec:
    """System with scalar principal coefficients ``a^{ij}``."""

    n: int
    m: int
    a: tuple
    lower: LowerOrderData
    domain: Box
    kind = "isotropic"

    def __post_init__(self):
        if self.n < 1 or self.m not in (1, 2, 3):
            raise SpecError("need n >= 1 and m in {1, 2, 3}")
        if np.shape(np.asarray(self.a, dtype=object)) != (self.n, self.n):
            raise SpecError(f"a must be an {self.n}x{self.n} grid")
        if self.domain.dim != self.m:
            raise SpecError("domain dimension does not match m")
        for fld in _flat(self.a):
            if fld.dim != self.m:
                raise SpecError(f"field {fld.source!r} has dim {fld.dim}, expected {self.m}")
        self.lower.check(self.n, self.m)

    def a_values(self, pts) -> np.ndarray:
        """``(N, n, n)`` array with ``[:, i, j] = a^{ij}``."""
        return _values(self.a, pts)

    def principal_values(self, pts) -> np.ndarray:
        a = self.a_values(pts)
        eye = np.eye(self.m)
        return a[:, :, :, None, None] * eye


@dataclass(frozen=True)
class AnisotropicSpec:
    """System with matrix-valued principal coefficients ``a^{ij}_{pq}``.

    Only ``p <= q`` is stored; ``a^{ij}_{qp}`` is the same field.  When the
    optional weights ``h`` are present only ``i <= j`` is stored and
    ``h^{11}`` is the constant 1.  ``f_pq`` optionally fixes the scalars of
    the cofactor construction; when absent :func:`solve_E` normalizes with
    ``f_11 = 1``.
    """

    n: int
    m: int
    a_upper: dict
    lower: LowerOrderData
    domain: Box
    h_upper: Optional[dict] = None
    f_pq: Optional[tuple] = None
    kind = "anisotropic"

    @classmethod
    def from_grid(cls, n: int, m: int, a_pq, lower: LowerOrderData, domain: Box,
                  h=None, f_pq=None) -> "AnisotropicSpec":
        """Build from full ``n x n x m x m`` (and ``n x n``) grids.

        Raises :class:`SpecError` if the grids are not symmetric in ``(p, q)``
        (respectively ``(i, j)``), judged by parsed expression tree.
        """
        arr = np.asarray(a_pq, dtype=object)
        if arr.shape != (n, n, m, m):
            raise SpecError(f"a_pq must be an {n}x{n}x{m}x{m} grid")
        upper = {}
        for i in range(n):
            for j in range(n):
                for p in range(m):
                    for q in range(p, m):
                        if not _same_field(arr[i, j, p, q], arr[i, j, q, p]):
                            raise SpecError(
                                f"a_pq[{i}][{j}] is not symmetric in (p, q): "
                                f"{arr[i, j, p, q].source!r} vs {arr[i, j, q, p].source!r}")
                        upper[i, j, p, q] = arr[i, j, p, q]
        h_upper = None
        if h is not None:
            harr = np.asarray(h, dtype=object)
            if harr.shape != (n, n):
                raise SpecError(f"h must be an {n}x{n} grid")
            h_upper = {}
            for i in range(n):
                for j in range(i, n):
                    if not _same_field(harr[i, j], harr[j, i]):
                        raise SpecError(f"h is not symmetric at ({i}, {j})")
                    h_upper[i, j] = harr[i, j]
        return cls(n, m, upper, lower, domain, h_upper,
                   None if f_pq is None else tuple(tuple(r) for r in f_pq))

    def __post_init__(self):
        if self.n < 1 or self.m not in (1, 2, 3):
            raise SpecError("need n >= 1 and m in {1, 2, 3}")
        if self.domain.dim != self.m:
            raise SpecError("domain dimension does not match m")
        for i in range(self.n):
            for j in range(self.n):
                for p in range(self.m):
                    for q in range(p, self.m):
                        if (i, j, p, q) not in self.a_upper:
                            raise SpecError(f"missing a_pq entry {(i, j, p, q)}")
                        if self.a_upper[i, j, p, q].dim != self.m:
                            raise SpecError("a_pq field dimension does not match m")
        if self.h_upper is not None:
            one = self.h_upper.get((0, 0))
            if one is None or not (one.is_constant and np.all(one.values(np.zeros((1, self.m))) == 1.0)):
                raise SpecError("h^{11} must be the constant 1")
            for i in range(self.n):
                for j in range(i, self.n):
                    if (i, j) not in self.h_upper:
                        raise SpecError(f"missing h entry {(i, j)}")
        if self.f_pq is not None and np.shape(np.asarray(self.f_pq, dtype=object)) != (self.m, self.m):
            raise SpecError(f"f_pq must be an {self.m}x{self.m} grid")
        self.lower.check(self.n, self.m)

    def a_field(self, i: int, j: int, p: int, q: int):
        return self.a_upper[(i, j, p, q) if p <= q else (i, j, q, p)]

    def principal_values(self, pts) -> np.ndarray:
        """``(N, n, n, m, m)`` array with ``[:, i, j, p, q] = a^{ij}_{pq}``."""
        n, m = self.n, self.m
        out = np.empty((pts.shape[0], n, n, m, m))
        for (i, j, p, q), fld in self.a_upper.items():
            v = fld.values(pts)
            out[:, i, j, p, q] = v
            out[:, i, j, q, p] = v
        return out

    @property
    def has_h(self) -> bool:
        return self.h_upper is not None

    def h_values(self, pts) -> np.ndarray:
        """``(N, n, n)`` array of the weights ``h^{ij}``."""
        if self.h_upper is None:
            raise SpecError("spec carries no h weights")
        out = np.empty((pts.shape[0], self.n, self.n))
        for (i, j), fld in self.h_upper.items():
            v = fld.values(pts)
            out[:, i, j] = v
            out[:, j, i] = v
        return out

    def f_pq_values(self, pts) -> Optional[np.ndarray]:
        if self.f_pq is None:
            return None
        return _values(self.f_pq, pts)


def principal_values(spec, pts) -> np.ndarray:
    """Principal coefficients of either spec kind as ``(N, n, n, m, m)``."""
    return spec.principal_values(np.asarray(pts, dtype=float))


# -- isotropic construction -----------------------------------------------------

@dataclass
class CofactorBundle:
    A_mat: np.ndarray
    B_mat: np.ndarray
    detA: float
    detB: float
    T: np.ndarray


def assemble_A_B(a_at_x):
    """Matrices ``A`` (order n) and ``B`` (order n-1) from ``a[i, j] = a^{ij}``.

    Works on stacks.  For ``n = 1``, ``B`` is the empty matrix, whose
    determinant is 1.
    """
    a = np.asarray(a_at_x, dtype=float)
    A = np.swapaxes(a, -1, -2).copy()
    B = A[..., 1:, 1:].copy()
    return A, B


def _sign(i: int, j: int) -> float:
    return -1.0 if (i + j) % 2 else 1.0


def test_matrix_T(a_at_x, point=None) -> CofactorBundle:
    """Weight matrix ``T`` making the cross terms of the energy identity vanish.

    ``T[j, i] = T^{ji} = (-1)^{i+j} det B^{ji} / det B`` where ``B^{ji}`` is
    the positional minor of ``A``.  Accepts a single ``n x n`` array or a
    stack ``(N, n, n)``; stacked inputs give array-valued ``detA``/``detB``.

    Raises
    ------
    SingularMatrixError
        ``|det B|`` is below ``1e-14 * max|a|^(n-1)`` (at the first such point).
    """
    a = np.asarray(a_at_x, dtype=float)
    n = a.shape[-1]
    A, B = assemble_A_B(a)
    detA = determinant(A)
    detB = determinant(B)
    scale = np.max(np.abs(a), axis=(-1, -2)) ** (n - 1)
    bad = np.abs(detB) <= SINGULAR_RTOL * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        where = None
        if point is not None:
            pts = np.atleast_2d(point)
            where = pts[int(np.flatnonzero(np.atleast_1d(bad))[0])] if pts.shape[0] > 1 else pts[0]
        raise SingularMatrixError("det B vanishes", where)
    T = np.empty_like(A)
    if n == 1:
        T[..., 0, 0] = 1.0
    else:
        for j in range(n):
            for i in range(n):
                T[..., j, i] = _sign(i, j) * minor_det(A, j, i) / detB
    return CofactorBundle(A, B, detA, detB, T)


test_matrix_T.__test__ = False  # keep pytest from collecting it on import


def residual_system22(a_at_x, T) -> float:
    """Largest normalized residual of the cancellation system for ``T``.

    The system requires ``sum_i a^{ij} T^{li} = 0`` for ``j != l`` and
    ``sum_i a^{ij} T^{ji} = sum_i a^{i1} T^{1i}`` for ``j = 2..n``.  The
    maximum residual is divided by ``max|a| * max|T|``.
    """
    a = np.asarray(a_at_x, dtype=float)
    T = np.asarray(T, dtype=float)
    n = a.shape[-1]
    if n == 1:
        return 0.0
    R = np.einsum("...ij,...li->...jl", a, T)
    off = ~np.eye(n, dtype=bool)
    diag = np.diagonal(R, axis1=-2, axis2=-1)
    res = max(float(np.max(np.abs(R[..., off]))),
              float(np.max(np.abs(diag[..., 1:] - diag[..., :1]))))
    norm = float(np.max(np.abs(a))) * float(np.max(np.abs(T)))
    return res / norm if norm > 0 else res


# -- anisotropic construction ---------------------------------------------------

@dataclass
class PointBlockBundle:
    """Blocks ``M_pq`` (stored as ``[p, q, r, c]``), ``L_pq`` and cofactors.

    ``v[i, j, p, q]`` is the signed cofactor of the ``(i, j)`` position of
    ``M_pq`` (so ``M_pq^{-1}[i, j] = v[j, i, p, q] / L_pq``).
    """

    M_blocks: np.ndarray
    L: np.ndarray
    v: np.ndarray


def point_blocks(spec: AnisotropicSpec, x) -> PointBlockBundle:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    ap = spec.principal_values(x)[0]
    return _blocks_from_values(ap)


def _blocks_from_values(ap) -> PointBlockBundle:
    # ap[..., i, j, p, q] -> M[..., p, q, r, c] = a^{cr}_pq
    ap = np.asarray(ap, dtype=float)
    M = np.moveaxis(ap, (-4, -3), (-1, -2))
    L = determinant(M)
    n = ap.shape[-4]
    v = np.empty(ap.shape)
    if n == 1:
        v[...] = 1.0
    else:
        for i in range(n):
            for j in range(n):
                v[..., i, j, :, :] = _sign(i, j) * minor_det(M, i, j)
    return PointBlockBundle(M, L, v)


@dataclass
class HSolve:
    """Weights ``E`` and the diagnostics of their construction at points.

    Arrays carry a leading sample axis ``N``.  ``E`` has shape ``(N, n, n)``
    and is the candidate from block ``(1, 1)``; ``f_pq`` is ``(N, m, m)``.
    ``singular`` marks ``(N, m, m)`` blocks whose determinant vanishes.
    """

    E: np.ndarray
    f_pq: np.ndarray
    independence_residual: np.ndarray
    weight_identity_residual: np.ndarray
    singular: np.ndarray
    L: np.ndarray


def solve_E(spec: AnisotropicSpec, x) -> HSolve:
    """Solve ``M_pq E = f_pq H`` block by block at the points ``x``.

    With ``f_pq`` supplied by the spec every nonsingular block yields its own
    candidate and the independence residual is the largest entrywise
    deviation from the ``(1, 1)`` candidate, relative to ``max(1, max|E|)``.
    Without ``f_pq`` the normalization ``f_11 = 1`` is used, the remaining
    ``f_pq = sum_l a^{l1}_pq E^{l1}`` follow from the first column, and the
    residual is that of ``M_pq E = f_pq H`` itself.

    Raises
    ------
    SingularMatrixError
        ``M_11`` is singular at some point (no reference candidate exists).
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if not spec.has_h:
        raise SpecError("solve_E needs the weights h")
    ap = spec.principal_values(pts)
    H = spec.h_values(pts)
    blocks = _blocks_from_values(ap)
    M, L = blocks.M_blocks, blocks.L
    n, m = spec.n, spec.m
    scale = np.max(np.abs(ap), axis=(1, 2, 3, 4)) ** n
    singular = np.abs(L) <= SINGULAR_RTOL * np.maximum(scale, np.finfo(float).tiny)[:, None, None]
    if np.any(singular[:, 0, 0]):
        k = int(np.flatnonzero(singular[:, 0, 0])[0])
        raise SingularMatrixError("M_11 is singular", pts[k])

    fvals = spec.f_pq_values(pts)
    if fvals is None:
        E = np.linalg.solve(M[:, 0, 0], H)
        fvals = np.einsum("nlpq,nl->npq", ap[:, :, 0], E[:, :, 0])
        resid = _cramer_residual(M, E, fvals, H)
        indep = resid
    else:
        E = fvals[:, 0, 0, None, None] * np.linalg.solve(M[:, 0, 0], H)
        emax = np.maximum(1.0, np.max(np.abs(E), axis=(1, 2)))
        indep = np.zeros(pts.shape[0])
        for p in range(m):
            for q in range(m):
                ok = ~singular[:, p, q]
                if not np.any(ok):
                    continue
                cand = fvals[ok, p, q, None, None] * np.linalg.solve(M[ok, p, q], H[ok])
                dev = np.max(np.abs(cand - E[ok]), axis=(1, 2)) / emax[ok]
                indep[ok] = np.maximum(indep[ok], dev)
    # identity: sum_l a^{li}_pq E^{lj} = h^{ij} sum_l a^{l1}_pq E^{l1}
    lhs = np.einsum("npqil,nlj->npqij", M, E)
    rhs = H[:, None, None, :, :] * lhs[:, :, :, :1, :1]
    norm = np.maximum(1.0, np.max(np.abs(ap), axis=(1, 2, 3, 4)) * np.max(np.abs(E), axis=(1, 2)))
    ident = np.max(np.abs(lhs - rhs), axis=(1, 2, 3, 4)) / norm
    return HSolve(E, fvals, indep, ident, singular, L)


def _cramer_residual(M, E, fvals, H):
    lhs = np.einsum("npqil,nlj->npqij", M, E)
    dev = np.abs(lhs - fvals[:, :, :, None, None] * H[:, None, None, :, :])
    return np.max(dev, axis=(1, 2, 3, 4)) / np.maximum(1.0, np.max(np.abs(E), axis=(1, 2)))


def build_VFM(spec: AnisotropicSpec, E, x):
    """Matrices ``V`` (order n), ``F`` (order m) and ``M`` (order nm) at points.

    ``F_pq = sum_l a^{l1}_pq E^{l1}`` and ``M`` is the block matrix whose
    ``(i, j)`` block is ``h^{ij} F``.  Accepts a single point or a stack.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    E = np.asarray(E, dtype=float).reshape(pts.shape[0], spec.n, spec.n)
    V = spec.h_values(pts)
    ap = spec.principal_values(pts)
    F = np.einsum("nlpq,nl->npq", ap[:, :, 0, :, :], E[:, :, 0])
    Mbig = np.einsum("nij,npq->nipjq", V, F).reshape(pts.shape[0], spec.n * spec.m, spec.n * spec.m)
    return V, F, Mbig


# -- the product family ----------------------------------------------------------

def example6_build(b, g, lower: Optional[LowerOrderData] = None, domain: Optional[Box] = None
                   ) -> AnisotropicSpec:
    """Product-coefficient system ``a^{ij}_pq = b^{ij} g_pq``.

    The weights are ``h = I`` and ``f_pq = L_pq / g_pq^(n-1)`` (computed
    from the materialized blocks).  No validity checks happen here.
    """
    barr = np.asarray(b, dtype=object)
    garr = np.asarray(g, dtype=object)
    n, m = barr.shape[0], garr.shape[0]
    if barr.shape != (n, n) or garr.shape != (m, m):
        raise SpecError("b must be n x n and g must be m x m")
    if domain is None:
        domain = Box((0.0,) * m, (1.0,) * m)
    if lower is None:
        lower = zero_lower(n, m)
    a_pq = [[[[parse_expression(f"({barr[i, j].source})*({garr[p, q].source})", m)
               for q in range(m)] for p in range(m)] for j in range(n)] for i in range(n)]
    one, zero = constant_field(1, m), constant_field(0, m)
    h = [[one if i == j else zero for j in range(n)] for i in range(n)]
    spec = AnisotropicSpec.from_grid(n, m, a_pq, lower, domain, h=h)

    cache = {}

    def blocks_at(pts):
        # the m*m weight fields are evaluated on the same points in turn
        key = (pts.shape, pts.tobytes())
        if key not in cache:
            cache.clear()
            cache[key] = spec.principal_values(pts)
        return cache[key]

    def make_f(p, q):
        def f(pts):
            ap = blocks_at(np.asarray(pts, dtype=float))
            L = determinant(np.swapaxes(ap[:, :, :, p, q], -1, -2))
            return L / garr[p, q].values(pts) ** (n - 1)
        return DerivedField(f, m, f"L_{p + 1}{q + 1}/g_{p + 1}{q + 1}^{n - 1}")

    f_pq = tuple(tuple(make_f(p, q) for q in range(m)) for p in range(m))
    return AnisotropicSpec(n, m, spec.a_upper, lower, domain, spec.h_upper, f_pq)
