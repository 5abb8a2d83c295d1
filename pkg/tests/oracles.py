"""Independent reference computations used as test oracles.

Deliberately naive: nothing here shares code with the package.
"""

import itertools

import numpy as np


def cofactor_det(M) -> float:
    """Determinant by Laplace expansion along the first row."""
    M = [list(map(float, row)) for row in M]
    k = len(M)
    if k == 0:
        return 1.0
    if k == 1:
        return M[0][0]
    total = 0.0
    for c in range(k):
        sub = [row[:c] + row[c + 1:] for row in M[1:]]
        total += (-1) ** c * M[0][c] * cofactor_det(sub)
    return total


def leibniz_det(M) -> float:
    """Determinant as a signed sum over permutations."""
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    total = 0.0
    for perm in itertools.permutations(range(k)):
        inv = sum(1 for a in range(k) for b in range(a + 1, k) if perm[a] > perm[b])
        total += (-1) ** inv * np.prod([M[r, perm[r]] for r in range(k)])
    return float(total)


def is_pd_sylvester(S) -> bool:
    """All leading principal minors positive (Sylvester's criterion)."""
    S = np.asarray(S, dtype=float)
    return all(cofactor_det(S[:r, :r]) > 0 for r in range(1, S.shape[0] + 1))


def min_eig_bisection(S, tol: float = 1e-13) -> float:
    """Smallest eigenvalue of symmetric ``S`` as ``sup{lam : S - lam I is PD}``."""
    S = np.asarray(S, dtype=float)
    k = S.shape[0]
    bound = float(np.sqrt(np.sum(S ** 2))) + 1.0
    lo, hi = -bound, bound
    eye = np.eye(k)
    while hi - lo > tol * max(1.0, bound):
        mid = 0.5 * (lo + hi)
        if is_pd_sylvester(S - mid * eye):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def T_by_linear_solve(a) -> np.ndarray:
    """Solve the cancellation system for ``T`` directly, normalized by ``T^{11} = 1``.

    Unknown ``T[l, i] = T^{li}`` sits at index ``l * n + i``.  Equations:
    ``sum_i a^{ij} T^{li} = 0`` for ``j != l``, ``sum_i a^{ij} T^{ji} - sum_i a^{i1} T^{1i} = 0``
    for ``j >= 2``, and ``T^{11} = 1``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    rows, rhs = [], []
    for j in range(n):
        for l in range(n):
            if j == l:
                continue
            r = np.zeros(n * n)
            for i in range(n):
                r[l * n + i] += a[i, j]
            rows.append(r)
            rhs.append(0.0)
    for j in range(1, n):
        r = np.zeros(n * n)
        for i in range(n):
            r[j * n + i] += a[i, j]
            r[0 * n + i] -= a[i, 0]
        rows.append(r)
        rhs.append(0.0)
    r = np.zeros(n * n)
    r[0] = 1.0
    rows.append(r)
    rhs.append(1.0)
    sol = np.linalg.solve(np.array(rows), np.array(rhs))
    return sol.reshape(n, n)


def q1_element_matrix(hx: float, hy: float) -> np.ndarray:
    """Exact Laplace stiffness of a bilinear rectangle, nodes (0,0),(1,0),(0,1),(1,1)."""
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    K = np.zeros((4, 4))
    # int dphi_a/dx dphi_b/dx over the rectangle, with 1D integrals in closed form
    for a, (ax, ay) in enumerate(corners):
        for b, (bx, by) in enumerate(corners):
            sx = 1.0 if ax == bx else -1.0
            sy = 1.0 if ay == by else -1.0
            mass_y = hy / 3 if ay == by else hy / 6
            mass_x = hx / 3 if ax == bx else hx / 6
            K[a, b] = sx / hx * mass_y + sy / hy * mass_x
    return K
