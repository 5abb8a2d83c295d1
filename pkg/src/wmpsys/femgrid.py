"""Q1 Galerkin discretization of coupled systems on boxes.

Unknowns are ordered equation-major: global index ``i * n_nodes + P`` for
component ``i`` at node ``P``.  Nodes are numbered lexicographically with
``x1`` running fastest.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .exprlang import ExprError
from .sysmodel import Box

__all__ = ["Mesh", "AssembledSystem", "DiscreteSolution", "AssemblyError",
           "build_mesh", "assemble", "apply_dirichlet", "solve_system",
           "q1_basis", "gauss_rule", "interpolate"]


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Uniform tensor mesh of segments (m=1) or quadrilaterals (m=2)."""

    m: int
    cells: tuple
    lo: tuple
    hi: tuple
    nodes: np.ndarray
    boundary: np.ndarray
    elements: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.cells)

    @property
    def h(self) -> float:
        return float(np.max(self.spacing))


def build_mesh(domain: Box, cells) -> Mesh:
    """Uniform mesh of ``domain`` with ``cells`` cells per axis (int or sequence).

    >>> mesh = build_mesh(Box((0.0,), (1.0,)), 4)
    >>> mesh.n_nodes, mesh.boundary.tolist()
    (5, [0, 4])
    """
    m = domain.dim
    if m not in (1, 2):
        raise ValueError("meshes are available for m = 1 and m = 2 only")
    cells = (int(cells),) * m if np.isscalar(cells) else tuple(int(c) for c in cells)
    if len(cells) != m or min(cells) < 2:
        raise ValueError(f"need at least 2 cells per axis, got {cells}")
    axes = [np.linspace(domain.lo[d], domain.hi[d], cells[d] + 1) for d in range(m)]
    grid = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel(order="F") for g in grid], axis=1)
    idx = np.stack(np.meshgrid(*[np.arange(c + 1) for c in cells], indexing="ij"), axis=-1)
    idx = idx.reshape(-1, m, order="F")
    on_face = np.zeros(nodes.shape[0], dtype=bool)
    for d in range(m):
        on_face |= (idx[:, d] == 0) | (idx[:, d] == cells[d])
    boundary = np.flatnonzero(on_face)

    strides = np.cumprod((1,) + tuple(c + 1 for c in cells[:-1]))
    origin = np.stack(np.meshgrid(*[np.arange(c) for c in cells], indexing="ij"), axis=-1)
    origin = origin.reshape(-1, m, order="F")
    base = origin @ strides
    offsets = np.array([np.dot(bits, strides) for bits in _local_bits(m)])
    elements = base[:, None] + offsets[None, :]
    return Mesh(m, cells, domain.lo, domain.hi, nodes, boundary, elements)


def _local_bits(m: int) -> list:
    # local node k has offset bit d = (k >> d) & 1
    return [tuple((k >> d) & 1 for d in range(m)) for k in range(2 ** m)]


def gauss_rule(order: int, m: int):
    """Tensor Gauss-Legendre rule on ``[0, 1]^m``: points ``(Q, m)``, weights ``(Q,)``."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1) / 2
    w = w / 2
    pts = np.array(list(itertools.product(x, repeat=m)))[:, ::-1]
    wts = np.array([np.prod(c) for c in itertools.product(w, repeat=m)])
    return pts, wts


def q1_basis(ref_pts: np.ndarray):
    """Q1 shape functions and reference gradients at points of ``[0, 1]^m``.

    Returns ``phi (Q, nb)`` and ``dphi (Q, nb, m)``.
    """
    Q, m = ref_pts.shape
    bits = np.array(_local_bits(m))
    fac = np.where(bits[None, :, :] == 1, ref_pts[:, None, :], 1 - ref_pts[:, None, :])
    phi = np.prod(fac, axis=2)
    dphi = np.empty((Q, bits.shape[0], m))
    sign = np.where(bits == 1, 1.0, -1.0)
    for d in range(m):
        others = np.delete(fac, d, axis=2)
        dphi[:, :, d] = sign[None, :, d] * np.prod(others, axis=2)
    return phi, dphi


@dataclass
class AssembledSystem:
    """Global matrix and vectors; ``lift`` holds the Dirichlet values."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    lift: np.ndarray
    free: np.ndarray
    n: int
    mesh: Mesh


@dataclass
class DiscreteSolution:
    values: np.ndarray  # (n, n_nodes)
    mesh: Mesh
    stats: dict = field(default_factory=dict)

    def at_nodes(self) -> np.ndarray:
        return self.values.T


def _quad_points(mesh: Mesh, order: int):
    ref, wts = gauss_rule(order, mesh.m)
    h = mesh.spacing
    corner = mesh.nodes[mesh.elements[:, 0]]
    phys = corner[:, None, :] + ref[None, :, :] * h[None, None, :]
    return ref, wts * np.prod(h), phys


def _eval_at(func, phys, where: str):
    E, Q, m = phys.shape
    try:
        return func(phys.reshape(E * Q, m))
    except ExprError as exc:
        pt = getattr(exc, "point", None)
        elem = None
        if pt is not None:
            hit = np.flatnonzero(np.all(np.isclose(phys.reshape(E * Q, m), pt), axis=1))
            elem = int(hit[0] // Q) if hit.size else None
        raise AssemblyError(f"{where}: {exc} (element {elem})") from exc


def assemble(spec, mesh: Mesh, quad_order: int = 2) -> AssembledSystem:
    """Assemble the weak form of the system on ``mesh``.

    Entry ``((i, P), (j, Q))`` collects
    ``sum_pq int a^{ij}_pq d_p phi_Q d_q phi_P + int (C^{ij} . grad phi_Q) phi_P
    + int D^i_j phi_Q phi_P``; the load entry ``(i, P)`` is ``int f^i phi_P``.
    Coefficients are sampled at the quadrature points.
    """
    if spec.m != mesh.m:
        raise ValueError("spec and mesh dimensions differ")
    n, m = spec.n, spec.m
    ref, wts, phys = _quad_points(mesh, quad_order)
    E, Q = phys.shape[:2]
    phi, dphi = q1_basis(ref)
    grad = dphi / mesh.spacing[None, None, :]  # (Q, nb, m)

    ap = _eval_at(spec.principal_values, phys, "principal part").reshape(E, Q, n, n, m, m)
    C = _eval_at(spec.lower.C_values, phys, "C").reshape(E, Q, n, n, m)
    D = _eval_at(spec.lower.D_values, phys, "D").reshape(E, Q, n, n)
    f = _eval_at(spec.lower.f_values, phys, "f").reshape(E, Q, n)

    local = np.einsum("eqijpr,qbp,qar,q->eiajb", ap, grad, grad, wts)
    local += np.einsum("eqijp,qbp,qa,q->eiajb", C, grad, phi, wts)
    local += np.einsum("eqij,qb,qa,q->eiajb", D, phi, phi, wts)
    load = np.einsum("eqi,qa,q->eia", f, phi, wts)

    N = mesh.n_nodes
    nb = mesh.elements.shape[1]
    conn = mesh.elements
    comp = np.arange(n)
    rows = (comp[None, :, None] * N + conn[:, None, :])  # (E, n, nb)
    R = np.broadcast_to(rows[:, :, :, None, None], (E, n, nb, n, nb))
    Cc = np.broadcast_to(rows[:, None, None, :, :], (E, n, nb, n, nb))
    K = sparse.coo_matrix((local.ravel(), (R.ravel(), Cc.ravel())), shape=(n * N, n * N)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    rhs = np.zeros(n * N)
    np.add.at(rhs, rows.ravel(), load.ravel())
    bmask = np.zeros(N, dtype=bool)
    bmask[mesh.boundary] = True
    free = np.flatnonzero(~np.tile(bmask, n))
    return AssembledSystem(K, rhs, np.zeros(n * N), free, n, mesh)


def interpolate(fields: Sequence, mesh: Mesh) -> np.ndarray:
    """Nodal interpolant of ``n`` fields, shape ``(n, n_nodes)``."""
    return np.stack([fld.values(mesh.nodes) for fld in fields])


def apply_dirichlet(system: AssembledSystem, g: Sequence, mesh: Mesh) -> AssembledSystem:
    """Fix boundary unknowns to the nodal interpolant of ``g``.

    Boundary columns are moved to the right-hand side and boundary rows
    become identity rows, so symmetric free blocks stay symmetric.
    """
    n, N = system.n, mesh.n_nodes
    bvals = np.zeros((n, N))
    gb = np.stack([fld.values(mesh.nodes[mesh.boundary]) for fld in g])
    bvals[:, mesh.boundary] = gb
    lift = bvals.ravel()
    is_free = np.zeros(n * N)
    is_free[system.free] = 1.0
    Pf = sparse.diags(is_free)
    Pb = sparse.diags(1.0 - is_free)
    K = system.matrix
    rhs = is_free * (system.rhs - K @ lift) + lift
    Kd = (Pf @ K @ Pf + Pb).tocsr()
    Kd.eliminate_zeros()
    Kd.sort_indices()
    return AssembledSystem(Kd, rhs, lift, system.free, n, mesh)


def solve_system(spec, mesh: Mesh, quad_order: int = 2, solver: Optional[dict] = None
                 ) -> DiscreteSolution:
    """Assemble, impose boundary data and solve; see :func:`krylov.solve_auto`."""
    from .krylov import solve_auto

    system = apply_dirichlet(assemble(spec, mesh, quad_order), spec.lower.g, mesh)
    x, stats = solve_auto(system.matrix, system.rhs, **(solver or {}))
    values = x.reshape(spec.n, mesh.n_nodes).copy()
    bidx = np.concatenate([i * mesh.n_nodes + mesh.boundary for i in range(spec.n)])
    values.ravel()[bidx] = system.lift[bidx]
    if not np.all(np.isfinite(values)):
        raise AssemblyError("non-finite values in the discrete solution")
    return DiscreteSolution(values, mesh, stats.as_dict())
