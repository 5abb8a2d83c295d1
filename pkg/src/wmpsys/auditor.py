"""Desk-scale audits of discrete solutions.

The boundedness theorems come with constants that cannot be computed, so
the audits look at properties a bounded solution family must have:
sup-norm stability under refinement, convergence to manufactured
solutions, and exact homogeneity of the discrete solution map.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exprlang import DerivedField
from .femgrid import DiscreteSolution, build_mesh, gauss_rule, q1_basis, solve_system

__all__ = ["AuditReport", "sup_norms", "h1_seminorm", "refinement_study",
           "manufactured_forcing", "manufactured_convergence", "linearity_check",
           "CSV_COLUMNS", "to_csv"]

CSV_COLUMNS = ["level", "h", "cells", "sup_interior", "L2_error", "H1_error",
               "rate_L2", "rate_H1"]

FD_STEP = 1e-6
FD_STEP_SECOND = 1e-3


@dataclass
class AuditReport:
    sup_interior: float = math.nan
    sup_boundary: float = math.nan
    h1_seminorm: float = math.nan
    levels: list = field(default_factory=list)
    relative_change: Optional[float] = None
    rates_L2: list = field(default_factory=list)
    rates_H1: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sup_interior": self.sup_interior,
            "sup_boundary": self.sup_boundary,
            "h1_seminorm": self.h1_seminorm,
            "relative_change": self.relative_change,
            "levels": self.levels,
            "rates_L2": self.rates_L2,
            "rates_H1": self.rates_H1,
        }


def sup_norms(sol: DiscreteSolution) -> AuditReport:
    """Maxima of the pointwise Euclidean norm over all nodes and boundary nodes.

    Q1 functions attain their extrema at nodes, so these are exact sup norms
    of the discrete solution.
    """
    mag = np.sqrt(np.sum(sol.values ** 2, axis=0))
    return AuditReport(sup_interior=float(np.max(mag)),
                       sup_boundary=float(np.max(mag[sol.mesh.boundary])),
                       h1_seminorm=h1_seminorm(sol))


def _element_gradients(sol: DiscreteSolution, order: int = 2):
    mesh = sol.mesh
    ref, wts = gauss_rule(order, mesh.m)
    phi, dphi = q1_basis(ref)
    grad = dphi / mesh.spacing[None, None, :]
    local = sol.values[:, mesh.elements]  # (n, E, nb)
    vals = np.einsum("neb,qb->neq", local, phi)
    grads = np.einsum("neb,qbd->neqd", local, grad)
    return ref, wts * np.prod(mesh.spacing), vals, grads


def h1_seminorm(sol: DiscreteSolution) -> float:
    _, wts, _, grads = _element_gradients(sol)
    return float(math.sqrt(np.einsum("neqd,neqd,q->", grads, grads, wts)))


def refinement_study(spec, levels: Sequence[int], solver: Optional[dict] = None) -> AuditReport:
    """Solve on each mesh in ``levels`` (cells per axis) and track ``sup |y_h|``.

    ``relative_change`` compares the last two levels relative to the last.
    Solver failures are recorded in the level row instead of aborting.
    """
    levels = [int(c) for c in levels]
    if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("need at least two increasing levels")
    report = AuditReport()
    sups = []
    for k, cells in enumerate(levels):
        mesh = build_mesh(spec.domain, cells)
        row = {"level": k, "cells": cells, "h": mesh.h}
        try:
            sol = solve_system(spec, mesh, solver=solver)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            row.update(error=str(exc), sup_interior=math.nan)
            sups.append(math.nan)
            report.levels.append(row)
            continue
        s = sup_norms(sol)
        row.update(sup_interior=s.sup_interior, sup_boundary=s.sup_boundary,
                   h1_seminorm=s.h1_seminorm, solver=sol.stats)
        sups.append(s.sup_interior)
        report.levels.append(row)
        report.sup_interior, report.sup_boundary, report.h1_seminorm = \
            s.sup_interior, s.sup_boundary, s.h1_seminorm
    a, b = sups[-2], sups[-1]
    report.relative_change = abs(b - a) / abs(b) if b != 0 else abs(b - a)
    return report


# -- manufactured solutions ----------------------------------------------------

def _fd_first(fld, pts, d, h=FD_STEP):
    e = np.zeros(pts.shape[1])
    e[d] = h
    return (fld.values(pts + e) - fld.values(pts - e)) / (2 * h)


def _fd_second(fld, pts, p, q, h=FD_STEP_SECOND):
    """Fourth-order central stencils for d^2 / dx_p dx_q."""
    m = pts.shape[1]
    ep = np.zeros(m)
    ep[p] = h
    if p == q:
        return (-fld.values(pts + 2 * ep) + 16 * fld.values(pts + ep) - 30 * fld.values(pts)
                + 16 * fld.values(pts - ep) - fld.values(pts - 2 * ep)) / (12 * h * h)
    eq = np.zeros(m)
    eq[q] = h

    def dq(x):
        return (-fld.values(x + 2 * eq) + 8 * fld.values(x + eq)
                - 8 * fld.values(x - eq) + fld.values(x - 2 * eq)) / (12 * h)
    return (-dq(pts + 2 * ep) + 8 * dq(pts + ep) - 8 * dq(pts - ep) + dq(pts - 2 * ep)) / (12 * h)


def manufactured_forcing(spec, exact: Sequence) -> tuple:
    """Right-hand sides ``f^i`` for which ``exact`` solves the strong form.

    Applies ``-sum_pq d_q(a^{ij}_pq d_p y^j) + sum_j C^{ij} . grad y^j + D^i . y``
    with finite-difference derivatives: central differences of step 1e-6
    for first derivatives (of the data and of ``exact``) and fourth-order
    stencils of step 1e-3 for second derivatives of ``exact``.
    """
    n, m = spec.n, spec.m
    coeff = [[[[_ScalarOf(spec.principal_values, (i, j, p, q), m) for q in range(m)]
               for p in range(m)] for j in range(n)] for i in range(n)]

    def make(i):
        def f(pts):
            ap = spec.principal_values(pts)
            C = spec.lower.C_values(pts)
            D = spec.lower.D_values(pts)
            out = np.zeros(pts.shape[0])
            for j in range(n):
                grad = np.stack([_fd_first(exact[j], pts, d) for d in range(m)], axis=1)
                for p in range(m):
                    for q in range(m):
                        da = _fd_first(coeff[i][j][p][q], pts, q)
                        out -= da * grad[:, p] + ap[:, i, j, p, q] * _fd_second(exact[j], pts, p, q)
                out += np.sum(C[:, i, j, :] * grad, axis=1)
                out += D[:, i, j] * exact[j].values(pts)
            return out
        return DerivedField(f, m, f"manufactured f^{i + 1}")

    return tuple(make(i) for i in range(n))


class _ScalarOf:
    def __init__(self, func, index, dim):
        self.func, self.index, self.dim = func, index, dim

    def values(self, pts):
        return self.func(pts)[(slice(None),) + self.index]


def _errors(sol: DiscreteSolution, exact: Sequence, order: int = 4):
    mesh = sol.mesh
    ref, wts, vals, grads = _element_gradients(sol, order)
    corner = mesh.nodes[mesh.elements[:, 0]]
    phys = (corner[:, None, :] + ref[None, :, :] * mesh.spacing[None, None, :])
    E, Q, m = phys.shape
    flat = phys.reshape(E * Q, m)
    l2 = semi = 0.0
    for j, ex in enumerate(exact):
        ev = ex.values(flat).reshape(E, Q)
        eg = np.stack([_fd_first(ex, flat, d) for d in range(m)], axis=-1).reshape(E, Q, m)
        l2 += float(np.einsum("eq,eq,q->", vals[j] - ev, vals[j] - ev, wts))
        diff = grads[j] - eg
        semi += float(np.einsum("eqd,eqd,q->", diff, diff, wts))
    return math.sqrt(l2), math.sqrt(l2 + semi)


def _rate(e_coarse, e_fine, h_coarse, h_fine):
    if e_coarse > 0 and e_fine > 0:
        return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)
    return math.nan


def manufactured_convergence(spec, exact: Sequence, levels: Sequence[int],
                             solver: Optional[dict] = None) -> AuditReport:
    """Convergence table for a manufactured solution.

    The spec's ``f`` and ``g`` are replaced: ``f`` by
    :func:`manufactured_forcing` and ``g`` by ``exact`` itself.  Errors are
    the L2 norm and the full H1 norm of ``y_h - exact``, by 4-point Gauss
    quadrature per axis.
    """
    f = manufactured_forcing(spec, exact)
    mspec = replace(spec, lower=replace(spec.lower, f=tuple(f), g=tuple(exact)))
    report = AuditReport()
    for k, cells in enumerate(int(c) for c in levels):
        mesh = build_mesh(spec.domain, cells)
        sol = solve_system(mspec, mesh, solver=solver)
        l2, h1 = _errors(sol, exact)
        s = sup_norms(sol)
        row = {"level": k, "cells": cells, "h": mesh.h, "sup_interior": s.sup_interior,
               "L2_error": l2, "H1_error": h1, "rate_L2": None, "rate_H1": None,
               "solver": sol.stats}
        if report.levels:
            prev = report.levels[-1]
            row["rate_L2"] = _rate(prev["L2_error"], l2, prev["h"], mesh.h)
            row["rate_H1"] = _rate(prev["H1_error"], h1, prev["h"], mesh.h)
            report.rates_L2.append(row["rate_L2"])
            report.rates_H1.append(row["rate_H1"])
        report.levels.append(row)
        report.sup_interior, report.sup_boundary, report.h1_seminorm = \
            s.sup_interior, s.sup_boundary, s.h1_seminorm
    return report


def linearity_check(spec, alpha: float = 2.0, cells=16, solver: Optional[dict] = None) -> float:
    """``max |solve(alpha f, alpha g) - alpha solve(f, g)|`` over all nodes."""
    mesh = build_mesh(spec.domain, cells)
    base = solve_system(spec, mesh, solver=solver)

    def scaled(fld):
        return DerivedField(lambda p: alpha * fld.values(p), fld.dim, f"{alpha}*({fld.source})")

    lower = replace(spec.lower, f=tuple(scaled(x) for x in spec.lower.f),
                    g=tuple(scaled(x) for x in spec.lower.g))
    other = solve_system(replace(spec, lower=lower), mesh, solver=solver)
    return float(np.max(np.abs(other.values - alpha * base.values)))


def to_csv(report: AuditReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in report.levels:
        writer.writerow({k: _csv_value(row.get(k)) for k in CSV_COLUMNS})
    return buf.getvalue()


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return v
