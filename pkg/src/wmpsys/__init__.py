"""Certification of boundedness hypotheses for strongly coupled elliptic systems.

Submodules: ``exprlang`` (coefficient expressions), ``densecore`` (small dense
linear algebra), ``sysmodel`` (problem data and cofactor constructions),
``hypocheck`` (sampled hypothesis checks), ``femgrid`` (Q1 Galerkin
discretization), ``krylov`` (linear solvers), ``auditor`` (solution audits)
and ``cli``.
"""

__version__ = "0.1.0"
