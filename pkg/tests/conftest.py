import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wmpsys.exprlang import parse_expression  # noqa: E402
from wmpsys.sysmodel import Box, IsotropicSpec, LowerOrderData, example6_build, zero_lower  # noqa: E402

EXAMPLE_B = {"b": [[1.0, 0.5], [0.0, 1.0]], "G": [[2.0, 1.0], [1.0, 2.0]]}
PI = "3.141592653589793"


def grid(values, m):
    """Parse a nested list of numbers or strings into fields."""
    if isinstance(values, (list, tuple)):
        return tuple(grid(v, m) for v in values)
    return parse_expression(values if isinstance(values, str) else repr(float(values)), m)


def lower(n, m, f=None, g=None, C=None, D=None, theta=None, nu=1.0):
    base = zero_lower(n, m, theta=theta, nu=nu)
    return LowerOrderData(
        C=grid(C, m) if C is not None else base.C,
        D=grid(D, m) if D is not None else base.D,
        f=grid(f, m) if f is not None else base.f,
        g=grid(g, m) if g is not None else base.g,
        theta=base.theta, nu=nu)


def unit_box(m):
    return Box((0.0,) * m, (1.0,) * m)


def example_b_spec(f=None, g=None):
    b = grid(EXAMPLE_B["b"], 2)
    G = grid(EXAMPLE_B["G"], 2)
    return example6_build(b, G, lower(2, 2, f=f, g=g), unit_box(2)), (b, G)


def laplace_spec(m=2, f=None, g=None):
    return IsotropicSpec(1, m, grid([[1.0]], m), lower(1, m, f=f, g=g), unit_box(m))


def random_isotropic(rng, n, m=2, floor=0.2):
    """Random spatially varying ``a`` with ``lambda_min(sym a) >= floor`` everywhere.

    ``a(x) = C + s(x) S`` with ``|s| <= 1`` and ``sym C >= (floor + |sym S|_2) I``.
    """
    S = rng.uniform(-0.3, 0.3, (n, n))
    sS = 0.5 * (S + S.T)
    shift = floor + float(np.max(np.abs(np.linalg.eigvalsh(sS)))) + 0.05
    G = rng.uniform(-1, 1, (n, n))
    K = rng.uniform(-1.5, 1.5, (n, n))
    C = G @ G.T / n + shift * np.eye(n) + (K - K.T) / 2
    k1, k2, ph = rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0, 6)
    phase = f"sin({float(k1)!r}*x1 + {float(k2)!r}*x2 + {float(ph)!r})"
    a = [[f"{float(C[i, j])!r} + ({float(S[i, j])!r})*{phase}" for j in range(n)] for i in range(n)]
    return IsotropicSpec(n, m, grid(a, m), zero_lower(n, m), unit_box(m))


def write_config(tmp_path, cfg, name="job.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def example_b_config():
    return {
        "kind": "example6", "n": 2, "m": 2, "domain": [[0, 1], [0, 1]],
        "b": [["1", "0.5"], ["0", "1"]], "g_pq": [["2", "1"], ["1", "2"]],
        "f": ["1", "1"], "g": ["0", "0"], "mesh": {"cells": 8},
        "audit": {"levels": [8, 16]},
    }


@pytest.fixture
def laplace_config():
    return {"kind": "isotropic", "n": 1, "m": 2, "a": [["1"]], "g": ["x1"],
            "mesh": {"cells": 8}, "audit": {"levels": [4, 8, 16]}}


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
