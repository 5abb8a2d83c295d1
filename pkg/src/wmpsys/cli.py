"""Command-line entry point: ``wmpsys {check,solve,audit,convergence}``.

Exit codes: 0 pass/completed, 1 a check failed, 2 error (structured JSON on
stderr).  The configuration format is documented in the README.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .auditor import manufactured_convergence, refinement_study, sup_norms, to_csv
from .densecore import DEFAULT_MARGIN
from .exprlang import ExprError, parse_expression
from .femgrid import build_mesh, solve_system
from .hypocheck import CheckOptions, default_samples, full_report
from .sysmodel import AnisotropicSpec, Box, IsotropicSpec, LowerOrderData, SpecError, \
    example6_build

logger = logging.getLogger(__name__)

KINDS = ("isotropic", "anisotropic", "example6")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, offset: Optional[int] = None):
        text = f"{path}: {message}"
        super().__init__(text)
        self.path = path
        self.offset = offset


@dataclass
class JobConfig:
    kind: str
    n: int
    m: int
    domain: Box
    spec: Any
    cells: tuple
    theta: float
    nu: float
    solver: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)
    exact: Optional[tuple] = None
    example6: Optional[tuple] = None
    raw: dict = field(default_factory=dict)


# -- loading -------------------------------------------------------------------

def _expr(value, path: str, m: int):
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise ConfigError(path, "expected an expression string or a number")
    text = value if isinstance(value, str) else repr(value)
    try:
        return parse_expression(text, m)
    except ExprError as exc:
        raise ConfigError(path, f"expression error: {exc}", getattr(exc, "offset", None)) from exc


def _grid(value, shape: tuple, path: str, m: int):
    if not shape:
        return _expr(value, path, m)
    if not isinstance(value, list) or len(value) != shape[0]:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise ConfigError(path, f"expected a list of length {shape[0]}, got {got}")
    return tuple(_grid(v, shape[1:], f"{path}[{k}]", m) for k, v in enumerate(value))


def _filled(value, shape, path, m, default="0"):
    if value is None:
        value = default
        for d in reversed(shape):
            value = [value] * d
    return _grid(value, shape, path, m)


def _number(obj: dict, key: str, default, path: str, kind=float):
    v = obj.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", "expected a number")
    return kind(v)


def build_config(raw: dict, overrides: Optional[dict] = None) -> JobConfig:
    """Validate a parsed JSON config and build the problem spec.

    All expressions are parsed eagerly so errors carry their JSON path.
    """
    if not isinstance(raw, dict):
        raise ConfigError("$", "config must be a JSON object")
    overrides = overrides or {}
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError("$.kind", f"must be one of {', '.join(KINDS)}")
    n = _number(raw, "n", None, "$", int)
    m = _number(raw, "m", None, "$", int)
    if n is None or n < 1:
        raise ConfigError("$.n", "required positive integer")
    if m not in (1, 2, 3):
        raise ConfigError("$.m", "must be 1, 2 or 3")
    dom = raw.get("domain", [[0.0, 1.0]] * m)
    if (not isinstance(dom, list) or len(dom) != m
            or any(not isinstance(iv, list) or len(iv) != 2 for iv in dom)):
        raise ConfigError("$.domain", f"expected {m} [lo, hi] pairs")
    try:
        domain = Box(tuple(iv[0] for iv in dom), tuple(iv[1] for iv in dom))
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError("$.domain", str(exc)) from exc

    theta = _number(raw, "theta", m + 2.0, "$")
    nu = overrides.get("nu") or _number(raw, "nu", 1.0, "$")
    lower = LowerOrderData(
        C=_filled(raw.get("C"), (n, n, m), "$.C", m),
        D=_filled(raw.get("D"), (n, n), "$.D", m),
        f=_filled(raw.get("f"), (n,), "$.f", m),
        g=_filled(raw.get("g"), (n,), "$.g", m),
        theta=theta, nu=nu)

    example6 = None
    try:
        if kind == "isotropic":
            if "a" not in raw:
                raise ConfigError("$.a", "required for kind 'isotropic'")
            spec = IsotropicSpec(n, m, _grid(raw["a"], (n, n), "$.a", m), lower, domain)
        elif kind == "anisotropic":
            if "a_pq" not in raw:
                raise ConfigError("$.a_pq", "required for kind 'anisotropic'")
            a_pq = _grid(raw["a_pq"], (n, n, m, m), "$.a_pq", m)
            h = _grid(raw["h"], (n, n), "$.h", m) if raw.get("h") is not None else None
            f_pq = _grid(raw["f_pq"], (m, m), "$.f_pq", m) if raw.get("f_pq") is not None else None
            spec = AnisotropicSpec.from_grid(n, m, a_pq, lower, domain, h=h, f_pq=f_pq)
        else:
            for key in ("b", "g_pq"):
                if key not in raw:
                    raise ConfigError(f"$.{key}", "required for kind 'example6'")
            b = _grid(raw["b"], (n, n), "$.b", m)
            g = _grid(raw["g_pq"], (m, m), "$.g_pq", m)
            spec = example6_build(b, g, lower, domain)
            example6 = (b, g)
    except SpecError as exc:
        raise ConfigError("$", str(exc)) from exc

    mesh = raw.get("mesh", {})
    cells = mesh.get("cells", 16) if isinstance(mesh, dict) else None
    if isinstance(cells, int) and not isinstance(cells, bool):
        cells = (cells,) * m
    if not isinstance(cells, (list, tuple)) or len(cells) != m or \
            any(not isinstance(c, int) or c < 2 for c in cells):
        raise ConfigError("$.mesh.cells", f"expected an integer >= 2 or {m} of them")

    solver_raw = raw.get("solver", {})
    solver = {"tol": _number(solver_raw, "tol", 1e-10, "$.solver"),
              "maxit": _number(solver_raw, "maxit", None, "$.solver", int)}

    checks_raw = raw.get("checks", {})
    checks = {
        "margin": overrides.get("margin") if overrides.get("margin") is not None
        else _number(checks_raw, "margin", DEFAULT_MARGIN, "$.checks"),
        "sample_grid": _number(checks_raw, "sample_grid", 17, "$.checks", int),
        "fd_step": _number(checks_raw, "fd_step", None, "$.checks"),
        "w1inf_cap": _number(checks_raw, "w1inf_cap", 1e6, "$.checks"),
        "quad_order": _number(checks_raw, "quad_order", 8, "$.checks", int),
    }

    audit = raw.get("audit", {})
    levels = overrides.get("levels") or audit.get("levels", [cells[0], 2 * cells[0]])
    if not isinstance(levels, list) or any(not isinstance(c, int) or c < 2 for c in levels):
        raise ConfigError("$.audit.levels", "expected a list of integers >= 2")
    exact = None
    if audit.get("exact") is not None:
        exact = _grid(audit["exact"], (n,), "$.audit.exact", m)

    return JobConfig(kind, n, m, domain, spec, tuple(cells), theta, nu, solver, checks,
                     levels, exact, example6, raw)


def load_config(path, overrides: Optional[dict] = None) -> JobConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    return build_config(raw, overrides)


# -- output ---------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _encode(obj, indent: int) -> str:
    pad = "  " * (indent + 1)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format(obj, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if not obj:
        return "[]"
    items = [pad + _encode(v, indent + 1) for v in obj]
    return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]"


def dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, 17 significant digits, NaN/inf as null."""
    return _encode(_plain(obj), 0)


# -- commands -------------------------------------------------------------------

def run_check(cfg: JobConfig) -> tuple:
    ch = cfg.checks
    samples = default_samples(cfg.domain, cfg.cells, ch["sample_grid"])
    opts = CheckOptions(margin=ch["margin"], fd_step=ch["fd_step"],
                        w1inf_cap=ch["w1inf_cap"], quad_order=ch["quad_order"])
    report = full_report(cfg.spec, samples, opts, example6=cfg.example6)
    doc = {"command": "check", "kind": cfg.kind, "version": __version__,
           "n_samples": int(samples.points.shape[0]), **report.to_dict()}
    return (0 if report.overall else 1), doc


def run_solve(cfg: JobConfig) -> tuple:
    mesh = build_mesh(cfg.domain, cfg.cells)
    sol = solve_system(cfg.spec, mesh, solver=cfg.solver)
    s = sup_norms(sol)
    doc = {"command": "solve", "kind": cfg.kind, "version": __version__, "n": cfg.n,
           "cells": list(cfg.cells), "nodes": mesh.n_nodes,
           "sup_interior": s.sup_interior, "sup_boundary": s.sup_boundary,
           "h1_seminorm": s.h1_seminorm, "solver": sol.stats}
    return 0, doc, sol


def run_audit(cfg: JobConfig) -> tuple:
    rep = refinement_study(cfg.spec, cfg.levels, solver=cfg.solver)
    doc = {"command": "audit", "kind": cfg.kind, "version": __version__, **rep.to_dict()}
    return 0, doc, rep


def run_convergence(cfg: JobConfig) -> tuple:
    if cfg.exact is None:
        raise ConfigError("$.audit.exact", "required for the convergence command")
    rep = manufactured_convergence(cfg.spec, cfg.exact, cfg.levels, solver=cfg.solver)
    doc = {"command": "convergence", "kind": cfg.kind, "version": __version__,
           **rep.to_dict()}
    return 0, doc, rep


def _solution_csv(sol) -> str:
    n = sol.values.shape[0]
    cols = ["node"] + [f"x{d + 1}" for d in range(sol.mesh.m)] + [f"y{i + 1}" for i in range(n)]
    lines = [",".join(cols)]
    for k in range(sol.mesh.n_nodes):
        vals = list(sol.mesh.nodes[k]) + list(sol.values[:, k])
        lines.append(",".join([str(k)] + [format(float(v), ".17g") for v in vals]))
    return "\n".join(lines) + "\n"


def run_command(command: str, cfg: JobConfig, out: Path) -> tuple:
    """Run a command; returns ``(exit_status, report_dict)`` and writes artifacts."""
    out.mkdir(parents=True, exist_ok=True)
    if command == "check":
        status, doc = run_check(cfg)
        (out / "report.json").write_text(dumps(doc) + "\n")
    elif command == "solve":
        status, doc, sol = run_solve(cfg)
        (out / "solution.json").write_text(dumps(doc) + "\n")
        (out / "solution.csv").write_text(_solution_csv(sol))
    elif command == "audit":
        status, doc, rep = run_audit(cfg)
        (out / "audit.json").write_text(dumps(doc) + "\n")
        (out / "audit.csv").write_text(to_csv(rep))
    elif command == "convergence":
        status, doc, rep = run_convergence(cfg)
        (out / "convergence.json").write_text(dumps(doc) + "\n")
        (out / "convergence.csv").write_text(to_csv(rep))
    else:
        raise ValueError(f"unknown command {command!r}")
    return status, doc


def _levels_arg(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("levels must be comma-separated integers") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmpsys",
        description="Certify boundedness hypotheses for coupled elliptic systems "
                    "and audit Galerkin solutions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=["check", "solve", "audit", "convergence"])
    parser.add_argument("--config", required=True, help="path to the JSON job config")
    parser.add_argument("--out", default="./out", help="output directory (default ./out)")
    parser.add_argument("--margin", type=float, default=None,
                        help="positivity margin for sampled definiteness tests")
    parser.add_argument("--nu", type=float, default=None, help="well-posedness parameter nu")
    parser.add_argument("--levels", type=_levels_arg, default=None,
                        help="comma-separated cells per axis, e.g. 16,32,64")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"margin": args.margin, "nu": args.nu, "levels": args.levels}
    try:
        cfg = load_config(args.config, overrides)
        status, doc = run_command(args.command, cfg, Path(args.out))
    except ConfigError as exc:
        err = {"error": "ConfigError", "path": exc.path, "message": str(exc)}
        if exc.offset is not None:
            err["offset"] = exc.offset
        sys.stderr.write(dumps(err) + "\n")
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    sys.stdout.write(dumps(doc) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
