"""Coefficient expression language.

Coefficient fields are written as small arithmetic expressions in the space
variables ``x1 .. x_m``::

    expr  := term (('+'|'-') term)*
    term  := factor (('*'|'/') factor)*
    factor:= '-'? power
    power := atom ('^' atom)?
    atom  := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'

``^`` binds tighter than unary minus and does not chain (``a^b^c`` is a
syntax error).  ``min`` and ``max`` take exactly two arguments, every other
function takes one.

Evaluation is vectorized over an ``(N, dim)`` array of points; a scalar
:func:`evaluate` is the one-point special case of the same code path.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "ExprError", "ExprSyntaxError", "UnknownIdentifierError", "ArityError",
    "ExprDomainError", "Num", "Var", "Neg", "BinOp", "Call",
    "CoefficientField", "DerivedField", "SampleSet",
    "parse_expression", "evaluate", "to_text", "estimate_w1inf",
    "FUNCTIONS",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    def __init__(self, name: str, expected: int, got: int, offset: int):
        super().__init__(
            f"{name}() takes {expected} argument(s), got {got} (byte offset {offset})")
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation left the real domain of an operation."""

    def __init__(self, message: str, point):
        pt = tuple(float(v) for v in np.atleast_1d(point))
        super().__init__(f"{message} at point {pt}")
        self.point = pt


# -- tree -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based; x1 -> 0


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Neg, BinOp, Call]

FUNCTIONS: dict[str, int] = {
    "sin": 1, "cos": 1, "tan": 1, "exp": 1, "log": 1, "sqrt": 1,
    "abs": 1, "tanh": 1, "min": 2, "max": 2,
}


# -- tokenizer ----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        mo = _TOKEN_RE.match(text, pos)
        if mo is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}",
                                  _byte_offset(text, pos))
        kind = mo.lastgroup
        if kind != "ws":
            tokens.append((kind, mo.group(), _byte_offset(text, pos)))
        pos = mo.end()
    tokens.append(("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, dim: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, text, off = self.tok
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", off)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        kind, text, off = self.tok
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok[1] in ("+", "-") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok[1] in ("*", "/") and self.tok[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.tok[0] == "op" and self.tok[1] == "-":
            self.advance()
            return Neg(self.power())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok[0] == "op" and self.tok[1] == "^":
            self.advance()
            node = BinOp("^", base, self.atom())
            if self.tok[0] == "op" and self.tok[1] == "^":
                raise ExprSyntaxError("chained '^' is not allowed; use parentheses",
                                      self.tok[2])
            return node
        return base

    def atom(self) -> Node:
        kind, text, off = self.tok
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "ident":
            self.advance()
            if text in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.tok[1] == "," and self.tok[0] == "op":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[text]:
                    raise ArityError(text, FUNCTIONS[text], len(args), off)
                return Call(text, tuple(args))
            mo = re.fullmatch(r"x([1-9][0-9]*)", text)
            if mo and int(mo.group(1)) <= self.dim:
                return Var(int(mo.group(1)) - 1)
            raise UnknownIdentifierError(text, off)
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"expected a number, identifier or '(', found {found}", off)


# -- evaluation ---------------------------------------------------------------

def _check(bad: np.ndarray, pts: np.ndarray, message: str):
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ExprDomainError(message, pts[k])


def _eval(node: Node, pts: np.ndarray) -> np.ndarray:
    if isinstance(node, Num):
        return np.full(pts.shape[0], node.value)
    if isinstance(node, Var):
        return pts[:, node.index].astype(float, copy=True)
    if isinstance(node, Neg):
        return -_eval(node.operand, pts)
    if isinstance(node, BinOp):
        a = _eval(node.left, pts)
        b = _eval(node.right, pts)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            _check(b == 0.0, pts, "division by zero")
            return a / b
        # op == "^"
        _check((a < 0) & (b != np.round(b)), pts,
               "negative base raised to a non-integer power")
        _check((a == 0) & (b < 0), pts, "zero raised to a negative power")
        return np.power(a, b)
    if isinstance(node, Call):
        args = [_eval(arg, pts) for arg in node.args]
        name = node.name
        if name == "min":
            return np.minimum(args[0], args[1])
        if name == "max":
            return np.maximum(args[0], args[1])
        u = args[0]
        if name == "log":
            _check(u <= 0, pts, "log of a non-positive number")
            return np.log(u)
        if name == "sqrt":
            _check(u < 0, pts, "sqrt of a negative number")
            return np.sqrt(u)
        return _UNARY[name](u)
    raise TypeError(f"not an expression node: {node!r}")


_UNARY: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "abs": np.abs, "tanh": np.tanh,
}


def _as_points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, dim) if dim > 0 else pts.reshape(-1, 0)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"expected points with {dim} coordinate(s), got shape {pts.shape}")
    return pts


class CoefficientField:
    """A scalar field on R^dim defined by a parsed expression.

    Instances are immutable; ``values`` is reentrant and may be shared
    between threads.
    """

    __slots__ = ("source", "tree", "dim")

    def __init__(self, source: str, tree: Node, dim: int):
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "dim", dim)

    def __setattr__(self, name, value):
        raise AttributeError("CoefficientField is immutable")

    def __repr__(self):
        return f"CoefficientField({self.source!r}, dim={self.dim})"

    def values(self, points) -> np.ndarray:
        """Evaluate at an ``(N, dim)`` array of points; returns shape ``(N,)``."""
        pts = _as_points(points, self.dim)
        with np.errstate(all="ignore"):
            out = _eval(self.tree, pts)
        _check(~np.isfinite(out), pts, f"non-finite value of {self.source!r}")
        return out

    @property
    def is_constant(self) -> bool:
        return not _has_var(self.tree)

    def __call__(self, *coords) -> float:
        return evaluate(self, coords)


def _has_var(node: Node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Num):
        return False
    if isinstance(node, Neg):
        return _has_var(node.operand)
    if isinstance(node, BinOp):
        return _has_var(node.left) or _has_var(node.right)
    return any(_has_var(a) for a in node.args)


class DerivedField:
    """A scalar field given by a vectorized callable ``points -> values``.

    Used for quantities computed from other fields (ratios of minors,
    products, scaled data) that have no expression source.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], dim: int, label: str = "derived"):
        self._func = func
        self.dim = dim
        self.source = label

    def __repr__(self):
        return f"DerivedField({self.source!r}, dim={self.dim})"

    def values(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        with np.errstate(all="ignore"):
            out = np.asarray(self._func(pts), dtype=float).reshape(pts.shape[0])
        _check(~np.isfinite(out), pts, f"non-finite value of {self.source}")
        return out


def parse_expression(text: str, dim: int) -> CoefficientField:
    """Parse ``text`` into a :class:`CoefficientField` over ``dim`` variables.

    Raises
    ------
    ExprSyntaxError
        Malformed input; carries the byte offset of the offending token.
    UnknownIdentifierError
        An identifier that is neither ``x1..x_dim`` nor a known function.
    ArityError
        A function called with the wrong number of arguments.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if not isinstance(text, str) or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return CoefficientField(text, _Parser(text, dim).parse(), dim)


def evaluate(field, point: Sequence[float]) -> float:
    """Evaluate a field at a single point of length ``field.dim``."""
    pt = np.asarray(point, dtype=float).reshape(-1)
    if pt.shape[0] != field.dim:
        raise ValueError(f"point has {pt.shape[0]} coordinate(s), field expects {field.dim}")
    return float(field.values(pt.reshape(1, -1))[0])


def to_text(node: Node) -> str:
    """Canonical, fully parenthesized text for a tree; re-parses to the same tree."""
    if isinstance(node, Num):
        v = float(node.value)
        if not math.isfinite(v):
            raise ValueError(f"no literal for {v!r}")
        # a signed literal is not an atom, so it needs parentheses
        return f"(-{-v!r})" if math.copysign(1.0, v) < 0 else repr(v)
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)}{node.op}{to_text(node.right)})"
    return f"{node.name}(" + ",".join(to_text(a) for a in node.args) + ")"


# -- sampling and W^{1,inf} surrogates ----------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """Sample points inside an axis-aligned box ``[lo, hi]``."""

    points: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a SampleSet needs a non-empty (N, m) array of points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).reshape(-1))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @classmethod
    def lattice(cls, lo, hi, per_axis: int) -> "SampleSet":
        """Uniform tensor lattice with ``per_axis`` points (endpoints included)."""
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel(order="F") for g in grid], axis=1)
        return cls(pts, lo, hi)

    def union(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(np.vstack([self.points, other.points]), self.lo, self.hi)


def fd_gradient(field, samples: SampleSet, fd_step: float) -> np.ndarray:
    """Finite-difference gradient of ``field`` at every sample point.

    Central differences in the interior; second-order one-sided stencils
    where a central stencil would leave the box.  Returns ``(N, m)``.
    """
    pts = samples.points
    N, m = pts.shape
    # every stencil point goes into one batch so the field is evaluated once
    chunks, plan = [], []
    for d in range(m):
        e = np.zeros(m)
        e[d] = fd_step
        back_ok = pts[:, d] - fd_step >= samples.lo[d]
        fwd_ok = pts[:, d] + fd_step <= samples.hi[d]
        central = back_ok & fwd_ok
        fwd = ~central & fwd_ok
        bwd = ~central & ~fwd_ok
        for mask, offsets, weights in (
                (central, (1, -1), (1.0, -1.0)),
                (fwd, (0, 1, 2), (-3.0, 4.0, -1.0)),
                (bwd, (0, -1, -2), (3.0, -4.0, 1.0))):
            if np.any(mask):
                start = sum(c.shape[0] for c in chunks)
                chunks.extend(pts[mask] + k * e for k in offsets)
                plan.append((d, mask, start, int(np.count_nonzero(mask)), weights))
    vals = field.values(np.vstack(chunks))
    grad = np.empty_like(pts)
    for d, mask, start, cnt, weights in plan:
        acc = np.zeros(cnt)
        for k, w in enumerate(weights):
            acc += w * vals[start + k * cnt: start + (k + 1) * cnt]
        grad[mask, d] = acc / (2 * fd_step)
    return grad


def estimate_w1inf(field, samples: SampleSet, fd_step: float | None = None):
    """Sampled surrogate for the W^{1,inf} norm pieces of a field.

    Returns ``(sup_abs, sup_grad)``: the largest ``|field|`` and the largest
    Euclidean norm of the finite-difference gradient over the sample set.
    This is evidence of boundedness at the sampled resolution, not a proof
    of W^{1,inf} membership.

    ``fd_step`` defaults to ``1e-5`` times the box diameter.
    """
    if fd_step is None:
        fd_step = 1e-5 * samples.diameter
    if not fd_step > 0:
        raise ValueError("fd_step must be positive")
    vals = field.values(samples.points)
    grad = fd_gradient(field, samples, fd_step)
    sup_abs = float(np.max(np.abs(vals)))
    sup_grad = float(np.max(np.sqrt(np.sum(grad * grad, axis=1))))
    if not math.isfinite(sup_grad):
        raise ExprDomainError("non-finite gradient estimate", samples.points[0])
    return sup_abs, sup_grad
