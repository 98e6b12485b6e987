"""Weight functions on phase space.

A small arithmetic expression language over the variables x, y, vx, vy,
evaluated with IEEE double semantics (domain errors raise, they do not
propagate NaNs), plus line integrals of weights along the free-flight legs
of periodic orbits.  A Weight couples an expression (optionally complex via
a real/imaginary pair) with a per-reflection multiplicative factor; the
factor is not part of the line integral and enters zeta sums separately.

Grammar (offsets in errors are byte offsets into the source):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?          # '^' right-associative
    unary  := '-' unary | atom
    atom   := number | var | func '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import EvalDomainError, NonConvergentError, ParseError
from .flow import PhaseState

VARIABLES = ("x", "y", "vx", "vy")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "abs")


# --- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def format_expr(expr: Expr) -> str:
    """Canonical rendering; parse(format_expr(e)) reproduces e."""

    def render(e: Expr, parent_prec: int, right_side: bool) -> str:
        if isinstance(e, Num):
            return repr(e.value) if e.value != int(e.value) else str(int(e.value))
        if isinstance(e, Var):
            return e.name
        if isinstance(e, Call):
            return f"{e.func}({render(e.arg, 0, False)})"
        if isinstance(e, Neg):
            inner = render(e.operand, 3, False)
            text = f"-{inner}"
            return f"({text})" if parent_prec > 3 else text
        prec = _PRECEDENCE[e.op]
        left = render(e.left, prec if e.op != "^" else prec + 1, False)
        right = render(e.right, prec + 1 if e.op != "^" else prec, True)
        text = f"{left} {e.op} {right}" if e.op in "+-*/" else f"{left}^{right}"
        needs = prec < parent_prec or (prec == parent_prec and right_side and e.op in "-/")
        return f"({text})" if needs else text

    return render(expr, 0, False)


# --- parsing -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()−]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(text) - len(stripped)
            raise ParseError(f"unexpected character {text[bad_at]!r}", bad_at)
        kind = match.lastgroup
        value = match.group(kind)
        if kind == "op" and value == "−":
            value = "-"  # unicode minus reads as ASCII minus
        tokens.append(_Token(kind, value, match.start(kind)))
        pos = match.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def bump(self) -> _Token:
        tok = self.current
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        tok = self.current
        if tok.kind != "op" or tok.text != op:
            raise ParseError(f"expected {op!r}, found {tok.text or 'end of input'!r}", tok.offset)
        self.bump()

    def parse(self) -> Expr:
        expr = self.expr()
        tok = self.current
        if tok.kind != "end":
            raise ParseError(f"unexpected trailing {tok.text!r}", tok.offset)
        return expr

    def expr(self) -> Expr:
        node = self.term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self.bump().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self.bump().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        node = self.unary()
        if self.current.kind == "op" and self.current.text == "^":
            self.bump()
            node = BinOp("^", node, self.factor())  # right associative
        return node

    def unary(self) -> Expr:
        if self.current.kind == "op" and self.current.text == "-":
            self.bump()
            return Neg(self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.current
        if tok.kind == "num":
            self.bump()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.bump()
            if tok.text in VARIABLES:
                return Var(tok.text)
            if tok.text in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return Call(tok.text, arg)
            raise ParseError(f"unknown identifier {tok.text!r}", tok.offset)
        if tok.kind == "op" and tok.text == "(":
            self.bump()
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError(
            f"expected number, variable or '(', found {tok.text or 'end of input'!r}",
            tok.offset,
        )


def parse_weight(text: str) -> Expr:
    """Parse an expression; ParseError carries the byte offset on failure."""
    return _Parser(text).parse()


# --- evaluation ----------------------------------------------------------------

def _eval(expr: Expr, env: dict):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return env[expr.name]
    if isinstance(expr, Neg):
        return -_eval(expr.operand, env)
    if isinstance(expr, Call):
        arg = _eval(expr.arg, env)
        if expr.func == "sqrt":
            if np.any(np.asarray(arg) < 0):
                raise EvalDomainError(f"sqrt of negative in {format_expr(expr)!r}")
            return np.sqrt(arg)
        if expr.func == "abs":
            return np.abs(arg)
        with np.errstate(over="ignore"):
            return getattr(np, expr.func)(arg)
    left = _eval(expr.left, env)
    right = _eval(expr.right, env)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if expr.op == "/":
        if np.any(np.asarray(right) == 0):
            raise EvalDomainError(f"division by zero in {format_expr(expr)!r}")
        return left / right
    # power, IEEE rules: integer exponents allow negative bases
    r_arr = np.asarray(right, dtype=float)
    integral = bool(np.all(r_arr == np.floor(r_arr)))
    l_arr = np.asarray(left, dtype=float)
    if not integral and np.any(l_arr < 0):
        raise EvalDomainError(f"negative base with non-integer exponent in {format_expr(expr)!r}")
    if np.any((l_arr == 0) & (r_arr < 0)):
        raise EvalDomainError(f"zero base with negative exponent in {format_expr(expr)!r}")
    with np.errstate(over="ignore"):
        return np.power(left, right)


def eval_expr(expr: Expr, state: PhaseState) -> float:
    """Evaluate at a single phase-space point."""
    env = {"x": state.x[0], "y": state.x[1], "vx": state.v[0], "vy": state.v[1]}
    return float(_eval(expr, env))


def eval_expr_arrays(expr: Expr, x, y, vx, vy) -> np.ndarray:
    """Vectorized evaluation over coordinate arrays of a common shape."""
    out = _eval(expr, {"x": x, "y": y, "vx": vx, "vy": vy})
    return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()


# --- weights -------------------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    """A phase-space weight plus the per-reflection factor.

    reflection_factor -1 realizes the sign character counting reflections;
    general unit-modulus factors realize rank-1 bundle twists.
    """

    expr: Expr
    expr_im: Optional[Expr] = None
    reflection_factor: complex = 1.0 + 0.0j

    @classmethod
    def parse(cls, re_text: str, im_text: Optional[str] = None,
              reflection_factor: complex = 1.0 + 0.0j) -> "Weight":
        return cls(
            expr=parse_weight(re_text),
            expr_im=parse_weight(im_text) if im_text else None,
            reflection_factor=complex(reflection_factor),
        )

    @classmethod
    def one(cls) -> "Weight":
        return cls(expr=Num(1.0))

    def __call__(self, state: PhaseState) -> complex:
        value = eval_expr(self.expr, state)
        if self.expr_im is not None:
            return complex(value, eval_expr(self.expr_im, state))
        return complex(value)

    def eval_arrays(self, x, y, vx, vy) -> np.ndarray:
        re_part = eval_expr_arrays(self.expr, x, y, vx, vy)
        if self.expr_im is None:
            return re_part
        return re_part + 1j * eval_expr_arrays(self.expr_im, x, y, vx, vy)


_GL_NODES, _GL_WEIGHTS = leggauss(16)


def _leg_integral(weight: Weight, origin: np.ndarray, direction: np.ndarray,
                  length: float, panels: int) -> complex:
    edges = np.linspace(0.0, length, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    t = (mid[:, None] + half * _GL_NODES[None, :]).ravel()
    xs = origin[0] + t * direction[0]
    ys = origin[1] + t * direction[1]
    vx = np.full_like(t, direction[0])
    vy = np.full_like(t, direction[1])
    vals = weight.eval_arrays(xs, ys, vx, vy)
    w = np.tile(_GL_WEIGHTS, panels) * half
    return complex(np.sum(vals * w))


def integrate_along(orbit, weight: Weight, rel_tol: float = 1e-12) -> complex:
    """Line integral of the weight over one primitive period.

    Gauss-Legendre with 16 nodes per panel, one panel per leg to start,
    doubling the panel count until successive values agree to rel_tol.
    The reflection factor is not included here.
    """
    total = 0.0 + 0.0j
    for k in range(len(orbit.itinerary)):
        origin = orbit.points[k]
        direction = orbit.states[k].v
        length = float(orbit.leg_lengths[k])
        panels = 1
        value = _leg_integral(weight, origin, direction, length, panels)
        for _ in range(14):
            panels *= 2
            refined = _leg_integral(weight, origin, direction, length, panels)
            # the 1e-3 floor keeps near-cancelling legs from chasing roundoff
            if abs(refined - value) <= rel_tol * max(abs(refined), 1e-3):
                value = refined
                break
            value = refined
        else:
            raise NonConvergentError(f"leg {k} quadrature did not stabilize")
        total += value
    if weight.expr_im is None:
        return complex(total.real)
    return total
