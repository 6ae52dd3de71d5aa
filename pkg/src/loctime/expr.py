"""Expressions in ``t`` and ``x``: parsing, printing, evaluation and exact
symbolic differentiation.

Grammar (EBNF)::

    expr   = term , { ( "+" | "-" ) , term } ;
    term   = unary , { ( "*" | "/" ) , unary } ;
    unary  = "-" , unary | power ;
    power  = atom , [ "^" , unary ] ;
    atom   = number | "t" | "x" | func , "(" , expr , ")" | "(" , expr , ")" ;
    func   = "exp" | "log" | "sqrt" | "sin" | "cos" | "tanh" ;
    number = digits , [ "." , [ digits ] ] , [ exponent ]
           | "." , digits , [ exponent ] ;
    exponent = ( "e" | "E" ) , [ "+" | "-" ] , digits ;

``^`` binds tighter than unary minus (``-x^2`` is ``-(x^2)``) and is
right-associative. ``abs`` is deliberately absent: it is not differentiable
at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

__all__ = [
    "Const", "Var", "BinOp", "Neg", "Func", "Expression", "Surface",
    "ExprSyntaxError", "ExprDomainError", "parse", "differentiate",
    "evaluate", "evaluate_array", "to_text", "depends_on", "FIXTURES",
]

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tanh")
VARIABLES = ("t", "x")


class ExprSyntaxError(ValueError):
    """Raised on malformed expression text; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.message = message
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class ExprDomainError(ArithmeticError):
    """Raised when a node is evaluated outside its numeric domain."""

    def __init__(self, message: str, node: "Expression"):
        self.message = message
        self.node = node
        super().__init__(f"{message} in '{to_text(node)}'")


# --------------------------------------------------------------------- nodes

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expression"


Expression = Union[Const, Var, BinOp, Neg, Func]

ZERO = Const(0.0)
ONE = Const(1.0)


# -------------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message, pos=None):
        pos = self.pos if pos is None else pos
        raise ExprSyntaxError(message, len(self.text[:pos].encode()), self.text)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            found = repr(self.peek()) if self.peek() else "end of input"
            self.error(f"expected '{ch}', found {found}")
        self.pos += 1

    def parse(self):
        if not self.text.strip():
            self.error("empty expression", 0)
        node = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-") and self.peek():
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in ("*", "/") and self.peek():
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == "-":
            self.pos += 1
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        ch = self.peek()
        if not ch:
            self.error("unexpected end of input")
        if ch.isdigit() or ch == ".":
            return self.number()
        if ch.isalpha() or ch == "_":
            start = self.pos
            while self.pos < len(self.text) and (
                self.text[self.pos].isalnum() or self.text[self.pos] == "_"
            ):
                self.pos += 1
            name = self.text[start:self.pos]
            if self.peek() == "(":
                if name not in FUNCTIONS:
                    self.error(f"unknown function '{name}'", start)
                self.pos += 1
                arg = self.expr()
                self.expect(")")
                return Func(name, arg)
            if name in FUNCTIONS:
                self.error(f"expected '(' after function '{name}'")
            if name not in VARIABLES:
                self.error(f"unknown identifier '{name}'", start)
            return Var(name)
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        self.error(f"unexpected {ch!r}")

    def number(self):
        text, start = self.text, self.pos
        i = start
        while i < len(text) and text[i].isdigit():
            i += 1
        if i < len(text) and text[i] == ".":
            i += 1
            while i < len(text) and text[i].isdigit():
                i += 1
        if i == start + 1 and text[start] == ".":
            self.error("malformed number", start)
        if i < len(text) and text[i] in "eE":
            j = i + 1
            if j < len(text) and text[j] in "+-":
                j += 1
            if j < len(text) and text[j].isdigit():
                while j < len(text) and text[j].isdigit():
                    j += 1
                i = j
            else:
                self.error("malformed exponent", i)
        self.pos = i
        return Const(float(text[start:i]))


def parse(text: str) -> Expression:
    """Parse ``text`` into an expression tree.

    >>> parse("x^2 - t")
    BinOp(op='-', left=BinOp(op='^', left=Var(name='x'), right=Const(value=2.0)), right=Var(name='t'))
    """
    return _Parser(text).parse()


# ------------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def _is_atomic(e) -> bool:
    return isinstance(e, (Var, Func)) or (isinstance(e, Const) and e.value >= 0)


def to_text(e: Expression) -> str:
    """Render ``e`` with the minimal parentheses that re-parse to ``e``."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Func):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if not (_is_atomic(e.operand) or isinstance(e.operand, Neg)
                or (isinstance(e.operand, BinOp) and e.operand.op == "^")):
            inner = f"({inner})"
        return f"-{inner}"
    if e.op == "^":
        base = to_text(e.left)
        if not _is_atomic(e.left):
            base = f"({base})"
        expo = to_text(e.right)
        if not (_is_atomic(e.right) or isinstance(e.right, Neg)
                or (isinstance(e.right, BinOp) and e.right.op == "^")):
            expo = f"({expo})"
        return f"{base}^{expo}"
    prec = _PREC[e.op]
    left = to_text(e.left)
    if isinstance(e.left, BinOp) and e.left.op != "^" and _PREC[e.left.op] < prec:
        left = f"({left})"
    right = to_text(e.right)
    if isinstance(e.right, BinOp) and e.right.op != "^" and _PREC[e.right.op] <= prec:
        right = f"({right})"
    sep = f" {e.op} " if prec == 1 else e.op
    return f"{left}{sep}{right}"


# ---------------------------------------------------------------- evaluation

def _pow(base: float, expo: float, node) -> float:
    if base == 0.0 and expo < 0:
        raise ExprDomainError("division by zero", node)
    if base < 0 and not float(expo).is_integer():
        raise ExprDomainError("negative base with non-integer exponent", node)
    try:
        return math.pow(base, expo)
    except OverflowError:
        return math.copysign(math.inf, base) if float(expo) % 2 == 1 else math.inf


def _apply_func(name: str, v: float, node) -> float:
    if name == "exp":
        try:
            return math.exp(v)
        except OverflowError:
            return math.inf
    if name == "log":
        if v <= 0:
            raise ExprDomainError("log of non-positive value", node)
        return math.log(v)
    if name == "sqrt":
        if v < 0:
            raise ExprDomainError("sqrt of negative value", node)
        return math.sqrt(v)
    if name == "sin":
        return math.sin(v)
    if name == "cos":
        return math.cos(v)
    return math.tanh(v)


def evaluate(e: Expression, t: float, x: float) -> float:
    """Evaluate ``e`` at the point ``(t, x)`` in double precision."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(t) if e.name == "t" else float(x)
    if isinstance(e, Neg):
        return -evaluate(e.operand, t, x)
    if isinstance(e, Func):
        return _apply_func(e.name, evaluate(e.arg, t, x), e)
    a = evaluate(e.left, t, x)
    b = evaluate(e.right, t, x)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if b == 0.0:
            raise ExprDomainError("division by zero", e)
        return a / b
    return _pow(a, b, e)


def evaluate_array(e: Expression, t, x) -> np.ndarray:
    """Vectorised :func:`evaluate` over broadcastable arrays ``t`` and ``x``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(t.shape, x.shape)
    out = _eval_arr(e, t, x)
    return np.broadcast_to(out, shape).astype(float, copy=True)


def _eval_arr(e, t, x):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return t if e.name == "t" else x
    if isinstance(e, Neg):
        return np.negative(_eval_arr(e.operand, t, x))
    if isinstance(e, Func):
        v = _eval_arr(e.arg, t, x)
        if e.name == "log" and np.any(v <= 0):
            raise ExprDomainError("log of non-positive value", e)
        if e.name == "sqrt" and np.any(v < 0):
            raise ExprDomainError("sqrt of negative value", e)
        with np.errstate(over="ignore"):
            return getattr(np, e.name)(v)
    a = _eval_arr(e.left, t, x)
    b = _eval_arr(e.right, t, x)
    if e.op == "+":
        return np.add(a, b)
    if e.op == "-":
        return np.subtract(a, b)
    if e.op == "*":
        return np.multiply(a, b)
    if e.op == "/":
        if np.any(b == 0):
            raise ExprDomainError("division by zero", e)
        return np.divide(a, b)
    a, b = np.broadcast_arrays(a, b)
    if np.any((a == 0) & (b < 0)):
        raise ExprDomainError("division by zero", e)
    if np.any((a < 0) & (b != np.floor(b))):
        raise ExprDomainError("negative base with non-integer exponent", e)
    with np.errstate(over="ignore"):
        return np.power(a, b)


# ---------------------------------------------------------- differentiation

def depends_on(e: Expression, var: str) -> bool:
    if isinstance(e, Const):
        return False
    if isinstance(e, Var):
        return e.name == var
    if isinstance(e, Neg):
        return depends_on(e.operand, var)
    if isinstance(e, Func):
        return depends_on(e.arg, var)
    return depends_on(e.left, var) or depends_on(e.right, var)


def _is(e, v):
    return isinstance(e, Const) and e.value == v


def _fold(op, a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            value = evaluate(BinOp(op, a, b), 0.0, 0.0)
        except ExprDomainError:
            return BinOp(op, a, b)
        if math.isfinite(value):
            return Const(value)
    return BinOp(op, a, b)


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    return _fold("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    return _fold("-", a, b)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    return _fold("*", a, b)


def div(a, b):
    if _is(b, 1):
        return a
    return _fold("/", a, b)


def power(a, b):
    if _is(b, 1):
        return a
    if _is(b, 0):
        return ONE
    return _fold("^", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    return Neg(a)


def differentiate(e: Expression, var: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to ``var`` (``"t"`` or ``"x"``)."""
    if var not in VARIABLES:
        raise ValueError(f"unknown variable {var!r}")
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.operand, var))
    if isinstance(e, Func):
        u, du = e.arg, differentiate(e.arg, var)
        if _is(du, 0):
            return ZERO
        if e.name == "exp":
            outer = e
        elif e.name == "log":
            return div(du, u)
        elif e.name == "sqrt":
            return div(du, mul(Const(2.0), e))
        elif e.name == "sin":
            outer = Func("cos", u)
        elif e.name == "cos":
            outer = neg(Func("sin", u))
        else:
            outer = sub(ONE, power(e, Const(2.0)))
        return mul(outer, du)
    a, b = e.left, e.right
    if e.op in "+-":
        da, db = differentiate(a, var), differentiate(b, var)
        return add(da, db) if e.op == "+" else sub(da, db)
    if e.op == "*":
        return add(mul(differentiate(a, var), b), mul(a, differentiate(b, var)))
    if e.op == "/":
        da, db = differentiate(a, var), differentiate(b, var)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    # power
    da = differentiate(a, var)
    if not depends_on(b, var):
        return mul(mul(b, power(a, sub(b, ONE))), da)
    db = differentiate(b, var)
    return mul(e, add(mul(db, Func("log", a)), div(mul(b, da), a)))


# ------------------------------------------------------------------ compile

OPCODES = {
    "const": 0, "t": 1, "x": 2, "+": 3, "-": 4, "*": 5, "/": 6, "^": 7,
    "neg": 8, "exp": 9, "log": 10, "sqrt": 11, "sin": 12, "cos": 13, "tanh": 14,
}


def bytecode(e: Expression):
    """Postfix program ``(ops, consts, stack_depth)`` for the compiled kernels."""
    ops, consts = [], []

    def emit(node):
        if isinstance(node, Const):
            ops.append(OPCODES["const"])
            consts.append(node.value)
            return 1
        if isinstance(node, Var):
            ops.append(OPCODES[node.name])
            consts.append(0.0)
            return 1
        if isinstance(node, Neg):
            d = emit(node.operand)
            ops.append(OPCODES["neg"])
        elif isinstance(node, Func):
            d = emit(node.arg)
            ops.append(OPCODES[node.name])
        else:
            d = max(emit(node.left), 1 + emit(node.right))
            ops.append(OPCODES[node.op])
        consts.append(0.0)
        return d

    depth = emit(e)
    return (np.asarray(ops, dtype=np.int32), np.asarray(consts, dtype=np.float64), depth)


def _pysrc(e) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_pysrc(e.operand)})"
    if isinstance(e, Func):
        return f"_m.{e.name}({_pysrc(e.arg)})"
    if e.op == "^":
        return f"_m.pow({_pysrc(e.left)}, {_pysrc(e.right)})"
    return f"({_pysrc(e.left)} {e.op} {_pysrc(e.right)})"


def compile_scalar(e: Expression) -> Callable[[float, float], float]:
    """Fast scalar evaluator with the same IEEE semantics as :func:`evaluate`.

    Plain ``math`` calls run first; any arithmetic exception is re-routed
    through the tree walker so domain errors name the offending node and
    overflow yields ``inf``.
    """
    fast = eval(f"lambda t, x: {_pysrc(e)}", {"_m": math})

    def f(t, x):
        try:
            return fast(t, x)
        except (ArithmeticError, ValueError):
            return evaluate(e, t, x)

    return f


# ------------------------------------------------------------------- surface

@dataclass(frozen=True)
class Surface:
    """A function ``V(t, x)`` bundled with its exact partial derivatives."""

    v: Expression
    v_t: Expression
    v_x: Expression
    v_xx: Expression

    @classmethod
    def from_expression(cls, v: Expression) -> "Surface":
        v_x = differentiate(v, "x")
        return cls(v, differentiate(v, "t"), v_x, differentiate(v_x, "x"))

    @classmethod
    def from_text(cls, text: str) -> "Surface":
        key = text.strip()
        if key in FIXTURES:
            key = FIXTURES[key]
        return cls.from_expression(parse(key))

    @classmethod
    def constant(cls, c: float) -> "Surface":
        return cls.from_expression(Const(float(c)))

    def shifted(self, z: float) -> "Surface":
        """The surface ``V - z``; derivatives are unchanged."""
        if z == 0:
            return self
        return Surface(sub(self.v, Const(float(z))), self.v_t, self.v_x, self.v_xx)

    @property
    def text(self) -> str:
        return to_text(self.v)

    def is_zero(self) -> bool:
        return _is(self.v, 0)

    def depends_on_t(self) -> bool:
        return depends_on(self.v, "t")

    @cached_property
    def f(self):
        return compile_scalar(self.v)

    @cached_property
    def f_t(self):
        return compile_scalar(self.v_t)

    @cached_property
    def f_x(self):
        return compile_scalar(self.v_x)

    @cached_property
    def f_xx(self):
        return compile_scalar(self.v_xx)

    def __call__(self, t, x):
        return evaluate_array(self.v, t, x)

    def dt(self, t, x):
        return evaluate_array(self.v_t, t, x)

    def dx(self, t, x):
        return evaluate_array(self.v_x, t, x)

    def dxx(self, t, x):
        return evaluate_array(self.v_xx, t, x)


# Named surfaces. The ``paper-example-N`` aliases are part of the CLI config
# contract and resolve to the same expressions.
FIXTURES = {
    "sqrt-branches": "x^2 - t",
    "hyperbola-branches": "(t-1)^2*x^2 - 1",
    "unit-quadratic": "x^2 - 1",
}
FIXTURES.update({
    "paper-example-1": FIXTURES["sqrt-branches"],
    "paper-example-2": FIXTURES["hyperbola-branches"],
    "paper-example-3": FIXTURES["unit-quadratic"],
})
