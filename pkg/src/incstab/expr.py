"""Expression language for vector fields and Lyapunov candidates.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | "+" unary | power ;
    power   = atom [ "^" unary ] ;
    atom    = number | variable | func "(" expr ")" | "(" expr ")" ;
    func    = "exp" | "log" | "sin" | "cos" | "tanh" | "sqrt" | "abs" ;
    variable= ("x" | "y" | "u" | "v") digit { digit } ;

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``, and it is
right-associative. ``x<i>``/``y<i>`` are the first and second state arguments
(``1 <= i <= n``); ``u<i>``/``v<i>`` the first and second input arguments
(``1 <= i <= m``).

Nodes are frozen dataclasses, so equality is structural and trees are safe to
share between threads.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    ExprError,
    NonFiniteError,
    NonSmoothError,
    ParseError,
    UnboundVariableError,
    UnknownVariableError,
)

FUNCS = ("exp", "log", "sin", "cos", "tanh", "sqrt", "abs")
BINOPS = ("+", "-", "*", "/", "^")

_VAR_RE = re.compile(r"^([xyuv])(\d+)$")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    """``op`` is ``"neg"`` or one of :data:`FUNCS`."""

    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]


# --------------------------------------------------------------------------
# tokenizer / parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n, m):
        self.text = text
        self.n = n
        self.m = m
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        if tok[0] == "end":
            msg = f"{msg}: unexpected end of input"
        else:
            msg = f"{msg}: unexpected {tok[1]!r}"
        raise ParseError(msg, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            self.error(f"expected {value!r}")
        return self.advance()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.error("trailing input")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.advance()
            return Unary("neg", self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def atom(self):
        tok = self.peek()
        kind, value, pos = tok
        if kind == "num":
            self.advance()
            return Const(float(value))
        if kind == "name":
            self.advance()
            if value in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(value, arg)
            self._check_variable(value, pos)
            return Var(value)
        if kind == "op" and value == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.error("expected number, variable, function or '('")

    def _check_variable(self, name, pos):
        m = _VAR_RE.match(name)
        if m is None:
            raise UnknownVariableError(f"unknown variable {name!r} at position {pos}")
        letter, index = m.group(1), int(m.group(2))
        limit = self.n if letter in "xy" else self.m
        if not 1 <= index <= limit:
            raise DimensionError(
                f"variable {name!r} at position {pos} is out of range "
                f"(declared {'n' if letter in 'xy' else 'm'}={limit})"
            )


def parse(text: str, n: int, m: int = 0) -> Expr:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Expression source; must be nonempty.
    n, m : int
        State and input dimensions bounding the variable indices.

    Raises
    ------
    ParseError
        Malformed text; carries the character position.
    UnknownVariableError, DimensionError
        Identifier is not a valid variable name, or its index is out of range.
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", 0, text if isinstance(text, str) else "")
    return _Parser(text, n, m).parse()


# --------------------------------------------------------------------------
# printing
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM = 5


def _prec(node):
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    return _ATOM


def _fmt_number(value):
    if math.isfinite(value) and value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def to_string(node: Expr) -> str:
    """Render ``node`` so that ``parse(to_string(node))`` rebuilds the same tree."""
    if isinstance(node, Const):
        s = _fmt_number(abs(node.value))
        return f"(-{s})" if node.value < 0 or math.copysign(1.0, node.value) < 0 else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = to_string(node.arg)
            if _prec(node.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return "-" + inner
        return f"{node.op}({to_string(node.arg)})"
    p = _PREC[node.op]
    left, right = to_string(node.left), to_string(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        # neg on the right is legal bare but unreadable ("x1--x2")
        if _prec(node.right) <= p or _prec(node.right) == _PREC["neg"]:
            right = f"({right})"
    return f"{left}{node.op}{right}"


def variables(node: Expr) -> frozenset:
    """Names of all variables appearing in ``node``."""
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Unary):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def contains_op(node: Expr, op: str) -> bool:
    if isinstance(node, Unary):
        return node.op == op or contains_op(node.arg, op)
    if isinstance(node, Binary):
        return node.op == op or contains_op(node.left, op) or contains_op(node.right, op)
    return False


def rename(node: Expr, mapping: Mapping[str, str]) -> Expr:
    """Substitute variable names according to ``mapping``."""
    return substitute(node, {k: Var(v) for k, v in mapping.items()})


def substitute(node: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Const):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, substitute(node.arg, mapping))
    return Binary(node.op, substitute(node.left, mapping), substitute(node.right, mapping))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def _checked(value, what):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by {what}")
    return value


def _log(a):
    if np.any(a <= 0):
        raise DomainError("log of nonpositive argument")
    return np.log(a)


def _sqrt(a):
    if np.any(a < 0):
        raise DomainError("sqrt of negative argument")
    return np.sqrt(a)


def _pow(a, b):
    with np.errstate(all="ignore"):
        out = np.power(a, b)
    if np.any(np.isnan(out)) and not np.any(np.isnan(a)) and not np.any(np.isnan(b)):
        if np.any((np.asarray(a) < 0)):
            raise DomainError("negative base raised to a non-integer power")
        if np.any((np.asarray(a) == 0) & (np.asarray(b) < 0)):
            raise NonFiniteError("zero raised to a negative power")
    return out


_UNARY_FN = {
    "neg": np.negative,
    "exp": np.exp,
    "log": _log,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "sqrt": _sqrt,
    "abs": np.abs,
}

_BINARY_FN = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": _pow,
}


def _apply_unary(op, a):
    with np.errstate(over="ignore", invalid="ignore"):
        out = _UNARY_FN[op](a)
    return _checked(out, op)


def _apply_binary(op, a, b):
    with np.errstate(all="ignore"):
        out = _BINARY_FN[op](a, b)
    return _checked(out, f"'{op}'")


def evaluate(node: Expr, bindings: Mapping[str, object]):
    """Evaluate ``node`` under ``bindings``.

    Bindings may be floats or numpy arrays (broadcast together). Every
    intermediate value is checked, so NaN/Inf never leaks silently.

    Raises
    ------
    UnboundVariableError
        A variable of ``node`` has no binding.
    DomainError, NonFiniteError
        Invalid argument to log/sqrt/^, or an overflow/division by zero.
    """
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return bindings[node.name]
        except KeyError:
            raise UnboundVariableError(f"variable {node.name!r} is unbound") from None
    if isinstance(node, Unary):
        return _apply_unary(node.op, evaluate(node.arg, bindings))
    return _apply_binary(node.op, evaluate(node.left, bindings), evaluate(node.right, bindings))


def compile_expr(node: Expr) -> Callable[[Mapping[str, object]], object]:
    """Pre-resolve ``node`` into nested closures.

    The result computes exactly what :func:`evaluate` computes (same numpy
    calls in the same order) without re-dispatching on node types.
    """
    if isinstance(node, Const):
        value = node.value
        return lambda b: value
    if isinstance(node, Var):
        name = node.name

        def var(b):
            try:
                return b[name]
            except KeyError:
                raise UnboundVariableError(f"variable {name!r} is unbound") from None

        return var
    if isinstance(node, Unary):
        op, arg = node.op, compile_expr(node.arg)
        return lambda b: _apply_unary(op, arg(b))
    op, left, right = node.op, compile_expr(node.left), compile_expr(node.right)
    return lambda b: _apply_binary(op, left(b), right(b))


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------

ZERO = Const(0.0)
ONE = Const(1.0)


def _is_const(node, value=None):
    return isinstance(node, Const) and (value is None or node.value == value)


def _const(value):
    # constants stay nonnegative so printed trees reparse identically
    return Unary("neg", Const(-value)) if value < 0 else Const(float(value) + 0.0)


def _neg(a):
    if _is_const(a, 0.0):
        return ZERO
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if _is_const(a) and _is_const(b):
        return _const(a.value + b.value)
    return Binary("+", a, b)


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    if _is_const(a) and _is_const(b):
        return _const(a.value - b.value)
    return Binary("-", a, b)


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a) and _is_const(b):
        return _const(a.value * b.value)
    if isinstance(b, Unary) and b.op == "neg" and _is_const(b.arg, 1.0):
        return _neg(a)
    return Binary("*", a, b)


def _div(a, b):
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Binary("/", a, b)


def _pow_node(a, b):
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    return Binary("^", a, b)


def diff(node: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``node`` with respect to ``var``.

    Light simplification only (``0*e -> 0``, ``e+0 -> e``, ``1*e -> e``,
    constant folding). ``e1^e2`` requires ``e2`` free of variables.

    Raises
    ------
    NonSmoothError
        ``abs`` of a subexpression depending on ``var``.
    ExprError
        Non-constant exponent.
    """
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if var not in variables(node):
        return ZERO
    if isinstance(node, Unary):
        a = node.arg
        da = diff(a, var)
        op = node.op
        if op == "neg":
            return _neg(da)
        if op == "exp":
            return _mul(node, da)
        if op == "log":
            return _div(da, a)
        if op == "sin":
            return _mul(Unary("cos", a), da)
        if op == "cos":
            return _neg(_mul(Unary("sin", a), da))
        if op == "tanh":
            return _mul(_sub(ONE, _pow_node(node, Const(2.0))), da)
        if op == "sqrt":
            return _div(da, _mul(Const(2.0), node))
        if op == "abs":
            raise NonSmoothError(f"abs is not differentiable at 0 (in d/d{var})")
        raise ExprError(f"unknown unary op {op!r}")
    a, b = node.left, node.right
    if node.op == "+":
        return _add(diff(a, var), diff(b, var))
    if node.op == "-":
        return _sub(diff(a, var), diff(b, var))
    if node.op == "*":
        return _add(_mul(diff(a, var), b), _mul(a, diff(b, var)))
    if node.op == "/":
        num = _sub(_mul(diff(a, var), b), _mul(a, diff(b, var)))
        return _div(num, _pow_node(b, Const(2.0)))
    if node.op == "^":
        if variables(b):
            raise ExprError("cannot differentiate a power with a non-constant exponent")
        lowered = _const(b.value - 1.0) if _is_const(b) else _sub(b, ONE)
        return _mul(_mul(b, _pow_node(a, lowered)), diff(a, var))
    raise ExprError(f"unknown binary op {node.op!r}")


def gradient(node: Expr, names) -> list:
    return [diff(node, name) for name in names]


def state_names(letter: str, count: int) -> list:
    return [f"{letter}{i}" for i in range(1, count + 1)]


def bind(letter: str, array) -> dict:
    """Bindings ``{letter1: array[..., 0], ...}`` for a stacked last axis."""
    array = np.asarray(array, dtype=float)
    return {f"{letter}{i + 1}": array[..., i] for i in range(array.shape[-1])}
