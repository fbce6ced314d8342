"""Scalar expression language: parsing, evaluation and symbolic differentiation.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Identifiers match ``[a-zA-Z][a-zA-Z0-9]*``. Supported functions are
``sin cos tan exp ln sqrt tanh abs``.

Expressions are immutable trees. ``evaluate`` walks the tree; ``compile_vector``
turns a list of expressions into one Python function with the same arithmetic,
which is what the solvers call in their inner loops.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ExpressionError", "ParseError", "EvaluationError", "UnboundVariable", "DomainError",
    "Num", "Var", "Neg", "BinOp", "Call", "Expression", "FUNCTIONS",
    "parse", "evaluate", "differentiate", "render", "free_variables", "compile_vector",
]


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    """Syntax error or unknown function; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class EvaluationError(ExpressionError):
    pass


class UnboundVariable(EvaluationError):
    pass


class DomainError(EvaluationError):
    pass


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    arg: "Expression"

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"

    def __str__(self):
        return render(self)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expression"

    def __str__(self):
        return render(self)


Expression = Union[Num, Var, Neg, BinOp, Call]
ZERO = Num(0.0)
ONE = Num(1.0)


# ---------------------------------------------------------------------------
# Numeric primitives shared by the tree walker and the compiled code


def _pow(base: float, expo: float) -> float:
    if base < 0.0 and not float(expo).is_integer():
        raise DomainError(f"negative base {base!r} with non-integer exponent {expo!r}")
    if base == 0.0 and expo < 0.0:
        raise DomainError("zero raised to a negative power")
    return math.pow(base, expo)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _ln(a: float) -> float:
    if a <= 0.0:
        raise DomainError(f"ln of non-positive value {a!r}")
    return math.log(a)


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "tanh": math.tanh,
    "abs": abs,
}

_BINARY: dict[str, Callable[[float, float], float]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "^": _pow,
}

_TRAPPED = (ArithmeticError, ValueError)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[a-zA-Z][a-zA-Z0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    end = len(source.rstrip())
    while pos < end:
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(f"unexpected character {source[bad]!r}", bad, source)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.source)

    def error(self, message: str):
        raise ParseError(message, self.peek()[2], self.source)

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expression:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expression:
        kind, text, pos = self.peek()
        if kind == "num":
            self.take()
            return Num(float(text))
        if kind == "ident":
            self.take()
            if self.peek()[:2] == ("op", "("):
                if text not in FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos, self.source)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            return Var(text)
        if (kind, text) == ("op", "("):
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        self.error("unexpected end of input" if kind == "end" else f"unexpected token {text!r}")


def parse(source: str) -> Expression:
    """Parse ``source`` into an expression tree.

    >>> parse("-x1^2")
    Neg(arg=BinOp(op='^', left=Var(name='x1'), right=Num(value=2.0)))
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0, source or "")
    p = _Parser(source)
    node = p.expr()
    if p.peek()[0] != "end":
        p.error(f"unexpected token {p.peek()[1]!r}")
    return node


# ---------------------------------------------------------------------------
# Evaluation


def _eval(e: Expression, b: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return float(b[e.name])
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, b)
    if isinstance(e, BinOp):
        return _BINARY[e.op](_eval(e.left, b), _eval(e.right, b))
    return FUNCTIONS[e.func](_eval(e.arg, b))


def evaluate(e: Expression, binding: Mapping[str, float]) -> float:
    """Evaluate ``e`` at ``binding``; domain problems and non-finite results raise."""
    try:
        value = _eval(e, binding)
    except (DomainError, UnboundVariable):
        raise
    except _TRAPPED as exc:
        raise DomainError(str(exc)) from exc
    if not math.isfinite(value):
        raise DomainError(f"non-finite result {value!r}")
    return value


def free_variables(e: Expression) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    return free_variables(e.arg)


# ---------------------------------------------------------------------------
# Smart constructors with constant folding


def _fold(op, *args):
    try:
        value = op(*args)
    except _TRAPPED:
        return None
    return Num(float(value)) if math.isfinite(value) else None


def _is(e: Expression, value: float) -> bool:
    return isinstance(e, Num) and e.value == value


def neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(_BINARY["+"], a.value, b.value) or BinOp("+", a, b)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(b, Neg):
        return sub(a, b.arg)
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(_BINARY["-"], a.value, b.value) or BinOp("-", a, b)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(_BINARY["*"], a.value, b.value) or BinOp("*", a, b)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(_div, a.value, b.value) or BinOp("/", a, b)
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def power(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return _fold(_pow, a.value, b.value) or BinOp("^", a, b)
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    return BinOp("^", a, b)


def call(func: str, a: Expression) -> Expression:
    if isinstance(a, Num):
        return _fold(FUNCTIONS[func], a.value) or Call(func, a)
    return Call(func, a)


# ---------------------------------------------------------------------------
# Differentiation


def _dcall(func: str, a: Expression) -> Expression:
    # outer derivative g'(a); the chain factor is applied by the caller
    if func == "sin":
        return call("cos", a)
    if func == "cos":
        return neg(call("sin", a))
    if func == "tan":
        return div(ONE, power(call("cos", a), Num(2.0)))
    if func == "exp":
        return call("exp", a)
    if func == "ln":
        return div(ONE, a)
    if func == "sqrt":
        return div(ONE, mul(Num(2.0), call("sqrt", a)))
    if func == "tanh":
        return sub(ONE, power(call("tanh", a), Num(2.0)))
    if func == "abs":
        # undefined at a == 0, which surfaces as a division-by-zero domain error
        return div(a, call("abs", a))
    raise ExpressionError(f"no derivative rule for {func!r}")


def differentiate(e: Expression, var: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Call):
        return mul(_dcall(e.func, e.arg), differentiate(e.arg, var))
    a, b = e.left, e.right
    da, db = differentiate(a, var), differentiate(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return sub(div(da, b), div(mul(a, db), power(b, Num(2.0))))
    # e.op == "^"
    if var not in free_variables(b):
        return mul(mul(b, power(a, sub(b, ONE))), da)
    return mul(e, add(mul(db, call("ln", a)), div(mul(b, da), a)))


# ---------------------------------------------------------------------------
# Rendering

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expression) -> int:
    if isinstance(e, BinOp):
        return 4 if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 3
    return 5


def _wrap(e: Expression, cond: bool) -> str:
    s = render(e)
    return f"({s})" if cond else s


def render(e: Expression) -> str:
    """Text form that parses back to an equivalent expression."""
    if isinstance(e, Num):
        if not math.isfinite(e.value):
            raise ExpressionError(f"cannot render non-finite constant {e.value!r}")
        if e.value.is_integer() and abs(e.value) < 1e15 and math.copysign(1.0, e.value) > 0:
            return str(int(e.value))
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({render(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _prec(e.arg) < 3)
    p = _prec(e)
    if e.op == "^":
        return f"{_wrap(e.left, _prec(e.left) <= 4)}^{_wrap(e.right, _prec(e.right) < 3)}"
    left = _wrap(e.left, _prec(e.left) < p)
    right = _wrap(e.right, _prec(e.right) <= p)
    return f"{left}{e.op}{right}"


# ---------------------------------------------------------------------------
# Compilation


def _source(e: Expression) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return f"v_{e.name}"
    if isinstance(e, Neg):
        return f"(-{_source(e.arg)})"
    if isinstance(e, Call):
        return f"_f_{e.func}({_source(e.arg)})"
    if e.op == "/":
        return f"_div({_source(e.left)}, {_source(e.right)})"
    if e.op == "^":
        return f"_pow({_source(e.left)}, {_source(e.right)})"
    return f"({_source(e.left)} {e.op} {_source(e.right)})"


_NAMESPACE = {"_div": _div, "_pow": _pow, **{f"_f_{k}": v for k, v in FUNCTIONS.items()}}


def compile_vector(
    exprs: Sequence[Expression], argnames: Sequence[str], label: str = "component"
) -> Callable[..., np.ndarray]:
    """Compile ``exprs`` into ``fn(*args) -> ndarray`` over positional ``argnames``.

    Domain errors and non-finite components raise :class:`DomainError` naming
    the offending component index.
    """
    argnames = list(argnames)
    known = set(argnames)
    for i, e in enumerate(exprs):
        extra = free_variables(e) - known
        if extra:
            raise UnboundVariable(f"{label} {i}: unbound variables {sorted(extra)}")
    for name in argnames:
        if not re.fullmatch(r"[a-zA-Z][a-zA-Z0-9]*", name):
            raise ValueError(f"bad argument name {name!r}")
    body = ", ".join(_source(e) for e in exprs)
    params = ", ".join(f"v_{a}" for a in argnames)
    code = f"def _fn({params}):\n    return ({body}{',' if len(exprs) == 1 else ''})\n"
    ns = dict(_NAMESPACE)
    exec(compile(code, f"<{label}>", "exec"), ns)
    raw = ns["_fn"]
    singles = [compile_vector_single(e, argnames) for e in exprs] if exprs else []
    isfinite = math.isfinite

    def fn(*args):
        args = [float(a) for a in args]
        try:
            out = raw(*args)
        except _TRAPPED:
            _locate(singles, args, label)
            raise
        for i, val in enumerate(out):
            if not isfinite(val):
                raise DomainError(f"{label} {i}: non-finite value {val!r}")
        return np.array(out, dtype=float)

    fn.exprs = tuple(exprs)
    fn.argnames = tuple(argnames)
    return fn


def compile_vector_single(e: Expression, argnames: Sequence[str]):
    ns = dict(_NAMESPACE)
    params = ", ".join(f"v_{a}" for a in argnames)
    exec(f"def _fn({params}):\n    return {_source(e)}\n", ns)
    return ns["_fn"]


def _locate(singles, args, label):
    for i, single in enumerate(singles):
        try:
            single(*args)
        except _TRAPPED as exc:
            raise DomainError(f"{label} {i}: {exc}") from exc


def parse_many(sources: Iterable[str]) -> list[Expression]:
    return [parse(s) for s in sources]
