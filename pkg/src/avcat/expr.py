"""Expression language for right-hand sides and the system file format.

Expressions are small immutable ASTs.  They can be interpreted directly with
:func:`evaluate` or turned into a Python function with :func:`compile_exprs`;
both routes perform the same operations in the same order, so they agree
bit-for-bit on every scalar realization in :mod:`avcat.scalar`.

Grammar (``^`` binds tighter than unary minus, which binds tighter than
``*``/``/``, which bind tighter than ``+``/``-``)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' INTEGER)*
    atom   := NUMBER | 'pi' | IDENT | FUNC '(' expr ')' | '(' expr ')'
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import scalar
from .errors import ParseError, SpecError

# ---------------------------------------------------------------------------- AST


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


_BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/"}
_FUNCS = {"sin": Sin, "cos": Cos, "exp": Exp}
_FUNC_NAMES = {v: k for k, v in _FUNCS.items()}


def variables(e: Expr) -> set[str]:
    """Names of all variables referenced by ``e``."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.arg)


# ------------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(text: str, line: int | None, col0: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col0 + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), col0 + pos + 1))
        pos = m.end()
    tokens.append(_Token("eof", "", col0 + len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: set[str] | None, line: int | None = None, col0: int = 0):
        self.tokens = _tokenize(text, line, col0)
        self.i = 0
        self.allowed = allowed
        self.line = line

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        raise ParseError(message, self.line, tok.column)

    def expect(self, text: str):
        tok = self.take()
        if tok.text != text:
            self.error(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok)

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.text == "-":
            self.take()
            return Neg(self.unary())
        if tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        node = self.atom()
        while self.peek().text == "^":
            self.take()
            tok = self.take()
            if tok.kind != "number" or not tok.text.isdigit():
                self.error("exponent must be a non-negative integer literal", tok)
            node = Pow(node, int(tok.text))
        return node

    def atom(self) -> Expr:
        tok = self.take()
        if tok.kind == "number":
            return Const(float(tok.text))
        if tok.kind == "ident":
            name = tok.text
            if name in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCS[name](arg)
            if name == "pi":
                return Const(math.pi)
            if self.allowed is not None and name not in self.allowed:
                self.error(f"unknown identifier {name!r}", tok)
            return Var(name)
        if tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        self.error(f"unexpected {tok.text or 'end of input'!r}", tok)

    def expr_list(self) -> list[Expr]:
        items = [self.expr()]
        while self.peek().text == ",":
            self.take()
            items.append(self.expr())
        return items

    def finish(self):
        tok = self.peek()
        if tok.kind != "eof":
            self.error(f"unexpected trailing {tok.text!r}", tok)


def parse_expr(text: str, allowed: set[str] | None = None) -> Expr:
    """Parse a single expression.  ``allowed`` restricts the variable names."""
    p = _Parser(text, allowed)
    node = p.expr()
    p.finish()
    return node


# -------------------------------------------------------------------- serializing


def to_source(e: Expr) -> str:
    """Fully parenthesized source text; ``parse_expr(to_source(e)) == e``."""
    if isinstance(e, Const):
        if e.value < 0 or math.isnan(e.value) or math.isinf(e.value):
            raise SpecError(f"constant {e.value!r} has no source form")
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Pow):
        return f"({to_source(e.base)}^{e.exponent})"
    if type(e) in _BINARY:
        return f"({to_source(e.left)} {_BINARY[type(e)]} {to_source(e.right)})"
    return f"{_FUNC_NAMES[type(e)]}({to_source(e.arg)})"


# --------------------------------------------------------------------- evaluation


def evaluate(e: Expr, env: Mapping[str, object]):
    """Value of ``e`` with variables bound by ``env`` in any scalar realization."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise SpecError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        return evaluate(e.left, env) / evaluate(e.right, env)
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Pow):
        return scalar.ipow(evaluate(e.base, env), e.exponent)
    if isinstance(e, Sin):
        return scalar.sin(evaluate(e.arg, env))
    if isinstance(e, Cos):
        return scalar.cos(evaluate(e.arg, env))
    if isinstance(e, Exp):
        return scalar.exp(evaluate(e.arg, env))
    raise TypeError(f"not an expression node: {e!r}")


def _py(e: Expr, names: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Neg):
        return f"(-{_py(e.arg, names)})"
    if isinstance(e, Pow):
        return f"_ipow({_py(e.base, names)}, {e.exponent})"
    if type(e) in _BINARY:
        return f"({_py(e.left, names)} {_BINARY[type(e)]} {_py(e.right, names)})"
    return f"_{_FUNC_NAMES[type(e)]}({_py(e.arg, names)})"


def compile_exprs(exprs: Sequence[Expr], n: int, k: int) -> Callable:
    """Compile expressions into ``fn(t, x, mu) -> list`` over any realization."""
    names = {"t": "t"}
    names.update({f"x{i + 1}": f"x[{i}]" for i in range(n)})
    names.update({f"mu{j + 1}": f"mu[{j}]" for j in range(k)})
    body = ", ".join(_py(e, names) for e in exprs)
    src = f"def _rhs(t, x, mu):\n    return [{body}]\n"
    namespace = {"_ipow": scalar.ipow, "_sin": scalar.sin, "_cos": scalar.cos, "_exp": scalar.exp}
    exec(compile(src, "<avcat-expr>", "exec"), namespace)
    fn = namespace["_rhs"]
    fn.source = src
    return fn


# ------------------------------------------------------------------- system spec


@dataclass(frozen=True)
class SystemSpec:
    """A family ``x' = sum_i eps^i F_i(t, x, mu) + eps^(N+1) F_rest(t, x, mu)``.

    ``F`` maps each order ``i = 1..N`` to a tuple of ``n`` expressions.
    """

    name: str
    n: int
    k: int
    T: float
    F: Mapping[int, tuple[Expr, ...]]
    Ftilde: tuple[Expr, ...] | None = None
    _compiled: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def N(self) -> int:
        return max(self.F)

    @property
    def max_order(self) -> int:
        """Highest epsilon power present in the right-hand side."""
        return self.N + 1 if self.Ftilde is not None else self.N

    def variable_names(self) -> set[str]:
        names = {"t"} | {f"x{i + 1}" for i in range(self.n)}
        return names | {f"mu{j + 1}" for j in range(self.k)}

    def order_exprs(self, i: int) -> tuple[Expr, ...] | None:
        """Expressions multiplying ``eps**i`` (the remainder counts as order N+1)."""
        if i in self.F:
            return self.F[i]
        if i == self.N + 1:
            return self.Ftilde
        return None

    def order_function(self, i: int) -> Callable | None:
        """Compiled ``F_i(t, x, mu) -> list`` or ``None`` if order ``i`` is absent."""
        if i not in self._compiled:
            exprs = self.order_exprs(i)
            self._compiled[i] = None if exprs is None else compile_exprs(exprs, self.n, self.k)
        return self._compiled[i]

    def rhs(self, t, x, mu, eps):
        """Full right-hand side at a numeric (or dual) ``eps``."""
        out = None
        power = eps
        for i in range(1, self.max_order + 1):
            fn = self.order_function(i)
            if fn is not None:
                vals = fn(t, x, mu)
                term = [power * v for v in vals]
                out = term if out is None else [a + b for a, b in zip(out, term)]
            if i < self.max_order:
                power = power * eps
        return out

    def rhs_jet(self, t, x, mu, degree: int):
        """Right-hand side with epsilon kept symbolic as a degree-``degree`` jet."""
        out = None
        for i in range(1, min(self.max_order, degree) + 1):
            fn = self.order_function(i)
            if fn is None:
                continue
            term = [_times_eps_power(v, i, degree) for v in fn(t, x, mu)]
            out = term if out is None else [a + b for a, b in zip(out, term)]
        if out is None:
            out = [_times_eps_power(0.0 * xi, 1, degree) for xi in x]
        return out


def _times_eps_power(v, i: int, degree: int):
    if isinstance(v, scalar.EpsJet):
        return v.shift(i)
    if isinstance(v, scalar.Dual):
        return scalar.Dual(_times_eps_power(v.value, i, degree),
                           [_times_eps_power(d, i, degree) for d in v.directions], v.tag)
    arr = np.asarray(v, dtype=float)
    c = np.zeros((degree + 1,) + arr.shape)
    if i <= degree:
        c[i] = arr
    return scalar.EpsJet(c)


# ---------------------------------------------------------------- system files

_HEADER_RE = re.compile(r"^(?P<kw>system|dim|period|order|end)\b(?P<rest>.*)$")


def parse_system(text: str, check_periodicity: bool = True) -> SystemSpec:
    """Parse a system file (see the README for the format) into a SystemSpec."""
    name = None
    n = k = None
    T = None
    orders: dict[int, tuple[Expr, ...]] = {}
    rest = None
    ended = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if ended:
            raise ParseError("content after 'end'", lineno, 1)
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        m = _HEADER_RE.match(stripped)
        if m is None:
            raise ParseError(f"unknown directive {stripped.split()[0]!r}", lineno, indent + 1)
        kw, body = m.group("kw"), m.group("rest")
        body_col = indent + len(kw)
        if kw == "system":
            parts = body.split()
            if len(parts) != 1 or not re.fullmatch(r"[A-Za-z_][\w.-]*", parts[0]):
                raise ParseError("expected 'system <name>'", lineno, body_col + 1)
            name = parts[0]
        elif kw == "dim":
            dm = re.fullmatch(r"\s+n\s*=\s*(\d+)\s+k\s*=\s*(\d+)\s*", body)
            if dm is None:
                raise ParseError("expected 'dim n=<int> k=<int>'", lineno, body_col + 1)
            n, k = int(dm.group(1)), int(dm.group(2))
        elif kw == "period":
            pm = re.fullmatch(r"(\s+T\s*=\s*)(.+)", body)
            if pm is None:
                raise ParseError("expected 'period T=<expr>'", lineno, body_col + 1)
            p = _Parser(pm.group(2), set(), lineno, body_col + len(pm.group(1)))
            node = p.expr()
            p.finish()
            T = float(evaluate(node, {}))
        elif kw == "order":
            om = re.fullmatch(r"(\s+(\d+|rest)\s*:)(.*)", body)
            if om is None:
                raise ParseError("expected 'order <i|rest>: <expr>, ...'", lineno, body_col + 1)
            if n is None or k is None:
                raise ParseError("'dim' must precede 'order'", lineno, 1)
            allowed = {"t"} | {f"x{i + 1}" for i in range(n)} | {f"mu{j + 1}" for j in range(k)}
            p = _Parser(om.group(3), allowed, lineno, body_col + len(om.group(1)))
            if not om.group(3).strip():
                raise SpecError(f"line {lineno}: empty expression list, expected {n}")
            exprs = tuple(p.expr_list())
            p.finish()
            if len(exprs) != n:
                raise SpecError(f"line {lineno}: {len(exprs)} expressions for dimension n={n}")
            key = om.group(2)
            if key == "rest":
                if rest is not None:
                    raise ParseError("duplicate 'order rest'", lineno, 1)
                rest = exprs
            else:
                i = int(key)
                if i < 1 or i in orders:
                    raise ParseError(f"invalid or duplicate order {i}", lineno, 1)
                orders[i] = exprs
        else:
            if body.strip():
                raise ParseError("unexpected text after 'end'", lineno, body_col + 1)
            ended = True
    if name is None:
        raise SpecError("missing 'system <name>' line")
    if n is None:
        raise SpecError("missing 'dim' line")
    if T is None:
        raise SpecError("missing 'period' line")
    if not ended:
        raise SpecError("missing 'end' line")
    if not orders:
        raise SpecError("no 'order' lines: the right-hand side has no expressions (dimension mismatch)")
    spec = make_system(name, n, k, T, orders, rest)
    if check_periodicity:
        check_period(spec)
    return spec


def make_system(name, n, k, T, orders, rest=None) -> SystemSpec:
    """Build and validate a SystemSpec from already parsed expressions."""
    if n < 1 or k < 0:
        raise SpecError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    if not (T > 0 and math.isfinite(T)):
        raise SpecError(f"period must be positive, got {T!r}")
    if not orders:
        raise SpecError("at least one order is required")
    N = max(orders)
    missing = [i for i in range(1, N + 1) if i not in orders]
    if missing:
        raise SpecError(f"orders {missing} missing below the highest order {N}")
    spec = SystemSpec(name, n, k, float(T), {i: tuple(orders[i]) for i in sorted(orders)},
                      None if rest is None else tuple(rest))
    allowed = spec.variable_names()
    for i in range(1, spec.max_order + 1):
        exprs = spec.order_exprs(i)
        if len(exprs) != n:
            raise SpecError(f"order {i}: {len(exprs)} expressions for dimension n={n}")
        for e in exprs:
            bad = variables(e) - allowed
            if bad:
                raise SpecError(f"order {i}: unknown identifiers {sorted(bad)}")
    return spec


def check_period(spec: SystemSpec, samples: int = 64, tol: float = 1e-10, seed: int = 0) -> bool:
    """Warn (not fail) when some ``F_i`` is not numerically T-periodic in t."""
    rng = np.random.default_rng(seed)
    x = [rng.uniform(-1.0, 1.0) for _ in range(spec.n)]
    mu = [rng.uniform(-1.0, 1.0) for _ in range(spec.k)]
    ts = np.linspace(0.0, spec.T, samples, endpoint=False)
    ok = True
    for i in range(1, spec.max_order + 1):
        fn = spec.order_function(i)
        xs = [np.full_like(ts, v) for v in x]
        a = np.array([np.broadcast_to(v, ts.shape) for v in fn(ts, xs, mu)], dtype=float)
        b = np.array([np.broadcast_to(v, ts.shape) for v in fn(ts + spec.T, xs, mu)], dtype=float)
        if np.max(np.abs(a - b)) >= tol:
            ok = False
            warnings.warn(f"system {spec.name!r}: order {i} is not {spec.T:g}-periodic in t",
                          stacklevel=3)
    return ok


def serialize_system(spec: SystemSpec) -> str:
    """System file text that parses back to a structurally equal SystemSpec."""
    lines = [f"system {spec.name}", f"dim n={spec.n} k={spec.k}", f"period T={spec.T!r}"]
    for i, exprs in spec.F.items():
        lines.append(f"order {i}: " + ", ".join(to_source(e) for e in exprs))
    if spec.Ftilde is not None:
        lines.append("order rest: " + ", ".join(to_source(e) for e in spec.Ftilde))
    lines.append("end")
    return "\n".join(lines) + "\n"
