"""Smooth-scalar realizations: plain floats, epsilon jets and forward-mode duals.

Every numerical routine in avcat is written once against a small ring
contract (``+ - * /``, unary ``-``, ``sin``, ``cos``, ``exp`` and integer
powers).  Three families satisfy it:

* Python floats and numpy arrays (arrays act as a batch of independent floats),
* :class:`EpsJet`, a polynomial in epsilon truncated at a fixed degree,
* :class:`Dual`, a value together with directional derivatives.

Duals are generic over their component type, so ``Dual`` over ``EpsJet``
and ``Dual`` over ``Dual`` both work.  Each dual carries an integer ``tag``
that identifies its differentiation level; a dual with a lower tag behaves as
a constant inside a dual with a higher tag.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, RingDivisionError

__all__ = [
    "EpsJet",
    "Dual",
    "sin",
    "cos",
    "exp",
    "ipow",
    "dual_gradient",
    "jacobian",
    "jacobian_and_hessian",
    "directional_derivatives",
    "MAX_NESTING",
]

#: Deepest derivative tower built by nesting duals.
MAX_NESTING = 4

_PLAIN = (float, int, np.floating, np.integer)
_tags = itertools.count(1)


def _fresh_tag() -> int:
    return next(_tags)


def sin(a):
    if isinstance(a, _PLAIN):
        return math.sin(a)
    if isinstance(a, np.ndarray):
        return np.sin(a)
    return a.sin()


def cos(a):
    if isinstance(a, _PLAIN):
        return math.cos(a)
    if isinstance(a, np.ndarray):
        return np.cos(a)
    return a.cos()


def exp(a):
    if isinstance(a, _PLAIN):
        return math.exp(a)
    if isinstance(a, np.ndarray):
        return np.exp(a)
    return a.exp()


def _one_like(a):
    if isinstance(a, _PLAIN):
        return 1.0
    if isinstance(a, np.ndarray):
        return np.ones_like(a, dtype=float)
    return a * 0.0 + 1.0


def ipow(a, n: int):
    """``a**n`` for an integer ``n >= 0`` by binary exponentiation.

    The multiplication sequence is the same for every realization, which keeps
    float evaluation and the constant term of jet evaluation bit-identical.
    """
    if not isinstance(n, (int, np.integer)) or n < 0:
        raise ContractError(f"only non-negative integer powers are supported, got {n!r}")
    if n == 0:
        return _one_like(a)
    result = None
    base = a
    while True:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if not n:
            return result
        base = base * base


# --------------------------------------------------------------------------- jets


def _align(c: np.ndarray, batch_ndim: int) -> np.ndarray:
    """Append singleton axes so ``c`` (degree axis first) broadcasts against a batch."""
    missing = batch_ndim - (c.ndim - 1)
    if missing > 0:
        c = c.reshape(c.shape + (1,) * missing)
    return c


def _cauchy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    size = a.shape[0]
    if a.ndim == 1 and b.ndim == 1:
        return np.convolve(a, b)[:size]
    nb = max(a.ndim, b.ndim) - 1
    a = _align(a, nb)
    b = _align(b, nb)
    out = np.zeros((size,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
    for p in range(size):
        out[p:] += a[p] * b[: size - p]
    return out


class EpsJet:
    """Truncated power series ``c[0] + c[1] eps + ... + c[N] eps**N``.

    ``coeffs`` has the degree axis first; any trailing axes are a batch of
    independent jets evaluated in lockstep.  A state vector is a list of jets,
    one per component.
    """

    __slots__ = ("c",)
    __array_ufunc__ = None

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=float)
        if c.ndim == 0:
            raise ContractError("EpsJet needs at least one coefficient")
        self.c = c

    @classmethod
    def constant(cls, value, degree: int) -> "EpsJet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((degree + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, degree: int) -> "EpsJet":
        """``value + eps``; the jet of the identity map at ``value``."""
        jet = cls.constant(value, degree)
        if degree >= 1:
            jet.c[1] = 1.0
        return jet

    @property
    def degree(self) -> int:
        return self.c.shape[0] - 1

    @property
    def coeffs(self) -> np.ndarray:
        return self.c

    def __getitem__(self, i):
        return self.c[i]

    def __repr__(self):
        return f"EpsJet({self.c.tolist()!r})"

    def _jet_operand(self, other):
        if isinstance(other, EpsJet):
            if other.c.shape[0] != self.c.shape[0]:
                raise ContractError(f"jet degree mismatch: {self.degree} vs {other.degree}")
            return other.c
        return None

    def _add_const(self, s, sign=1.0):
        s = np.asarray(s, dtype=float)
        c = _align(self.c, s.ndim)
        out = np.empty((c.shape[0],) + np.broadcast_shapes(c.shape[1:], s.shape))
        out[...] = c if sign > 0 else -c
        out[0] = out[0] + s
        return EpsJet(out)

    def __add__(self, other):
        oc = self._jet_operand(other)
        if oc is not None:
            nb = max(self.c.ndim, oc.ndim) - 1
            return EpsJet(_align(self.c, nb) + _align(oc, nb))
        if isinstance(other, (_PLAIN, np.ndarray)):
            return self._add_const(other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return EpsJet(-self.c)

    def __sub__(self, other):
        oc = self._jet_operand(other)
        if oc is not None:
            nb = max(self.c.ndim, oc.ndim) - 1
            return EpsJet(_align(self.c, nb) - _align(oc, nb))
        if isinstance(other, (_PLAIN, np.ndarray)):
            return self._add_const(-np.asarray(other, dtype=float))
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (_PLAIN, np.ndarray)):
            return self._add_const(other, sign=-1.0)
        return NotImplemented

    def __mul__(self, other):
        oc = self._jet_operand(other)
        if oc is not None:
            return EpsJet(_cauchy(self.c, oc))
        if isinstance(other, (_PLAIN, np.ndarray)):
            s = np.asarray(other, dtype=float)
            return EpsJet(_align(self.c, s.ndim) * s)
        return NotImplemented

    __rmul__ = __mul__

    @staticmethod
    def _divide(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if np.any(b[0] == 0.0):
            raise RingDivisionError("division by an epsilon jet with zero constant term")
        nb = max(a.ndim, b.ndim) - 1
        a = _align(a, nb)
        b = _align(b, nb)
        q = np.zeros((a.shape[0],) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
        q[0] = a[0] / b[0]
        for k in range(1, a.shape[0]):
            acc = a[k]
            for p in range(1, k + 1):
                acc = acc - b[p] * q[k - p]
            q[k] = acc / b[0]
        return q

    def __truediv__(self, other):
        oc = self._jet_operand(other)
        if oc is not None:
            return EpsJet(self._divide(self.c, oc))
        if isinstance(other, (_PLAIN, np.ndarray)):
            s = np.asarray(other, dtype=float)
            if np.any(s == 0.0):
                raise RingDivisionError("division of an epsilon jet by zero")
            return EpsJet(_align(self.c, s.ndim) / s)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, (_PLAIN, np.ndarray)):
            num = EpsJet.constant(other, self.degree)
            return EpsJet(self._divide(num.c, self.c))
        return NotImplemented

    def __pow__(self, n):
        return ipow(self, n)

    def _sincos(self):
        a = self.c
        s = np.empty_like(a)
        c = np.empty_like(a)
        s[0] = sin(a[0])
        c[0] = cos(a[0])
        for k in range(1, a.shape[0]):
            sk = 0.0
            ck = 0.0
            for j in range(1, k + 1):
                ja = j * a[j]
                sk = sk + ja * c[k - j]
                ck = ck - ja * s[k - j]
            s[k] = sk / k
            c[k] = ck / k
        return EpsJet(s), EpsJet(c)

    def sin(self):
        return self._sincos()[0]

    def cos(self):
        return self._sincos()[1]

    def exp(self):
        a = self.c
        e = np.empty_like(a)
        e[0] = exp(a[0])
        for k in range(1, a.shape[0]):
            acc = 0.0
            for j in range(1, k + 1):
                acc = acc + j * a[j] * e[k - j]
            e[k] = acc / k
        return EpsJet(e)

    def shift(self, k: int) -> "EpsJet":
        """Multiply by ``eps**k`` (coefficients past the degree are dropped)."""
        out = np.zeros_like(self.c)
        if k <= self.degree:
            out[k:] = self.c[: self.c.shape[0] - k]
        return EpsJet(out)

    def evaluate(self, eps):
        """Horner evaluation of the polynomial at a numeric ``eps``."""
        acc = self.c[-1]
        for k in range(self.c.shape[0] - 2, -1, -1):
            acc = acc * eps + self.c[k]
        return acc


# -------------------------------------------------------------------------- duals


class Dual:
    """Value plus derivatives along ``len(directions)`` seed directions."""

    __slots__ = ("value", "directions", "tag")
    __array_ufunc__ = None

    def __init__(self, value, directions: Sequence, tag: int = 0):
        self.value = value
        self.directions = tuple(directions)
        self.tag = tag

    def __repr__(self):
        return f"Dual({self.value!r}, {self.directions!r}, tag={self.tag})"

    def _peer(self, other):
        """Return 'same', 'outer' (other differentiates at a higher level) or 'const'."""
        if isinstance(other, Dual):
            if other.tag == self.tag:
                return "same"
            if other.tag > self.tag:
                return "outer"
        return "const"

    def __add__(self, other):
        kind = self._peer(other)
        if kind == "same":
            return Dual(self.value + other.value,
                        [a + b for a, b in zip(self.directions, other.directions)], self.tag)
        if kind == "outer":
            return other.__radd__(self)
        return Dual(self.value + other, self.directions, self.tag)

    def __radd__(self, other):
        return Dual(other + self.value, self.directions, self.tag)

    def __sub__(self, other):
        kind = self._peer(other)
        if kind == "same":
            return Dual(self.value - other.value,
                        [a - b for a, b in zip(self.directions, other.directions)], self.tag)
        if kind == "outer":
            return other.__rsub__(self)
        return Dual(self.value - other, self.directions, self.tag)

    def __rsub__(self, other):
        return Dual(other - self.value, [-d for d in self.directions], self.tag)

    def __neg__(self):
        return Dual(-self.value, [-d for d in self.directions], self.tag)

    def __mul__(self, other):
        kind = self._peer(other)
        if kind == "same":
            u, v = self.value, other.value
            return Dual(u * v, [du * v + u * dv for du, dv in zip(self.directions, other.directions)],
                        self.tag)
        if kind == "outer":
            return other.__rmul__(self)
        return Dual(self.value * other, [d * other for d in self.directions], self.tag)

    def __rmul__(self, other):
        return Dual(other * self.value, [other * d for d in self.directions], self.tag)

    def __truediv__(self, other):
        kind = self._peer(other)
        if kind == "same":
            _check_nonzero(other.value)
            q = self.value / other.value
            return Dual(q, [(du - q * dv) / other.value
                            for du, dv in zip(self.directions, other.directions)], self.tag)
        if kind == "outer":
            return other.__rtruediv__(self)
        _check_nonzero(other)
        return Dual(self.value / other, [d / other for d in self.directions], self.tag)

    def __rtruediv__(self, other):
        _check_nonzero(self.value)
        q = other / self.value
        return Dual(q, [-(q * d) / self.value for d in self.directions], self.tag)

    def __pow__(self, n):
        return ipow(self, n)

    def sin(self):
        s, c = sin(self.value), cos(self.value)
        return Dual(s, [c * d for d in self.directions], self.tag)

    def cos(self):
        s, c = sin(self.value), cos(self.value)
        return Dual(c, [-(s * d) for d in self.directions], self.tag)

    def exp(self):
        e = exp(self.value)
        return Dual(e, [e * d for d in self.directions], self.tag)


def _check_nonzero(v):
    if isinstance(v, _PLAIN) and v == 0:
        raise RingDivisionError("dual division by a zero value")
    if isinstance(v, Dual):
        _check_nonzero(v.value)


def seed(values: Sequence, tag: int | None = None, extra_directions: int = 0) -> list[Dual]:
    """Wrap each entry of ``values`` in a dual seeded with a unit direction.

    ``extra_directions`` appends zero directions after the identity block, so
    that further variables can be seeded separately with :func:`seed_offset`.
    """
    tag = _fresh_tag() if tag is None else tag
    d = len(values) + extra_directions
    out = []
    for i, v in enumerate(values):
        dirs = [0.0] * d
        dirs[i] = 1.0
        out.append(Dual(v, dirs, tag))
    return out


def seed_block(values: Sequence, offset: int, total: int, tag: int) -> list[Dual]:
    """Seed ``values`` on directions ``offset .. offset+len(values)-1`` of ``total``."""
    out = []
    for i, v in enumerate(values):
        dirs = [0.0] * total
        dirs[offset + i] = 1.0
        out.append(Dual(v, dirs, tag))
    return out


def part(obj, tag: int, index: int | None):
    """Component of ``obj`` at differentiation level ``tag``.

    ``index=None`` selects the value; an integer selects that direction.
    Objects that do not depend on the level are constants for it.
    """
    if isinstance(obj, Dual) and obj.tag == tag:
        return obj.value if index is None else obj.directions[index]
    return obj if index is None else 0.0


def dual_gradient(f: Callable, x: Sequence[float]) -> np.ndarray:
    """Gradient of a scalar function ``f(list_of_scalars)`` at ``x``."""
    tag = _fresh_tag()
    out = f(seed(list(x), tag))
    return np.array([float(part(out, tag, j)) for j in range(len(x))])


def jacobian(f: Callable, x: Sequence[float]):
    """Value and Jacobian of a vector function ``f(list) -> list`` at ``x``."""
    tag = _fresh_tag()
    out = f(seed(list(x), tag))
    value = np.array([float(part(o, tag, None)) for o in out])
    jac = np.array([[float(part(o, tag, j)) for j in range(len(x))] for o in out])
    return value, jac


def jacobian_and_hessian(f: Callable, x: Sequence[float]):
    """Value, Jacobian ``J[i, j]`` and Hessian ``H[i, j, k]`` via two nested duals."""
    n = len(x)
    inner = _fresh_tag()
    outer = _fresh_tag()
    xs = seed(list(x), inner)
    xs = [Dual(xi, [1.0 if j == i else 0.0 for j in range(n)], outer) for i, xi in enumerate(xs)]
    out = f(xs)
    p = len(out)
    value = np.zeros(p)
    jac = np.zeros((p, n))
    hess = np.zeros((p, n, n))
    for i, o in enumerate(out):
        v = part(o, outer, None)
        value[i] = float(part(v, inner, None))
        for j in range(n):
            jac[i, j] = float(part(v, inner, j))
            dj = part(o, outer, j)
            for k in range(n):
                hess[i, j, k] = float(part(dj, inner, k))
    return value, jac, hess


def nested_seed(x0, order: int):
    """Scalar seeded for derivatives up to ``order`` by nesting single-direction duals.

    Returns ``(seeded, tags)`` with tags ordered innermost first.
    """
    if order > MAX_NESTING:
        raise ContractError(f"derivative order {order} exceeds the nesting cap {MAX_NESTING}")
    tags = []
    s = x0
    for _ in range(order):
        tag = _fresh_tag()
        tags.append(tag)
        s = Dual(s, [1.0], tag)
    return s, tags


def extract_derivative(obj, tags: Sequence[int], k: int):
    """``k``-th derivative from a result computed on a :func:`nested_seed` input."""
    if k > len(tags):
        raise ContractError("derivative order exceeds the seeded nesting depth")
    remaining = k
    for tag in reversed(tags):
        if remaining > 0:
            obj = part(obj, tag, 0)
            remaining -= 1
        else:
            obj = part(obj, tag, None)
    return obj


def directional_derivatives(f: Callable, x0: Sequence, v: Sequence, order: int):
    """Derivatives ``d^m/ds^m f(x0 + s v)`` at ``s = 0`` for ``m = 0..order``.

    ``f`` maps a list of scalars to a list of scalars.  Returns a list of
    ``order + 1`` lists (one entry per output component).
    """
    s, tags = nested_seed(0.0, order)
    xs = [xi + vi * s for xi, vi in zip(x0, v)]
    out = f(xs)
    return [[extract_derivative(o, tags, m) for o in out] for m in range(order + 1)]
