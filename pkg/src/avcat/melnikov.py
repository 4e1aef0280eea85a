"""Melnikov functions, averaged functions and the order of the guiding system.

Two independent routes produce the Melnikov functions ``f_i``:

* jet transport: ``f_i`` is the ``eps**i`` coefficient of the time-T flow,
* the Bell recursion (scalar systems only): the integrals ``y_i`` are
  integrated as a coupled quadrature whose integrands combine x-derivatives of
  the ``F_i`` with partial Bell polynomials of lower ``y_j``.

Averaged functions ``g_i`` follow from the ``f_i`` through the stroboscopic
recursion.  For ``i >= 2`` the correction subtracted from ``f_i`` is
``Theta(T) / i!`` where ``Theta`` collects derivatives of lower ``g`` against
time integrals of Bell polynomials of the autonomous expansion ``ytilde``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode
from .errors import ContractError, NoGuidingSystemError, ShortcutNotApplicable
from .expr import SystemSpec
from .scalar import Dual, EpsJet, directional_derivatives, extract_derivative, nested_seed, part, seed

#: Highest order accepted by the Bell route (x-derivatives up to order 3).
BELL_ORDER_CAP = 4
ZERO_RELATIVE = 1e-9

# ---------------------------------------------------------------- Bell polynomials


def _bell_rec(j: int, m: int, y: Sequence, memo: dict):
    key = (j, m)
    if key in memo:
        return memo[key]
    if j == 0 and m == 0:
        val = 1
    elif j == 0 or m == 0:
        val = 0
    else:
        val = 0
        for i in range(1, j - m + 2):
            sub = _bell_rec(j - i, m - 1, y, memo)
            if isinstance(sub, int) and sub == 0:
                continue
            term = math.comb(j - 1, i - 1) * (y[i - 1] * sub)
            val = term if (isinstance(val, int) and val == 0) else val + term
    memo[key] = val
    return val


def bell(j: int, m: int, y: Sequence):
    """Partial Bell polynomial ``B_{j,m}(y_1, ..., y_{j-m+1})``.

    Uses ``B_{j,m} = sum_{i=1}^{j-m+1} C(j-1, i-1) y_i B_{j-i,m-1}``.  Works for
    any ring elements (ints, floats, arrays, jets, duals, polynomials).
    """
    if not (isinstance(j, int) and isinstance(m, int)) or j < 1 or not 1 <= m <= j:
        raise ContractError(f"need integers j >= 1 and 1 <= m <= j, got ({j}, {m})")
    if len(y) != j - m + 1:
        raise ContractError(f"B_{{{j},{m}}} takes {j - m + 1} arguments, got {len(y)}")
    return _bell_rec(j, m, list(y), {})


class BellTable:
    """Memoized ``B_{j,m}`` for one fixed argument list ``y_1, y_2, ...``."""

    def __init__(self, y: Sequence):
        self.y = list(y)
        self._memo: dict = {}

    def __call__(self, j: int, m: int):
        if j < 1 or not 1 <= m <= j or j - m + 1 > len(self.y):
            raise ContractError(f"B_{{{j},{m}}} not available with {len(self.y)} arguments")
        return _bell_rec(j, m, self.y, self._memo)


# ------------------------------------------------------------- Melnikov: jets


def _coef(v, i: int):
    if isinstance(v, EpsJet):
        return v.c[i] if i <= v.degree else 0.0
    if isinstance(v, Dual):
        return Dual(_coef(v.value, i), [_coef(d, i) for d in v.directions], v.tag)
    return v if i == 0 else 0.0


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def jet_flow(spec: SystemSpec, z, mu, degree: int, cfg: ode.IntegratorConfig | None = None):
    """Final jet state of the flow over one period (components may be duals)."""
    return ode.integrate_jet(spec, _as_list(z), _as_list(mu), cfg=cfg, degree=degree,
                             record=False).final


def melnikov_all(spec: SystemSpec, z, mu, degree: int | None = None,
                 cfg: ode.IntegratorConfig | None = None) -> list[np.ndarray]:
    """``[f_1, ..., f_degree]``, each an array with leading axis of size n."""
    degree = spec.max_order if degree is None else degree
    final = jet_flow(spec, z, mu, degree, cfg)
    return [np.array([np.asarray(_coef(v, i), dtype=float) for v in final]) for i in range(1, degree + 1)]


def melnikov_f(spec: SystemSpec, i: int, z, mu, cfg: ode.IntegratorConfig | None = None) -> np.ndarray:
    """``f_i(z, mu) = y_i(T, z, mu) / i!`` from one jet transport of degree ``i``."""
    if i < 1:
        raise ContractError("Melnikov order starts at 1")
    return melnikov_all(spec, z, mu, degree=i, cfg=cfg)[i - 1]


# ------------------------------------------------------------- Melnikov: Bell


def _x_derivatives(fn, t, z, mu, order: int):
    """``[d^m F / dx^m for m in 0..order]`` of a scalar-state order function."""
    if order == 0:
        return [fn(t, [z], mu)[0]]
    ders = directional_derivatives(lambda xs: fn(t, xs, mu), [z], [1.0], order)
    return [d[0] for d in ders]


def melnikov_f_bell(spec: SystemSpec, i: int, z, mu, atol=1e-13, rtol=1e-12) -> np.ndarray | float:
    """``f_i`` for a scalar system through the explicit Bell-polynomial recursion."""
    if spec.n != 1:
        raise ContractError("the Bell route is restricted to scalar systems (n = 1)")
    if not 1 <= i <= BELL_ORDER_CAP:
        raise ContractError(f"Bell route supports orders 1..{BELL_ORDER_CAP}, got {i}")
    z = _as_list(z)[0]
    mu = _as_list(mu)
    fns = {p: spec.order_function(p) for p in range(1, i + 1)}
    fact = [math.factorial(q) for q in range(i + 1)]

    def rhs(s, y):
        ders = {}
        for p, fn in fns.items():
            if fn is not None:
                ders[p] = _x_derivatives(fn, s, z, mu, i - p)
        table = BellTable(y)
        out = []
        for p in range(1, i + 1):
            acc = fact[p] * ders[p][0] if p in ders else 0.0
            for j in range(1, p):
                if (p - j) not in ders:
                    continue
                for m in range(1, j + 1):
                    acc = acc + (fact[p] / fact[j]) * ders[p - j][m] * table(j, m)
            out.append(acc + 0.0 * y[0])
        return out

    y0 = [0.0 * np.asarray(z, dtype=float) for _ in range(i)]
    y0 = [float(v) if np.ndim(v) == 0 else v for v in y0]
    _, states = ode.dopri5(rhs, 0.0, spec.T, y0, atol=atol, rtol=rtol)
    return states[-1][i - 1] / fact[i]


# ------------------------------------------------------------ averaged functions


class _SPoly:
    """Polynomial in time ``s`` whose coefficients are Taylor series in ``dz``.

    ``c`` has shape ``(s_degree + 1, D + 1, *batch)``; axis 1 holds the
    coefficients ``h^{(k)}(z) / k!`` truncated at degree ``D``.
    """

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = c

    @staticmethod
    def _series_mul(a, b):
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        size = a.shape[0]
        for p in range(size):
            out[p:] += a[p] * b[: size - p]
        return out

    def __add__(self, other):
        if isinstance(other, int) and other == 0:
            return self
        a, b = self.c, other.c
        size = max(a.shape[0], b.shape[0])
        out = np.zeros((size,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
        out[: a.shape[0]] += a
        out[: b.shape[0]] += b
        return _SPoly(out)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _SPoly(self.c * other)
        a, b = self.c, other.c
        out = np.zeros((a.shape[0] + b.shape[0] - 1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]))
        for p in range(a.shape[0]):
            for q in range(b.shape[0]):
                out[p + q] += self._series_mul(a[p], b[q])
        return _SPoly(out)

    __rmul__ = __mul__

    def integral(self) -> "_SPoly":
        out = np.zeros((self.c.shape[0] + 1,) + self.c.shape[1:])
        for a in range(self.c.shape[0]):
            out[a + 1] = self.c[a] / (a + 1)
        return _SPoly(out)

    def at(self, s: float) -> np.ndarray:
        acc = np.zeros(self.c.shape[1:])
        for a in range(self.c.shape[0] - 1, -1, -1):
            acc = acc * s + self.c[a]
        return acc


def _series_derivative(series: np.ndarray, m: int = 1) -> np.ndarray:
    out = series
    for _ in range(m):
        nxt = np.zeros_like(out)
        for k in range(out.shape[0] - 1):
            nxt[k] = (k + 1) * out[k + 1]
        out = nxt
    return out


def melnikov_series(spec: SystemSpec, z, mu, order: int, depth: int,
                    cfg: ode.IntegratorConfig | None = None) -> list[np.ndarray]:
    """Taylor series in ``z`` (to degree ``depth``) of ``f_1 .. f_order``; n = 1 only."""
    z0 = _as_list(z)[0]
    x, tags = nested_seed(z0, depth)
    final = jet_flow(spec, [x], mu, order, cfg)[0]
    out = []
    for p in range(1, order + 1):
        series = []
        for k in range(depth + 1):
            d = extract_derivative(final, tags, k)
            series.append(np.asarray(_coef(d, p), dtype=float) / math.factorial(k)
                          + 0.0 * np.asarray(z0, dtype=float))
        out.append(np.array(series))
    return out


def averaged_series(spec: SystemSpec, i: int, z, mu, cfg: ode.IntegratorConfig | None = None):
    """``[g_1 .. g_i]`` as Taylor series in ``z`` via the stroboscopic recursion (n = 1)."""
    if spec.n != 1:
        raise ContractError("the general averaged-function recursion is implemented for n = 1")
    depth = i - 1
    phi = melnikov_series(spec, z, mu, i, depth, cfg)
    T = spec.T
    g: dict[int, np.ndarray] = {}
    ytilde: dict[int, _SPoly] = {}
    s_var = None
    for p in range(1, i + 1):
        theta = 0
        for j in range(1, p):
            table = BellTable([ytilde[q] for q in range(1, j + 1)])
            for m in range(1, j + 1):
                dmg = _series_derivative(g[p - j], m)
                weight = math.factorial(p) / math.factorial(j)
                term = _SPoly(dmg[None] * weight) * table(j, m).integral()
                theta = theta + term
        correction = 0.0 if isinstance(theta, int) else theta.at(T) / math.factorial(p)
        g[p] = (phi[p - 1] - correction) / T
        if s_var is None:
            s_var = np.zeros((2,) + g[p].shape)
            s_var[1, 0] = 1.0
            s_var = _SPoly(s_var)
        yt = _SPoly(g[p][None] * math.factorial(p)) * s_var
        ytilde[p] = yt if isinstance(theta, int) else yt + theta
    return [g[p] for p in range(1, i + 1)]


def averaged_g(spec: SystemSpec, i: int, z, mu, avg: "AveragingResult | None" = None,
               cfg: ode.IntegratorConfig | None = None) -> np.ndarray:
    """Stroboscopic averaged function ``g_i(z, mu)`` (array with leading axis n).

    Scalar systems use the full recursion.  For ``n >= 2`` only the orders
    covered by the vanishing-lower-order identities (``i <= 2 ell``) are
    available, which needs ``avg`` or a grid check through :func:`detect_ell`.
    """
    if i < 1:
        raise ContractError("averaged-function order starts at 1")
    if i == 1:
        return melnikov_f(spec, 1, z, mu, cfg) / spec.T
    if spec.n == 1:
        return averaged_series(spec, i, z, mu, cfg)[i - 1][0][None]
    try:
        return averaged_g_shortcut(spec, i, z, mu, avg=avg, cfg=cfg)
    except ShortcutNotApplicable as exc:
        raise ContractError(f"g_{i} for n = {spec.n} needs the multilinear Bell contraction, "
                            f"which is not implemented: {exc}") from None


def averaged_g_shortcut(spec: SystemSpec, i: int, z, mu, avg: "AveragingResult | None" = None,
                        cfg: ode.IntegratorConfig | None = None) -> np.ndarray:
    """``g_i`` from Melnikov functions when ``f_1 .. f_{ell-1}`` vanish.

    ``g_i = f_i / T`` for ``i < 2 ell`` and
    ``g_{2 ell} = (f_{2 ell} - 1/2 Df_ell . f_ell) / T``.
    """
    avg = avg if avg is not None else average(spec, cfg=cfg)
    ell = avg.ell
    if i > 2 * ell:
        raise ShortcutNotApplicable(f"order {i} exceeds 2*ell = {2 * ell}")
    if i < 2 * ell:
        return melnikov_f(spec, i, z, mu, cfg) / spec.T
    zs = _as_list(z)
    tag_seeds = seed(zs)
    final = jet_flow(spec, tag_seeds, mu, i, cfg)
    tag = tag_seeds[0].tag
    f_ell = np.array([np.asarray(part(_coef(v, ell), tag, None), dtype=float) for v in final])
    f_2ell = np.array([np.asarray(part(_coef(v, i), tag, None), dtype=float) for v in final])
    df = np.array([[np.asarray(part(_coef(v, ell), tag, j), dtype=float) for j in range(spec.n)]
                   for v in final])
    contraction = np.einsum("ij...,j...->i...", df, f_ell)
    return (f_2ell - 0.5 * contraction) / spec.T


# ------------------------------------------------------------------ ell detection


@dataclass
class AveragingResult:
    """Order of the guiding system plus sampled Melnikov/averaged functions."""

    spec: SystemSpec
    ell: int
    T: float
    sup_norms: dict[int, float]
    threshold: float
    grid_z: np.ndarray
    grid_mu: np.ndarray
    f_samples: dict[int, np.ndarray] = field(default_factory=dict)
    g_samples: dict[int, np.ndarray] = field(default_factory=dict)

    def f(self, i: int, z, mu) -> np.ndarray:
        return melnikov_f(self.spec, i, z, mu)

    def g(self, i: int, z, mu) -> np.ndarray:
        return averaged_g(self.spec, i, z, mu, avg=self)

    def guiding(self, z, mu) -> np.ndarray:
        """``g_ell(z, mu)``, the guiding vector field."""
        return melnikov_f(self.spec, self.ell, z, mu) / self.T


def default_grid(spec: SystemSpec, lo=-1.0, hi=1.0, min_points=25):
    """Tensor grid over ``[lo, hi]^(n+k)`` with at least ``min_points`` points."""
    dims = spec.n + spec.k
    per_axis = max(2, math.ceil(min_points ** (1.0 / dims) - 1e-9))
    while per_axis ** dims < min_points:
        per_axis += 1
    axis = np.linspace(lo, hi, per_axis)
    mesh = np.array(list(itertools.product(axis, repeat=dims))).T
    return mesh[: spec.n], mesh[spec.n:]


def detect_ell(spec: SystemSpec, grid=None, cfg: ode.IntegratorConfig | None = None):
    """Smallest order whose averaged function does not vanish on the grid.

    Returns ``(ell, sup_norms, threshold, f_samples)``.  While every lower
    order vanishes, ``g_i = f_i / T``, so only Melnikov functions are needed.
    """
    grid_z, grid_mu = default_grid(spec) if grid is None else grid
    grid_z = np.atleast_2d(np.asarray(grid_z, dtype=float))
    grid_mu = np.asarray(grid_mu, dtype=float).reshape(spec.k, -1)
    if grid_z.shape[1] < 25:
        raise ContractError("the ell-detection grid needs at least 25 points")
    fs = melnikov_all(spec, list(grid_z), list(grid_mu), degree=spec.max_order, cfg=cfg)
    sups = {i + 1: float(np.max(np.abs(f))) for i, f in enumerate(fs)}
    threshold = ZERO_RELATIVE * (1.0 + max(sups.values()))
    samples = {i + 1: f for i, f in enumerate(fs)}
    norms = {}
    for i in range(1, spec.max_order + 1):
        norms[i] = sups[i] / spec.T
        if norms[i] >= threshold:
            return i, norms, threshold, samples
    raise NoGuidingSystemError(
        f"system {spec.name!r}: no guiding system up to order {spec.max_order} "
        f"(all averaged functions below {threshold:.3g} on the grid)")


def average(spec: SystemSpec, grid=None, cfg: ode.IntegratorConfig | None = None) -> AveragingResult:
    """Detect ``ell`` and sample ``f_i`` and ``g_i`` up to ``ell`` on the grid."""
    grid_z, grid_mu = default_grid(spec) if grid is None else grid
    grid_z = np.atleast_2d(np.asarray(grid_z, dtype=float))
    grid_mu = np.asarray(grid_mu, dtype=float).reshape(spec.k, -1)
    ell, norms, threshold, fs = detect_ell(spec, (grid_z, grid_mu), cfg)
    result = AveragingResult(spec, ell, spec.T, norms, threshold, grid_z, grid_mu, f_samples=fs)
    for i in range(1, ell + 1):
        result.g_samples[i] = fs[i] / spec.T
    return result
