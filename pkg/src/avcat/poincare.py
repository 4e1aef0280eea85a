"""Stroboscopic Poincare map and displacement functions of order ell.

The float map integrates the displacement ``y(t) = x(t) - x0`` rather than
``x`` itself, so ``Pi - x0`` keeps full relative precision even when it is of
size ``eps**ell``.  The default integrator here is fixed-step RK4: the
resulting map is an exactly smooth function of ``(x0, mu, eps)``, which Newton
iterations and dual-number Jacobians rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode
from .errors import ContractError
from .expr import SystemSpec
from .melnikov import AveragingResult, _coef
from .scalar import Dual, ipow, part, seed_block, _fresh_tag

DEFAULT_MAP = ode.IntegratorConfig(method="rk4", step_count=512)
#: Below this |eps| (but nonzero) the displacement is taken from the jet expansion.
TINY_EPS = 1e-14


@dataclass
class PoincareEval:
    value: np.ndarray
    jac_x: np.ndarray
    jac_mu: np.ndarray
    residual: np.ndarray


@dataclass
class DisplacementEval:
    delta: np.ndarray
    d_x: np.ndarray
    d_mu: np.ndarray
    d_eps: np.ndarray
    d_xx: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _ell_of(avg) -> int:
    if isinstance(avg, AveragingResult):
        return avg.ell
    ell = int(avg)
    if ell < 1:
        raise ContractError("ell must be a positive integer")
    return ell


def displacement_flow(spec: SystemSpec, x0: Sequence, mu: Sequence, eps,
                      cfg: ode.IntegratorConfig | None = None, mask_batches=False) -> list:
    """``Pi(x0, mu, eps) - x0`` over any scalar realization."""
    cfg = cfg or DEFAULT_MAP
    x0 = list(x0)
    mu = list(mu)
    if len(x0) != spec.n or len(mu) != spec.k:
        raise ContractError("x0/mu dimensions do not match the system")

    def f(t, y):
        return spec.rhs(t, [a + b for a, b in zip(x0, y)], mu, eps)

    y0 = [0.0 * v for v in x0]
    _, states = ode.solve(f, spec, 0.0, spec.T, y0, cfg, mask_batches=mask_batches)
    return states[-1]


def poincare(spec: SystemSpec, x0: Sequence[float], mu: Sequence[float], eps: float,
             cfg: ode.IntegratorConfig | None = None) -> PoincareEval:
    """``Pi(x0, mu, eps)`` with Jacobians in ``x0`` and ``mu`` from seeded duals."""
    n, k = spec.n, spec.k
    x0 = np.asarray(x0, dtype=float)
    tag = _fresh_tag()
    xs = seed_block(list(x0), 0, n + k, tag)
    ms = seed_block(list(np.asarray(mu, dtype=float)), n, n + k, tag)
    y = displacement_flow(spec, xs, ms, float(eps), cfg)
    disp = np.array([float(part(v, tag, None)) for v in y])
    dy = np.array([[float(part(v, tag, j)) for j in range(n + k)] for v in y]).reshape(n, n + k)
    value = x0 + disp
    return PoincareEval(value=value, jac_x=np.eye(n) + dy[:, :n], jac_mu=dy[:, n:],
                        residual=value - x0)


def poincare_value(spec, x0, mu, eps, cfg=None) -> np.ndarray:
    """Float ``Pi(x0, mu, eps)``; components of ``x0`` and ``mu`` may be arrays (a batch)."""
    x0 = np.asarray(x0, dtype=float)
    y = displacement_flow(spec, list(x0), list(mu), float(eps), cfg)
    return x0 + np.array([np.asarray(v, dtype=float) for v in y])


def _leaf_ndim(v) -> int:
    if isinstance(v, Dual):
        return max([_leaf_ndim(v.value)] + [_leaf_ndim(d) for d in v.directions])
    return np.ndim(v)


def _weighted_sum(v, w: np.ndarray, depth: int):
    """Contract the leading time axis of ``v`` against the weights ``w``."""
    if isinstance(v, Dual):
        return Dual(_weighted_sum(v.value, w, depth), [_weighted_sum(d, w, depth) for d in v.directions],
                    v.tag)
    a = np.asarray(v, dtype=float)
    if a.ndim == depth + 1:
        if a.shape[0] == 1:
            return a[0] * w.sum()
        return np.tensordot(w, a, axes=(0, 0))
    return a * w.sum() if a.ndim else float(a) * float(w.sum())


def _first_order_quadrature(spec, xs, ms, cfg):
    """Coefficient 1 of the jet flow, vectorized over time.

    Along the jet flow the first coefficient obeys ``y_1' = F_1(t, x0)``, so the
    RK4 transport reduces to composite Simpson on the RK4 nodes; evaluating all
    nodes at once gives the same sum without the per-step overhead.
    """
    steps = ode._steps_for(spec, 0.0, spec.T, cfg)
    h = spec.T / steps
    t = np.arange(2 * steps + 1) * (0.5 * h)
    w = np.full(t.size, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w *= h / 6.0
    depth = max([_leaf_ndim(v) for v in list(xs) + list(ms)] + [0])
    tt = t.reshape((-1,) + (1,) * depth)
    vals = spec.order_function(1)(tt, list(xs), list(ms))
    return [_weighted_sum(v, w, depth) for v in vals]


def _jet_displacement(spec, ell, xs, ms, eps, cfg):
    """``c_ell + eps c_(ell+1)`` from the jet flow; degree ``ell`` when eps is exactly 0."""
    cfg = cfg if (cfg is not None and cfg.method == "rk4") else ode.DEFAULT_JET
    if isinstance(eps, float) and eps == 0.0 and ell == 1 and spec.order_function(1) is not None:
        return _first_order_quadrature(spec, xs, ms, cfg)
    if isinstance(eps, float) and eps == 0.0:
        final = ode.integrate_jet(spec, xs, ms, cfg=cfg, degree=ell, record=False).final
        return [_coef(v, ell) for v in final]
    final = ode.integrate_jet(spec, xs, ms, cfg=cfg, degree=ell + 1, record=False).final
    return [_coef(v, ell) + eps * _coef(v, ell + 1) for v in final]


def _delta_generic(spec, ell, xs, ms, eps, cfg, mask_batches=False):
    """Displacement of order ell for generic (possibly dual) inputs.

    ``eps`` may itself be a dual; the jet route is used when its value is 0 or tiny.
    """
    e0 = eps
    while isinstance(e0, Dual):
        e0 = e0.value
    if e0 == 0.0 or abs(e0) < TINY_EPS:
        return _jet_displacement(spec, ell, xs, ms, eps, cfg), True
    y = displacement_flow(spec, xs, ms, eps, cfg, mask_batches=mask_batches)
    scale = ipow(eps, ell)
    return [v / scale for v in y], False


def displacement_ell(spec: SystemSpec, avg, x0: Sequence[float], mu: Sequence[float], eps: float,
                     cfg: ode.IntegratorConfig | None = None, second_order: bool = False,
                     eps_derivative: bool = True) -> DisplacementEval:
    """``Delta_ell = (Pi - x0) / eps**ell``, and ``T g_ell``-type jet limit at eps = 0.

    Derivatives: first order in x, mu and (unless ``eps_derivative`` is off) eps;
    with ``second_order`` also the x-Hessian
    ``d_xx[i, j, l] = d^2 Delta_i / dx_j dx_l`` via nested duals.
    """
    ell = _ell_of(avg)
    n, k = spec.n, spec.k
    d = n + k + (1 if eps_derivative else 0)
    inner = _fresh_tag()
    xs = seed_block(list(np.asarray(x0, dtype=float)), 0, d, inner)
    ms = seed_block(list(np.asarray(mu, dtype=float)), n, d, inner)
    es = Dual(float(eps), [0.0] * (d - 1) + [1.0], inner) if eps_derivative else float(eps)
    outer = None
    if second_order:
        outer = _fresh_tag()
        xs = [Dual(xi, [1.0 if j == i else 0.0 for j in range(n)], outer) for i, xi in enumerate(xs)]
    out, used_jet = _delta_generic(spec, ell, xs, ms, es, cfg)
    first = [part(o, outer, None) if outer else o for o in out]
    delta = np.array([float(part(v, inner, None)) for v in first])
    grads = np.array([[float(part(v, inner, j)) for j in range(d)] for v in first]).reshape(n, d)
    hess = None
    if second_order:
        hess = np.zeros((n, n, n))
        for i, o in enumerate(out):
            for j in range(n):
                dj = part(o, outer, j)
                for l in range(n):
                    hess[i, j, l] = float(part(dj, inner, l))
    diagnostics = {"ell": ell, "route": "jet" if used_jet else "float"}
    if used_jet and eps != 0.0:
        diagnostics["tiny_eps"] = True
    d_eps = grads[:, n + k] if eps_derivative else np.full(n, np.nan)
    return DisplacementEval(delta=delta, d_x=grads[:, :n], d_mu=grads[:, n:n + k],
                            d_eps=d_eps, d_xx=hess, diagnostics=diagnostics)


def displacement_derivatives_1d(spec: SystemSpec, avg, x0: float, mu: Sequence[float], eps: float,
                                order: int, cfg=None) -> list[float]:
    """``[Delta, dDelta/dx, ..., d^order Delta/dx^order]`` for scalar systems."""
    from .scalar import extract_derivative, nested_seed

    if spec.n != 1:
        raise ContractError("scalar derivative tower requires n = 1")
    ell = _ell_of(avg)
    x, tags = nested_seed(float(x0), order)
    out, _ = _delta_generic(spec, ell, [x], list(mu), float(eps), cfg)
    return [float(extract_derivative(out[0], tags, m)) for m in range(order + 1)]


def delta_values(spec: SystemSpec, avg, xs: Sequence, mu: Sequence, eps: float,
                 cfg: ode.IntegratorConfig | None = None) -> list:
    """Batched ``Delta_ell`` values; diverged batch entries come back as NaN."""
    ell = _ell_of(avg)
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = _delta_generic(spec, ell, list(xs), list(mu), float(eps), cfg, mask_batches=True)
    return out


def delta_with_jacobian(spec: SystemSpec, avg, xs: Sequence, mu: Sequence, eps: float,
                        cfg: ode.IntegratorConfig | None = None):
    """Batched ``Delta_ell`` and its x-Jacobian ``J[i][j]`` (arrays over the batch)."""
    ell = _ell_of(avg)
    n = spec.n
    tag = _fresh_tag()
    seeded = seed_block(list(xs), 0, n, tag)
    out, _ = _delta_generic(spec, ell, seeded, list(mu), float(eps), cfg, mask_batches=True)
    values = [part(o, tag, None) for o in out]
    jac = [[part(o, tag, j) for j in range(n)] for o in out]
    return values, jac
