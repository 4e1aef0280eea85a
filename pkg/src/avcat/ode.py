"""Time integration over any scalar realization.

States are lists of ``n`` scalars (floats, numpy batches, jets or duals).
Floats use an adaptive Dormand-Prince 5(4) pair by default; epsilon jets are
transported with fixed-step RK4 because they have no natural error norm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DivergenceError
from .expr import SystemSpec
from .scalar import Dual, EpsJet

METHODS = ("dopri5", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """``step_count`` is the number of RK4 steps per period of the system."""

    method: str = "dopri5"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    step_count: int = 512
    max_steps: int = 200_000
    divergence_bound: float = 1e6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ContractError("tolerances must be positive")
        if self.step_count < 16:
            raise ContractError("step_count must be at least 16")
        if self.max_steps < 1:
            raise ContractError("max_steps must be positive")


DEFAULT_FLOAT = IntegratorConfig()
DEFAULT_JET = IntegratorConfig(method="rk4")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    dense: bool

    @property
    def final(self) -> list:
        return self.states[-1]

    def as_array(self) -> np.ndarray:
        """States as a float array of shape ``(len(times), n, ...)``."""
        return np.array([[np.asarray(v, dtype=float) for v in s] for s in self.states])


# ----------------------------------------------------------------- magnitudes


def _value_size(v):
    """Magnitude of the value part, used for the divergence cutoff."""
    if isinstance(v, Dual):
        return _value_size(v.value)
    if isinstance(v, EpsJet):
        return np.abs(v.c[0])
    return np.abs(v)


def _error_size(v):
    """Largest component magnitude (value and derivative parts)."""
    if isinstance(v, Dual):
        m = _error_size(v.value)
        for d in v.directions:
            m = np.maximum(m, _error_size(d))
        return m
    if isinstance(v, EpsJet):
        return np.max(np.abs(v.c), axis=0)
    return np.abs(v)


def _check_divergence(t, y, bound, mask_batches):
    for i, v in enumerate(y):
        size = _value_size(v)
        if np.ndim(size) == 0:
            if not (size <= bound):
                raise DivergenceError(f"state norm exceeded {bound:g} at t={t:.6g}", t, y)
        elif mask_batches:
            bad = ~(size <= bound)
            if np.any(bad):
                y[i] = _mask(v, bad)
        elif not np.all(size <= bound):
            raise DivergenceError(f"state norm exceeded {bound:g} at t={t:.6g}", t, y)
    return y


def _mask(v, bad):
    if isinstance(v, Dual):
        return Dual(_mask(v.value, bad), [_mask(d, bad) for d in v.directions], v.tag)
    if isinstance(v, EpsJet):
        c = v.c.copy()
        c[:, bad] = np.nan
        return EpsJet(c)
    if np.ndim(v) == 0:
        return v
    v = np.array(v, dtype=float)
    v[bad] = np.nan
    return v


# ---------------------------------------------------------------- RK kernels


def rk4(f: Callable, t0: float, t1: float, y0: list, steps: int, *, record=False,
        bound=1e6, mask_batches=False):
    """Classical RK4 with ``steps`` equal steps; returns ``(times, states)``."""
    h = (t1 - t0) / steps
    half = 0.5 * h
    sixth = h / 6.0
    y = list(y0)
    times = [t0]
    states = [y]
    for s in range(steps):
        t = t0 + s * h
        k1 = f(t, y)
        k2 = f(t + half, [a + half * b for a, b in zip(y, k1)])
        k3 = f(t + half, [a + half * b for a, b in zip(y, k2)])
        k4 = f(t + h, [a + h * b for a, b in zip(y, k3)])
        y = [a + sixth * ((b1 + b4) + 2.0 * (b2 + b3)) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
        y = _check_divergence(t + h, y, bound, mask_batches)
        if record:
            times.append(t0 + (s + 1) * h)
            states.append(y)
    if not record:
        times.append(t1)
        states.append(y)
    times[-1] = t1
    return np.array(times), states


_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6] + (0.0,)
_B_LOW = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(b - bl for b, bl in zip(_B, _B_LOW))


def _combine(y, h, ks, coeffs):
    out = []
    for i, yi in enumerate(y):
        acc = None
        for c, k in zip(coeffs, ks):
            if c != 0.0:
                term = c * k[i]
                acc = term if acc is None else acc + term
        out.append(yi if acc is None else yi + h * acc)
    return out


def dopri5(f: Callable, t0: float, t1: float, y0: list, *, atol=1e-10, rtol=1e-10,
           max_steps=200_000, record=False, bound=1e6, h0=None):
    """Adaptive Dormand-Prince 5(4) with a max-norm error estimate."""
    span = t1 - t0
    if span == 0:
        return np.array([t0]), [list(y0)]
    direction = 1.0 if span > 0 else -1.0
    h = direction * (abs(h0) if h0 else abs(span) / 100.0)
    t = t0
    y = list(y0)
    times = [t0]
    states = [y]
    k1 = f(t, y)
    for _ in range(max_steps):
        if direction * (t + h - t1) > 0:
            h = t1 - t
        ks = [k1]
        for stage in range(1, 7):
            ks.append(f(t + _C[stage] * h, _combine(y, h, ks, _A[stage])))
        y_new = ks_y = _combine(y, h, ks[:6], _B[:6])
        err_terms = _combine([0.0 * v for v in y], h, ks, _E)
        err = 0.0
        for e, a, b in zip(err_terms, y, ks_y):
            scale = atol + rtol * np.maximum(_error_size(a), _error_size(b))
            ratio = _error_size(e) / scale
            err = max(err, float(np.nanmax(ratio)) if np.ndim(ratio) else float(ratio))
        if not math.isfinite(err):
            err = 1e10
        if err <= 1.0:
            t = t1 if abs(t1 - (t + h)) <= 1e-14 * max(1.0, abs(t1)) else t + h
            y = _check_divergence(t, y_new, bound, True)
            k1 = ks[6]
            if record or t == t1:
                times.append(t)
                states.append(y)
            if t == t1:
                return np.array(times), states
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = max(0.2, 0.9 * err ** -0.2)
        h *= factor
        if abs(h) < 1e-14 * max(1.0, abs(t)):
            raise DivergenceError(f"step size underflow at t={t:.6g}", t, y)
    raise DivergenceError(f"max_steps={max_steps} exhausted at t={t:.6g}", t, y)


# ------------------------------------------------------------------ system API


def _steps_for(spec: SystemSpec, t0: float, t1: float, cfg: IntegratorConfig) -> int:
    return max(1, int(math.ceil(cfg.step_count * abs(t1 - t0) / spec.T - 1e-9)))


def solve(f: Callable, spec: SystemSpec, t0: float, t1: float, y0: list, cfg: IntegratorConfig,
          record=False, mask_batches=False):
    """Integrate a right-hand side ``f(t, y)`` with the method chosen by ``cfg``."""
    if cfg.method == "rk4":
        return rk4(f, t0, t1, y0, _steps_for(spec, t0, t1, cfg), record=record,
                   bound=cfg.divergence_bound, mask_batches=mask_batches)
    return dopri5(f, t0, t1, y0, atol=cfg.abs_tol, rtol=cfg.rel_tol, max_steps=cfg.max_steps,
                  record=record, bound=cfg.divergence_bound)


def _check_inputs(spec, x0, mu):
    if len(x0) != spec.n:
        raise ContractError(f"x0 has {len(x0)} components, system {spec.name!r} has n={spec.n}")
    if len(mu) != spec.k:
        raise ContractError(f"mu has {len(mu)} components, system {spec.name!r} has k={spec.k}")


def integrate(spec: SystemSpec, x0: Sequence, mu: Sequence, eps, t_span=None,
              cfg: IntegratorConfig | None = None, record=True, mask_batches=False) -> Trajectory:
    """Flow of the full system at fixed ``(mu, eps)`` from ``x0`` over ``t_span``."""
    cfg = cfg or DEFAULT_FLOAT
    _check_inputs(spec, x0, mu)
    t0, t1 = (0.0, spec.T) if t_span is None else (float(t_span[0]), float(t_span[1]))
    mu = list(mu)

    def f(t, y):
        return spec.rhs(t, y, mu, eps)

    times, states = solve(f, spec, t0, t1, [v for v in x0], cfg, record, mask_batches)
    return Trajectory(times, states, dense=record)


def lift_jet(v, degree: int):
    """Constant epsilon jet (componentwise through duals) with value ``v``."""
    if isinstance(v, EpsJet):
        if v.degree != degree:
            raise ContractError("jet degree mismatch")
        return v
    if isinstance(v, Dual):
        return Dual(lift_jet(v.value, degree), [lift_jet(d, degree) for d in v.directions], v.tag)
    return EpsJet.constant(v, degree)


def integrate_jet(spec: SystemSpec, x0: Sequence, mu: Sequence, t_span=None,
                  cfg: IntegratorConfig | None = None, degree: int | None = None,
                  record=True) -> Trajectory:
    """Transport the epsilon expansion of the flow; coefficient i is ``y_i / i!``."""
    cfg = cfg or DEFAULT_JET
    if cfg.method != "rk4":
        raise ContractError("jet transport requires the fixed-step rk4 method")
    _check_inputs(spec, x0, mu)
    degree = spec.max_order if degree is None else int(degree)
    if degree < 1:
        raise ContractError("jet degree must be at least 1")
    t0, t1 = (0.0, spec.T) if t_span is None else (float(t_span[0]), float(t_span[1]))
    mu = list(mu)
    y0 = [lift_jet(v, degree) for v in x0]

    def f(t, y):
        return spec.rhs_jet(t, y, mu, degree)

    times, states = solve(f, spec, t0, t1, y0, cfg, record)
    return Trajectory(times, states, dense=record)


def write_csv(traj: Trajectory, path_or_file) -> None:
    """Write ``t,x1,...,xn`` rows with 17 significant digits (float trajectories)."""
    rows = traj.as_array()
    if rows.ndim != 2:
        raise ContractError("CSV export needs an unbatched float trajectory")
    n = rows.shape[1]
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
        for t, row in zip(traj.times, rows):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
    finally:
        if own:
            fh.close()
