"""Fixed points of the stroboscopic map: Newton, continuation, folds, scans.

Fixed points with ``eps != 0`` are the zeros of the displacement function of
order ell; at ``eps = 0`` the same code follows the zero set of ``T g_ell``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ode
from .errors import AvcatError, ContractError, DivergenceError
from .expr import SystemSpec
from .poincare import _delta_generic, _ell_of, delta_values, displacement_ell
from .scalar import Dual, _fresh_tag, extract_derivative, nested_seed, part, seed_block

NEWTON_TOL = 1e-12
HYPERBOLICITY_TOL = 1e-6
NONDEGENERACY_TOL = 1e-6
FOLD_TEST_TOL = 1e-10


@dataclass
class BranchPoint:
    x: np.ndarray
    mu: float
    eps: float
    stability: str
    test_fold: float
    eigs: np.ndarray
    residual: float = 0.0
    s: float = 0.0
    mu_vector: np.ndarray | None = None

    @property
    def u(self) -> np.ndarray:
        return np.append(self.x, self.mu)


@dataclass
class Branch:
    points: list[BranchPoint]
    reason: str = ""

    @property
    def mus(self) -> np.ndarray:
        return np.array([p.mu for p in self.points])

    @property
    def xs(self) -> np.ndarray:
        return np.array([p.x for p in self.points])

    def fold_intervals(self) -> list[int]:
        """Indices ``i`` where ``test_fold`` changes sign between points i and i+1."""
        out = []
        for i in range(len(self.points) - 1):
            a, b = self.points[i].test_fold, self.points[i + 1].test_fold
            if a == 0.0 or a * b < 0:
                out.append(i)
        return out


@dataclass
class NewtonResult:
    converged: bool
    point: BranchPoint | None
    residuals: list[float]
    reason: str = ""


@dataclass
class FoldRecord:
    mu_fold: float
    x_fold: np.ndarray
    side_counts: tuple[int, int] | None
    classification: str
    F1: float
    F2: float
    test_fold: float
    raw: dict = field(default_factory=dict)


@dataclass
class ScanResult:
    count: int
    roots: np.ndarray
    diverged_cells: int
    refined_cells: int = 0


@dataclass(frozen=True)
class ContinuationConfig:
    ds: float = 1e-2
    ds_min: float = 1e-5
    ds_max: float = 5e-2
    max_step: float = 0.1
    max_points: int = 4000
    max_halvings: int = 3
    grow_after: int = 4
    newton_tol: float = NEWTON_TOL
    corrector_iterations: int = 10


# ------------------------------------------------------------------- evaluation


def _mu_vector(mu_base, mu_index: int, value: float) -> np.ndarray:
    mu = np.array(mu_base, dtype=float).reshape(-1)
    mu[mu_index] = value
    return mu


def _stability(jac_x_delta: np.ndarray, eps: float, ell: int):
    n = jac_x_delta.shape[0]
    monodromy = np.eye(n) + (eps ** ell) * jac_x_delta
    eigs = np.linalg.eigvals(monodromy)
    mods = np.abs(eigs)
    if np.any(np.abs(eigs - 1.0) < HYPERBOLICITY_TOL):
        label = "nonhyperbolic"
    elif np.all(mods < 1.0):
        label = "stable"
    else:
        label = "unstable"
    return label, eigs


def _point(spec, ell, x, mu_vec, mu_index, eps, ev, s=0.0) -> BranchPoint:
    label, eigs = _stability(ev.d_x, eps, ell)
    return BranchPoint(x=np.array(x, dtype=float), mu=float(mu_vec[mu_index]), eps=float(eps),
                       stability=label, test_fold=float(np.linalg.det(ev.d_x)), eigs=eigs,
                       residual=float(np.linalg.norm(ev.delta)), s=s, mu_vector=np.array(mu_vec))


def _eval(spec, ell, x, mu_vec, eps, cfg):
    return displacement_ell(spec, ell, x, mu_vec, eps, cfg, eps_derivative=False)


def newton_fixed_point(spec: SystemSpec, avg, x_guess: Sequence[float], mu, eps: float,
                       cfg: ode.IntegratorConfig | None = None, max_iter: int = 25,
                       tol: float = NEWTON_TOL, mu_index: int = 0) -> NewtonResult:
    """Newton's method on ``Delta_ell(., mu, eps) = 0``.

    Converged when ``|Delta_ell| < tol (1 + |x|)`` and the final step contracted
    the residual by at least a factor two.  Never returns an unconverged point.
    """
    ell = _ell_of(avg)
    mu_vec = np.atleast_1d(np.asarray(mu, dtype=float))
    x = np.array(x_guess, dtype=float).reshape(spec.n)
    residuals: list[float] = []
    for _ in range(max_iter + 1):
        try:
            ev = _eval(spec, ell, x, mu_vec, eps, cfg)
        except (DivergenceError, ZeroDivisionError) as exc:
            return NewtonResult(False, None, residuals, f"evaluation failed: {exc}")
        r = float(np.linalg.norm(ev.delta))
        if not math.isfinite(r):
            return NewtonResult(False, None, residuals, "non-finite residual")
        residuals.append(r)
        bound = tol * (1.0 + float(np.linalg.norm(x)))
        if r < bound:
            if len(residuals) >= 2 and residuals[-2] >= bound and r > 0.5 * residuals[-2]:
                return NewtonResult(False, None, residuals, "final step did not contract")
            return NewtonResult(True, _point(spec, ell, x, mu_vec, mu_index, eps, ev), residuals)
        J = ev.d_x
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e14:
            return NewtonResult(False, None, residuals, "singular Jacobian")
        dx = np.linalg.solve(J, -ev.delta)
        step = float(np.linalg.norm(dx))
        if step > 1.0:
            dx *= 1.0 / step
        x = x + dx
    return NewtonResult(False, None, residuals, f"no convergence in {max_iter} iterations")


# ----------------------------------------------------------------- continuation


def _full_jacobian(ev, mu_index):
    return np.hstack([ev.d_x, ev.d_mu[:, mu_index:mu_index + 1]])


def _tangent(J: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    return t / np.linalg.norm(t)


def _correct(spec, ell, u_pred, tau, mu_base, mu_index, eps, cfg, tol, iterations):
    """Newton on ``[Delta(u); tau . (u - u_pred)] = 0``; returns (u, ev) or None."""
    n = spec.n
    u = np.array(u_pred, dtype=float)
    prev = None
    for _ in range(iterations):
        mu_vec = _mu_vector(mu_base, mu_index, u[n])
        try:
            ev = _eval(spec, ell, u[:n], mu_vec, eps, cfg)
        except (DivergenceError, ZeroDivisionError):
            return None
        r = float(np.linalg.norm(ev.delta))
        if not math.isfinite(r):
            return None
        bound = tol * (1.0 + float(np.linalg.norm(u[:n])))
        if r < bound:
            if prev is not None and prev >= bound and r > 0.5 * prev:
                return None
            return u, ev
        A = np.vstack([_full_jacobian(ev, mu_index), tau[None, :]])
        rhs = np.append(-ev.delta, -float(tau @ (u - u_pred)))
        try:
            du = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        u = u + du
        prev = r
    return None


def continue_branch(spec: SystemSpec, avg, seed: BranchPoint, mu_range: Sequence[float], eps: float,
                    ccfg: ContinuationConfig | None = None, cfg: ode.IntegratorConfig | None = None,
                    direction: int = 1, x_window: Sequence[float] | None = None,
                    mu_index: int = 0) -> Branch:
    """Pseudo-arclength continuation of fixed points in one parameter component.

    Secant predictor, hyperplane corrector.  The branch stops when it leaves
    ``mu_range`` (or the box ``x_window``), closes on itself, or the corrector
    fails after ``max_halvings`` step halvings.
    """
    ccfg = ccfg or ContinuationConfig()
    ell = _ell_of(avg)
    n = spec.n
    mu_base = seed.mu_vector if seed.mu_vector is not None else np.atleast_1d(seed.mu)
    lo, hi = float(min(mu_range)), float(max(mu_range))
    u = seed.u
    ev = _eval(spec, ell, u[:n], _mu_vector(mu_base, mu_index, u[n]), eps, cfg)
    tau = _tangent(_full_jacobian(ev, mu_index))
    ref = tau[n] if abs(tau[n]) > 1e-8 else tau[0]
    if ref * direction < 0:
        tau = -tau
    points = [seed]
    ds = ccfg.ds
    clean = 0
    reason = "max points"
    while len(points) < ccfg.max_points:
        halvings = 0
        while True:
            u_pred = u + ds * tau
            out = _correct(spec, ell, u_pred, tau, mu_base, mu_index, eps, cfg,
                           ccfg.newton_tol, ccfg.corrector_iterations)
            ok = out is not None
            if ok:
                u_new, ev_new = out
                step = float(np.linalg.norm(u_new - u))
                ok = 0.0 < step <= ccfg.max_step and float(tau @ (u_new - u)) > 0.5 * step
            if ok:
                break
            halvings += 1
            clean = 0
            ds *= 0.5
            if halvings > ccfg.max_halvings or ds < ccfg.ds_min:
                return Branch(points, f"corrector failure at mu={u[n]:.6g}")
        mu_vec = _mu_vector(mu_base, mu_index, u_new[n])
        new_tau = (u_new - u) / step
        p = _point(spec, ell, u_new[:n], mu_vec, mu_index, eps, ev_new, s=points[-1].s + step)
        points.append(p)
        u, tau = u_new, new_tau
        if not lo <= u[n] <= hi:
            reason = "left mu range"
            break
        if x_window is not None and not _inside(u[:n], x_window):
            reason = "left x window"
            break
        if len(points) > 10 and np.linalg.norm(u - points[0].u) < 0.75 * ds:
            reason = "closed loop"
            break
        clean += 1
        if clean >= ccfg.grow_after:
            ds = min(2.0 * ds, ccfg.ds_max)
            clean = 0
    return Branch(points, reason)


def _inside(x, window) -> bool:
    lo, hi = window
    return bool(np.all(x >= lo) and np.all(x <= hi))


def trace_branch(spec: SystemSpec, avg, seed: BranchPoint, mu_range, eps: float,
                 ccfg: ContinuationConfig | None = None, cfg=None, x_window=None,
                 mu_index: int = 0) -> Branch:
    """Continue from ``seed`` in both directions and join into one ordered branch."""
    fwd = continue_branch(spec, avg, seed, mu_range, eps, ccfg, cfg, +1, x_window, mu_index)
    bwd = continue_branch(spec, avg, seed, mu_range, eps, ccfg, cfg, -1, x_window, mu_index)
    pts = list(reversed(bwd.points[1:])) + fwd.points
    total = 0.0
    for i, p in enumerate(pts):
        if i:
            total += float(np.linalg.norm(p.u - pts[i - 1].u))
        p.s = total
    return Branch(pts, f"backward: {bwd.reason}; forward: {fwd.reason}")


# ------------------------------------------------------------------------ folds


def locate_fold(spec: SystemSpec, avg, branch: Branch, index: int, eps: float, cfg=None,
                ccfg: ContinuationConfig | None = None, x_interval=None, mu_index: int = 0,
                side_offset: float | None = None) -> FoldRecord:
    """Refine a sign change of ``det(dDelta/dx)`` between points ``index`` and ``index+1``.

    Safeguarded regula falsi on the chord parameter, with every trial point
    corrected back onto the branch.  Then tests the saddle-node conditions:
    ``(F1) |dDelta/dmu| > tol`` and ``(F2) |d2Delta/dx2| > tol``, both relative
    to the period; for n > 1 along the left/right null vectors.
    """
    ccfg = ccfg or ContinuationConfig()
    ell = _ell_of(avg)
    n = spec.n
    a, b = branch.points[index], branch.points[index + 1]
    mu_base = a.mu_vector if a.mu_vector is not None else np.atleast_1d(a.mu)
    ua, ub = a.u, b.u
    chord = ub - ua
    length = float(np.linalg.norm(chord))
    tau = chord / length

    def corrected(s):
        if s <= 0.0:
            return ua, _eval(spec, ell, ua[:n], _mu_vector(mu_base, mu_index, ua[n]), eps, cfg)
        if s >= length:
            return ub, _eval(spec, ell, ub[:n], _mu_vector(mu_base, mu_index, ub[n]), eps, cfg)
        out = _correct(spec, ell, ua + s * tau, tau, mu_base, mu_index, eps, cfg,
                       ccfg.newton_tol, ccfg.corrector_iterations)
        if out is None:
            raise AvcatError("corrector failed while refining a fold")
        return out

    lo, hi = 0.0, length
    u_lo, ev_lo = corrected(lo)
    u_hi, ev_hi = corrected(hi)
    f_lo, f_hi = np.linalg.det(ev_lo.d_x), np.linalg.det(ev_hi.d_x)
    best = (u_lo, ev_lo, f_lo) if abs(f_lo) <= abs(f_hi) else (u_hi, ev_hi, f_hi)
    # Illinois variant of regula falsi: the retained end's value is halved when
    # the same end survives twice in a row.
    last = 0
    for _ in range(200):
        if abs(best[2]) < FOLD_TEST_TOL or hi - lo < 1e-15 * max(1.0, length) or f_lo * f_hi > 0:
            break
        s = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not lo < s < hi:
            s = 0.5 * (lo + hi)
        u_s, ev_s = corrected(s)
        f_s = np.linalg.det(ev_s.d_x)
        if abs(f_s) < abs(best[2]):
            best = (u_s, ev_s, f_s)
        if f_s * f_lo > 0:
            lo, f_lo = s, f_s
            if last == -1:
                f_hi *= 0.5
            last = -1
        else:
            hi, f_hi = s, f_s
            if last == +1:
                f_lo *= 0.5
            last = +1
    u_star, _, f_star = best
    mu_vec = _mu_vector(mu_base, mu_index, u_star[n])
    ev2 = displacement_ell(spec, ell, u_star[:n], mu_vec, eps, cfg, second_order=True,
                           eps_derivative=False)
    F1_raw, F2_raw, extra = _saddle_node_quantities(ev2, mu_index)
    scale = spec.T
    F1, F2 = abs(F1_raw) / scale, abs(F2_raw) / scale
    classification = "fold" if (F1 > NONDEGENERACY_TOL and F2 > NONDEGENERACY_TOL) else "degenerate"
    side_counts = None
    if n == 1 and x_interval is not None:
        off = side_offset if side_offset is not None else 1e-3 * (1.0 + abs(u_star[n]))
        below = count_fixed_points_scan(spec, ell, x_interval, _mu_vector(mu_base, mu_index, u_star[n] - off),
                                        eps, cfg=cfg)
        above = count_fixed_points_scan(spec, ell, x_interval, _mu_vector(mu_base, mu_index, u_star[n] + off),
                                        eps, cfg=cfg)
        side_counts = (below.count, above.count)
    return FoldRecord(mu_fold=float(u_star[n]), x_fold=np.array(u_star[:n]), side_counts=side_counts,
                      classification=classification, F1=F1, F2=F2, test_fold=float(f_star),
                      raw={"dDelta_dmu": F1_raw, "d2Delta_dx2": F2_raw, **extra})


def _saddle_node_quantities(ev, mu_index):
    """(F1, F2) raw values: plain derivatives for n = 1, null-vector reductions otherwise."""
    n = ev.d_x.shape[0]
    if n == 1:
        return float(ev.d_mu[0, mu_index]), float(ev.d_xx[0, 0, 0]), {}
    U, S, Vt = np.linalg.svd(ev.d_x)
    w, v = U[:, -1], Vt[-1]
    F1 = float(w @ ev.d_mu[:, mu_index])
    F2 = float(w @ np.einsum("ijk,j,k->i", ev.d_xx, v, v))
    return F1, F2, {"singular_values": S.tolist()}


def find_folds(spec, avg, branch: Branch, eps, cfg=None, x_interval=None, mu_index=0) -> list[FoldRecord]:
    return [locate_fold(spec, avg, branch, i, eps, cfg, x_interval=x_interval, mu_index=mu_index)
            for i in branch.fold_intervals()]


# -------------------------------------------------------------------- scan oracle


def _bisect_batch(spec, ell, lo, hi, f_lo, mu_cols, eps, cfg, tol):
    """Vectorized bisection of sign-change brackets (scalar systems)."""
    lo, hi, f_lo = lo.copy(), hi.copy(), f_lo.copy()
    while lo.size and np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        f_mid = np.asarray(delta_values(spec, ell, [mid], mu_cols, eps, cfg)[0], dtype=float)
        left = np.sign(f_mid) == np.sign(f_lo)
        exact = f_mid == 0.0
        lo = np.where(left & ~exact, mid, lo)
        f_lo = np.where(left & ~exact, f_mid, f_lo)
        hi = np.where(left & ~exact, hi, mid)
        lo = np.where(exact, mid, lo)
        hi = np.where(exact, mid, hi)
    return 0.5 * (lo + hi)


def _brackets(values: np.ndarray):
    finite = np.isfinite(values)
    s = np.sign(values)
    pair_ok = finite[:-1] & finite[1:]
    change = pair_ok & (s[:-1] * s[1:] < 0)
    zeros = finite & (values == 0.0)
    return change, zeros


def scan_rows(spec: SystemSpec, avg, x_interval, mus: Sequence, eps: float, grid_size: int = 2001,
              cfg=None, tol: float = 1e-10, refine_ties: bool = True, mu_base=None, mu_index: int = 0):
    """Root brackets of ``Delta_ell(., mu, eps)`` for every ``mu`` in ``mus`` at once.

    Returns a list of ``ScanResult`` (one per mu).  Scalar systems only.
    """
    if spec.n != 1:
        raise ContractError("the scan oracle needs a scalar system (n = 1)")
    if grid_size < 1001:
        raise ContractError("grid_size must be at least 1001")
    ell = _ell_of(avg)
    mus = np.asarray(mus, dtype=float).reshape(-1)
    m = mus.size
    mu_base = np.zeros(spec.k) if mu_base is None else np.asarray(mu_base, dtype=float)
    a, b = float(x_interval[0]), float(x_interval[1])
    xs = np.linspace(a, b, grid_size)
    X = np.broadcast_to(xs, (m, grid_size))
    mu_cols = [np.broadcast_to(mus[:, None] if j == mu_index else mu_base[j], (m, grid_size))
               for j in range(spec.k)]
    V = np.asarray(delta_values(spec, ell, [X], mu_cols, eps, cfg)[0], dtype=float)
    V = np.broadcast_to(V, (m, grid_size))

    rows_lo, rows_hi, rows_flo, rows_id = [], [], [], []
    exact_roots = [[] for _ in range(m)]
    diverged = [int(np.sum(~np.isfinite(V[r]))) for r in range(m)]
    refined = [0] * m
    tie_rows, tie_lo, tie_hi = [], [], []
    for r in range(m):
        v = V[r]
        change, zeros = _brackets(v)
        idx = np.nonzero(change)[0]
        rows_lo.append(xs[idx])
        rows_hi.append(xs[idx + 1])
        rows_flo.append(v[idx])
        rows_id.append(np.full(idx.size, r))
        exact_roots[r] = list(xs[zeros])
        if refine_ties:
            av = np.abs(v)
            k = np.arange(1, grid_size - 1)
            fin = np.isfinite(v[k - 1]) & np.isfinite(v[k]) & np.isfinite(v[k + 1])
            local_min = fin & (av[k] <= av[k - 1]) & (av[k] <= av[k + 1])
            same_sign = (np.sign(v[k - 1]) == np.sign(v[k])) & (np.sign(v[k]) == np.sign(v[k + 1]))
            cand = k[local_min & same_sign & (v[k] != 0)]
            for c in cand:
                tie_rows.append(r)
                tie_lo.append(xs[c - 1])
                tie_hi.append(xs[c + 1])
    if tie_rows:
        sub = 21
        t = np.linspace(0.0, 1.0, sub)
        TL = np.array(tie_lo)[:, None] + (np.array(tie_hi) - np.array(tie_lo))[:, None] * t[None, :]
        tr = np.array(tie_rows)
        sub_mu = [np.broadcast_to((mus[tr] if j == mu_index else np.full(tr.size, mu_base[j]))[:, None],
                                  TL.shape) for j in range(spec.k)]
        TV = np.asarray(delta_values(spec, ell, [TL], sub_mu, eps, cfg)[0], dtype=float)
        TV = np.broadcast_to(TV, TL.shape)
        for q in range(tr.size):
            change, zeros = _brackets(TV[q])
            idx = np.nonzero(change)[0]
            if idx.size:
                refined[tr[q]] += 1
                rows_lo.append(TL[q, idx])
                rows_hi.append(TL[q, idx + 1])
                rows_flo.append(TV[q, idx])
                rows_id.append(np.full(idx.size, tr[q]))
            exact_roots[tr[q]].extend(TL[q, zeros])
    lo = np.concatenate(rows_lo) if rows_lo else np.zeros(0)
    hi = np.concatenate(rows_hi) if rows_hi else np.zeros(0)
    flo = np.concatenate(rows_flo) if rows_flo else np.zeros(0)
    rid = np.concatenate(rows_id).astype(int) if rows_id else np.zeros(0, dtype=int)
    mu_b = [(mus[rid] if j == mu_index else np.full(rid.size, mu_base[j])) for j in range(spec.k)]
    roots = _bisect_batch(spec, ell, lo, hi, flo, mu_b, eps, cfg, tol)
    results = []
    for r in range(m):
        rr = np.sort(np.concatenate([roots[rid == r], np.array(exact_roots[r], dtype=float)]))
        results.append(ScanResult(count=int(rr.size), roots=rr, diverged_cells=diverged[r],
                                  refined_cells=refined[r]))
    return results


def count_fixed_points_scan(spec: SystemSpec, avg, x_interval, mu, eps: float, grid_size: int = 2001,
                            cfg=None, tol: float = 1e-10, mu_index: int = 0) -> ScanResult:
    """Independent brute-force count of zeros of ``Delta_ell(., mu, eps)`` on an interval."""
    mu_vec = np.atleast_1d(np.asarray(mu, dtype=float))
    return scan_rows(spec, avg, x_interval, [mu_vec[mu_index]], eps, grid_size, cfg, tol,
                     mu_base=mu_vec, mu_index=mu_index)[0]


# ------------------------------------------------------------- batched Newton


def delta_batch(spec: SystemSpec, ell: int, X: Sequence, MU: Sequence, eps: float, cfg=None,
                mu_index: int | None = None):
    """Batched ``Delta_ell`` with x-Jacobian (and optionally one mu column).

    Returns ``(values (n, B), J_x (n, n, B), J_mu (n, B) or None)``.
    """
    n = spec.n
    d = n + (1 if mu_index is not None else 0)
    tag = _fresh_tag()
    xs = seed_block([np.asarray(v, dtype=float) for v in X], 0, d, tag)
    mus = [np.asarray(v, dtype=float) for v in MU]
    if mu_index is not None:
        mus[mu_index] = Dual(mus[mu_index], [0.0] * n + [1.0], tag)
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = _delta_generic(spec, ell, xs, mus, float(eps), cfg, mask_batches=True)
    B = np.broadcast_shapes(*[np.shape(v) for v in X], *[np.shape(v) for v in MU])
    vals = np.array([np.broadcast_to(np.asarray(part(o, tag, None), dtype=float), B) for o in out])
    jx = np.array([[np.broadcast_to(np.asarray(part(o, tag, j), dtype=float), B) for j in range(n)]
                   for o in out])
    jm = None
    if mu_index is not None:
        jm = np.array([np.broadcast_to(np.asarray(part(o, tag, n), dtype=float), B) for o in out])
    return vals, jx, jm


def polish_batch(spec: SystemSpec, ell: int, X: np.ndarray, MU: np.ndarray, eps: float, cfg=None,
                 iterations: int = 6, tol: float = NEWTON_TOL):
    """Newton in x at fixed mu for a batch of guesses ``X (n, B)``, ``MU (k, B)``.

    Only unconverged members are re-evaluated; members whose iterates blow up
    or whose Jacobian is singular are dropped.  Returns
    ``(X, converged_mask, residuals)``.
    """
    X = np.array(X, dtype=float)
    MU = [np.broadcast_to(np.asarray(m, dtype=float), X.shape[1:]) for m in MU]
    n, B = X.shape
    res = np.full(B, np.inf)
    conv = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    for it in range(iterations + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Xa = X[:, idx]
        vals, jx, _ = delta_batch(spec, ell, list(Xa), [m[idx] for m in MU], eps, cfg)
        r = np.linalg.norm(vals, axis=0)
        res[idx] = r
        done = np.isfinite(r) & (r < tol * (1.0 + np.linalg.norm(Xa, axis=0)))
        conv[idx] = done
        J = np.moveaxis(jx, -1, 0)
        ok = np.isfinite(r) & ~done & np.all(np.isfinite(J), axis=(1, 2))
        ok &= np.abs(np.linalg.det(np.where(ok[:, None, None], J, np.eye(n)))) > 1e-300
        ok &= np.linalg.norm(Xa, axis=0) < 1e3
        active[idx] = ok
        if it == iterations or not np.any(ok):
            break
        rhs = np.moveaxis(vals, -1, 0)
        step = np.linalg.solve(J[ok], -rhs[ok][..., None])[..., 0]
        X[:, idx[ok]] += step.T
    return X, conv, res


def project_batch(spec: SystemSpec, ell: int, U: np.ndarray, normals: np.ndarray, mu_base, eps: float,
                  cfg=None, mu_index: int = 0, iterations: int = 8, tol: float = NEWTON_TOL):
    """Move points ``U (n+1, B)`` onto the zero set within the hyperplanes ``c . (u - U) = 0``.

    ``normals`` holds the hyperplane normals ``c`` as columns.  Returns ``(U, converged)``.
    """
    n = spec.n
    U0 = np.array(U, dtype=float)
    U = U0.copy()
    C = np.array(normals, dtype=float)
    B = U.shape[1]
    mu_base = np.asarray(mu_base, dtype=float)

    def mus_of(Uc):
        return [Uc[n] if j == mu_index else np.full(B, mu_base[j]) for j in range(spec.k)]

    for _ in range(iterations):
        vals, jx, jm = delta_batch(spec, ell, list(U[:n]), mus_of(U), eps, cfg, mu_index=mu_index)
        res = np.linalg.norm(vals, axis=0)
        done = res < tol * (1.0 + np.linalg.norm(U[:n], axis=0))
        if np.all(done | ~np.isfinite(res)):
            break
        A = np.zeros((B, n + 1, n + 1))
        A[:, :n, :n] = np.moveaxis(jx, -1, 0)
        A[:, :n, n] = jm.T
        A[:, n, :] = C.T
        rhs = np.zeros((B, n + 1))
        rhs[:, :n] = -vals.T
        rhs[:, n] = -np.sum(C * (U - U0), axis=0)
        ok = np.isfinite(res) & ~done & np.all(np.isfinite(A), axis=(1, 2))
        if not np.any(ok):
            break
        sol = np.zeros((B, n + 1))
        dets = np.linalg.det(np.where(ok[:, None, None], A, np.eye(n + 1)))
        ok &= np.abs(dets) > 1e-300
        sol[ok] = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
        U = U + sol.T
    vals, _, _ = delta_batch(spec, ell, list(U[:n]), mus_of(U), eps, cfg)
    res = np.linalg.norm(vals, axis=0)
    conv = np.isfinite(res) & (res < tol * (1.0 + np.linalg.norm(U[:n], axis=0)))
    return U, conv


# ------------------------------------------------------------------------- seeds


def seed_points(spec: SystemSpec, avg, mu, eps: float, x_window=(-1.0, 1.0), cfg=None,
                homotopy_steps: int = 8, mu_index: int = 0, guesses_per_axis: int = 7) -> list[BranchPoint]:
    """Fixed points at one parameter vector ``mu``; see ``seed_levels``."""
    mu_vec = np.atleast_1d(np.asarray(mu, dtype=float))
    return seed_levels(spec, avg, [mu_vec[mu_index]], eps, x_window, cfg, homotopy_steps,
                       mu_index, guesses_per_axis, mu_base=mu_vec)


def guiding_roots(spec: SystemSpec, avg, levels: Sequence[float], x_window=(-1.0, 1.0), cfg=None,
                  mu_index: int = 0, guesses_per_axis: int = 7, mu_base=None):
    """Zeros of ``Delta_ell(., mu, 0) = T g_ell`` at each level of ``mu[mu_index]``.

    Returns ``(X (n, m), L (m,))``: root columns and the level each belongs to.
    """
    ell = _ell_of(avg)
    n, k = spec.n, spec.k
    mu_base = np.zeros(k) if mu_base is None else np.asarray(mu_base, dtype=float).reshape(k)
    levels = np.asarray(levels, dtype=float).reshape(-1)
    if n == 1:
        rows = scan_rows(spec, ell, x_window, levels, 0.0, cfg=cfg, mu_base=mu_base, mu_index=mu_index)
        X = np.concatenate([r.roots for r in rows])[None, :]
        L = np.concatenate([np.full(r.count, lv) for r, lv in zip(rows, levels)])
        return X, L
    axis = np.linspace(x_window[0], x_window[1], guesses_per_axis)
    grid = np.array(np.meshgrid(*([axis] * n), indexing="ij")).reshape(n, -1)
    G = np.tile(grid, levels.size)
    L0 = np.repeat(levels, grid.shape[1])
    X, conv, _ = polish_batch(spec, ell, G, _mu_rows(mu_base, mu_index, L0), 0.0, cfg, iterations=25)
    inside = np.all((X >= x_window[0] - 1e-9) & (X <= x_window[1] + 1e-9), axis=0)
    keep = _dedupe_index(np.vstack([X, L0]), conv & inside, 1e-6)
    return X[:, keep], L0[keep]


def seed_levels(spec: SystemSpec, avg, levels: Sequence[float], eps: float, x_window=(-1.0, 1.0),
                cfg=None, homotopy_steps: int = 8, mu_index: int = 0, guesses_per_axis: int = 7,
                mu_base=None, roots0=None) -> list[BranchPoint]:
    """Fixed points at several values of ``mu[mu_index]``, continued from the guiding system.

    Zeros at ``eps = 0`` come from ``guiding_roots`` (or ``roots0`` when given);
    each is then carried to ``eps`` in ``homotopy_steps`` equal steps and
    polished by ``newton_fixed_point``.
    """
    ell = _ell_of(avg)
    k = spec.k
    mu_base = np.zeros(k) if mu_base is None else np.asarray(mu_base, dtype=float).reshape(k)
    if roots0 is None:
        roots0 = guiding_roots(spec, ell, levels, x_window, cfg, mu_index, guesses_per_axis, mu_base)
    X, L = roots0
    if X.shape[1] == 0:
        return []
    if eps != 0.0:
        MU = _mu_rows(mu_base, mu_index, L)
        conv = np.ones(X.shape[1], dtype=bool)
        for step in range(1, homotopy_steps + 1):
            X, c, _ = polish_batch(spec, ell, X, MU, eps * step / homotopy_steps, cfg, iterations=10)
            conv &= c
        X, L = X[:, conv], L[conv]
    points = []
    for col, lv in zip(X.T, L):
        res = newton_fixed_point(spec, ell, col, _mu_vector(mu_base, mu_index, lv), eps, cfg,
                                 mu_index=mu_index)
        if res.converged:
            points.append(res.point)
    return points


def _mu_rows(mu_base, mu_index, values):
    return [np.asarray(values, dtype=float) if j == mu_index else np.full(np.size(values), mu_base[j])
            for j in range(len(mu_base))]


def _dedupe_index(U: np.ndarray, mask: np.ndarray, tol: float) -> np.ndarray:
    kept: list[int] = []
    for i in np.nonzero(mask)[0]:
        if all(np.linalg.norm(U[:, i] - U[:, j]) > tol for j in kept):
            kept.append(i)
    return np.array(kept, dtype=int)


def _near_branch(u: np.ndarray, branch: Branch, tol: float) -> bool:
    P = np.array([p.u for p in branch.points])
    if len(P) == 1:
        return bool(np.linalg.norm(P[0] - u) < tol)
    a, b = P[:-1], P[1:]
    d = b - a
    t = np.clip(np.einsum("ij,ij->i", u - a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300), 0, 1)
    return bool(np.min(np.linalg.norm(a + t[:, None] * d - u, axis=1)) < tol)


def default_levels(mu_range: Sequence[float]) -> np.ndarray:
    lo, hi = float(min(mu_range)), float(max(mu_range))
    return lo + (hi - lo) * np.array([0.1, 0.3, 0.5, 0.7, 0.9])


def trace_diagram(spec: SystemSpec, avg, eps: float, mu_range: Sequence[float], x_window=(-1.0, 1.0),
                  ccfg: ContinuationConfig | None = None, cfg=None, levels: Sequence[float] | None = None,
                  mu_index: int = 0, mu_base=None, roots0=None) -> list[Branch]:
    """All branches of fixed points reachable from seeds at several mu levels.

    A seed lying on an already traced branch is skipped, so each branch is
    traced once.
    """
    lo, hi = float(min(mu_range)), float(max(mu_range))
    if levels is None:
        levels = default_levels(mu_range)
    seeds = seed_levels(spec, avg, levels, eps, x_window, cfg, mu_index=mu_index, mu_base=mu_base,
                        roots0=roots0)
    ccfg = ccfg or ContinuationConfig()
    # chord error of the traced polyline grows like ds_max**2
    tol = max(5e-3, 0.3 * ccfg.ds_max ** 2)
    branches: list[Branch] = []
    for sd in seeds:
        if any(_near_branch(sd.u, b, tol) for b in branches):
            continue
        branches.append(trace_branch(spec, avg, sd, (lo, hi), eps, ccfg, cfg, x_window, mu_index))
    return branches


# ------------------------------------------------------------------ classification


@dataclass
class SingularityReport:
    label: str
    corank: int
    values: dict


def classify_singularity(spec: SystemSpec, avg, x, mu, eps: float, cfg=None,
                         tol: float = NONDEGENERACY_TOL, mu_index: int = 0) -> SingularityReport:
    """Corank of ``dDelta/dx`` and derivative tests for fold/transcritical/pitchfork germs.

    All quantities are divided by the period before comparison with ``tol``.
    """
    ell = _ell_of(avg)
    n = spec.n
    mu_vec = np.atleast_1d(np.asarray(mu, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ev = displacement_ell(spec, ell, x, mu_vec, eps, cfg, eps_derivative=False)
    scale = spec.T
    U, S, Vt = np.linalg.svd(ev.d_x)
    corank = int(np.sum(S / scale < tol))
    values = {"singular_values": (S / scale).tolist()}
    if corank == 0:
        return SingularityReport("regular", 0, values)
    if corank > 1:
        return SingularityReport("corank-report", corank, values)
    w, v = U[:, -1], Vt[-1]
    ders = _directional_tower(spec, ell, x, v, mu_vec, eps, cfg, 3)
    d2 = float(w @ ders[2]) / scale
    d3 = float(w @ ders[3]) / scale
    dmu = float(w @ ev.d_mu[:, mu_index]) / scale
    values.update({"d2": d2, "d3": d3, "dmu": dmu})
    nz = lambda q: abs(q) > tol
    if nz(d2) and nz(dmu):
        label = "fold"
    elif nz(d2):
        label = "transcritical-degenerate"
    elif nz(d3):
        label = "pitchfork-degenerate"
    else:
        label = "corank-report"
    return SingularityReport(label, corank, values)


def _directional_tower(spec, ell, x0, v, mu, eps, cfg, order):
    s, tags = nested_seed(0.0, order)
    xs = [xi + vi * s for xi, vi in zip(x0, v)]
    out, _ = _delta_generic(spec, ell, xs, list(mu), float(eps), cfg)
    return [np.array([float(extract_derivative(o, tags, m)) for o in out]) for m in range(order + 1)]
