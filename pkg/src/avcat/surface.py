"""Sampled catastrophe surfaces, bifurcation diagrams and their closeness.

A diagram ``D_eps`` is the zero set of ``Delta_ell(., ., eps)`` in the
``(x, mu)`` window; the catastrophe surface stacks these slices over eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .continuation import (Branch, ContinuationConfig, NEWTON_TOL, default_levels, delta_batch,
                           guiding_roots, project_batch, scan_rows, trace_diagram)
from .errors import ContractError
from .expr import SystemSpec
from .poincare import _ell_of


@dataclass
class DiagramCloud:
    """Points as rows ``(x_1..x_n, mu_1..mu_k, eps)``."""

    points: np.ndarray
    provenance: list[str]
    window: dict
    n: int
    k: int
    notes: list[str] = field(default_factory=list)

    def slice(self, eps: float) -> np.ndarray:
        return self.points[self.points[:, -1] == eps]

    def xmu(self, eps: float | None = None) -> np.ndarray:
        pts = self.points if eps is None else self.slice(eps)
        return pts[:, : self.n + self.k]


@dataclass
class ClosenessReport:
    epsilons: np.ndarray
    distances: np.ndarray
    fitted_slope: float
    notes: list[str] = field(default_factory=list)
    sample_counts: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"epsilons": [float(e) for e in self.epsilons],
                "distances": [float(d) for d in self.distances],
                "fitted_slope": float(self.fitted_slope)}


# ------------------------------------------------------------------- polylines


def densify(spec: SystemSpec, ell: int, branch: Branch, eps: float, spacing: float, cfg=None,
            mu_index: int = 0) -> np.ndarray:
    """Branch polyline refined to about ``spacing`` in ``(x, mu)``, new points projected onto the zero set.

    Returns an array of shape ``(m, n+1)`` in branch order.
    """
    P = np.array([p.u for p in branch.points])
    if len(P) < 2:
        return P
    mu_base = branch.points[0].mu_vector
    if mu_base is None:
        mu_base = np.zeros(spec.k)
    pieces, normals, owners = [], [], []
    for i in range(len(P) - 1):
        a, b = P[i], P[i + 1]
        d = b - a
        L = float(np.linalg.norm(d))
        m = max(1, int(math.ceil(L / spacing)))
        if m > 1:
            t = np.arange(1, m) / m
            pieces.append(a[None, :] + t[:, None] * d[None, :])
            normals.append(np.repeat((d / L)[None, :], m - 1, axis=0))
            owners.append(np.full(m - 1, i))
    if not pieces:
        return P
    U = np.concatenate(pieces).T
    C = np.concatenate(normals).T
    own = np.concatenate(owners)
    U, conv = project_batch(spec, ell, U, C, mu_base, eps, cfg, mu_index=mu_index)
    rows = []
    for i in range(len(P) - 1):
        rows.append(P[i][None, :])
        sel = (own == i) & conv
        if np.any(sel):
            rows.append(U[:, sel].T)
    rows.append(P[-1][None, :])
    return np.concatenate(rows)


def point_to_polylines(points: np.ndarray, polylines: Sequence[np.ndarray]) -> np.ndarray:
    """Euclidean distance from each row of ``points`` to the nearest polyline segment."""
    best = np.full(len(points), np.inf)
    for poly in polylines:
        if len(poly) == 1:
            best = np.minimum(best, np.linalg.norm(points - poly[0], axis=1))
            continue
        a, b = poly[:-1], poly[1:]
        d = b - a
        dd = np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
        for start in range(0, len(points), 256):
            p = points[start:start + 256]
            rel = p[:, None, :] - a[None, :, :]
            t = np.clip(np.einsum("pij,ij->pi", rel, d) / dd[None, :], 0.0, 1.0)
            proj = a[None, :, :] + t[..., None] * d[None, :, :]
            dist = np.min(np.linalg.norm(p[:, None, :] - proj, axis=2), axis=1)
            best[start:start + 256] = np.minimum(best[start:start + 256], dist)
    return best


# --------------------------------------------------------------------- sweeps


def _scan_slice(spec, ell, x_window, mu_window, eps, rows, grid_size, cfg):
    mus = np.linspace(mu_window[0], mu_window[1], rows)
    results = scan_rows(spec, ell, x_window, mus, eps, grid_size=grid_size, cfg=cfg)
    pts = [(r, mu) for res, mu in zip(results, mus) for r in res.roots]
    if not pts:
        return np.zeros((0, 2)), 0
    arr = np.array(pts)
    X, conv, _ = _polish_scalar(spec, ell, arr[:, 0], arr[:, 1], eps, cfg)
    arr[:, 0] = X
    return arr[conv], int(sum(res.diverged_cells for res in results))


def _polish_scalar(spec, ell, xs, mus, eps, cfg, iterations=3):
    """A few batched Newton steps in x after bisection (n = k = 1)."""
    x = np.array(xs, dtype=float)
    for _ in range(iterations):
        vals, jx, _ = delta_batch(spec, ell, [x], [mus], eps, cfg)
        v, j = vals[0], jx[0, 0]
        ok = np.isfinite(v) & np.isfinite(j) & (j != 0)
        step = np.where(ok, -v / np.where(ok, j, 1.0), 0.0)
        step = np.clip(step, -1e-6, 1e-6)
        x = x + step
    vals, _, _ = delta_batch(spec, ell, [x], [mus], eps, cfg)
    res = np.abs(vals[0])
    return x, np.isfinite(res) & (res < NEWTON_TOL * (1.0 + np.abs(x))), res


def _continuation_slice(spec, ell, x_window, mu_window, eps, spacing, cfg, ccfg, roots0=None):
    branches = trace_diagram(spec, ell, eps, mu_window, x_window, ccfg, cfg, roots0=roots0)
    chains = [densify(spec, ell, b, eps, spacing, cfg) for b in branches]
    return chains


def _in_window(U, n, x_window, mu_window):
    return (np.all((U[:, :n] >= x_window[0]) & (U[:, :n] <= x_window[1]), axis=1)
            & (U[:, n] >= mu_window[0]) & (U[:, n] <= mu_window[1]))


def sweep_surface(spec: SystemSpec, avg, x_window=(-1.0, 1.0), mu_window=(-1.0, 1.0),
                  eps_list: Sequence[float] = (0.0,), resolution: int = 201, cfg=None,
                  grid_size: int = 1001, ccfg: ContinuationConfig | None = None) -> DiagramCloud:
    """Stack the diagrams ``D_eps`` over ``eps_list``.

    Scalar systems use the scan oracle on ``resolution`` mu rows (provenance
    ``scan``); higher dimensions use continuation (provenance ``continuation``).
    The eps = 0 slice is the zero set of ``T g_ell``.
    """
    ell = _ell_of(avg)
    if spec.k != 1:
        raise ContractError("sweeps are defined for a single parameter")
    eps_list = [float(e) for e in eps_list]
    if not all(math.isfinite(e) for e in eps_list):
        raise ContractError("eps values must be finite")
    n = spec.n
    rows, prov, notes = [], [], []
    spacing = (mu_window[1] - mu_window[0]) / max(resolution - 1, 1)
    roots0 = None
    if n > 1:
        roots0 = guiding_roots(spec, ell, default_levels(mu_window), x_window, cfg)
    for eps in sorted(set(eps_list)):
        if n == 1:
            pts, diverged = _scan_slice(spec, ell, x_window, mu_window, eps, resolution, grid_size, cfg)
            if diverged:
                notes.append(f"eps={eps:g}: {diverged} diverged cells skipped")
            kind = "scan"
        else:
            chains = _continuation_slice(spec, ell, x_window, mu_window, eps, spacing, cfg, ccfg, roots0)
            pts = np.concatenate(chains) if chains else np.zeros((0, n + 1))
            pts = pts[_in_window(pts, n, x_window, mu_window)] if len(pts) else pts
            kind = "continuation"
        for p in pts:
            rows.append(np.append(p, eps))
            prov.append(kind)
    pts = np.array(rows) if rows else np.zeros((0, n + 2))
    if len(pts):
        # eps first, then mu, then x
        order = np.lexsort(tuple(pts[:, c] for c in range(pts.shape[1])))
        pts = pts[order]
        prov = [prov[i] for i in order]
    window = {"x": list(map(float, x_window)), "mu": list(map(float, mu_window)), "eps": eps_list}
    return DiagramCloud(points=pts, provenance=prov, window=window, n=n, k=1, notes=notes)


def verify_cloud(spec: SystemSpec, avg, cloud: DiagramCloud, cfg=None, tol: float = NEWTON_TOL) -> np.ndarray:
    """Re-evaluate every cloud point from scratch; returns the boolean pass mask."""
    ell = _ell_of(avg)
    n = spec.n
    ok = np.zeros(len(cloud.points), dtype=bool)
    for eps in np.unique(cloud.points[:, -1]):
        sel = cloud.points[:, -1] == eps
        P = cloud.points[sel]
        vals, _, _ = delta_batch(spec, ell, list(P[:, :n].T), [P[:, n]], float(eps), cfg)
        res = np.linalg.norm(vals, axis=0)
        ok[sel] = np.isfinite(res) & (res < tol * (1.0 + np.linalg.norm(P[:, :n], axis=1)))
    return ok


# ------------------------------------------------------------------ closeness


#: Coarse continuation steps; densification fills in the curves afterwards.
GUIDE_STEPS = ContinuationConfig(ds=0.05, ds_max=0.2, max_step=0.4)
SLICE_STEPS = ContinuationConfig(ds=0.05, ds_max=0.1, max_step=0.2)


def guiding_polylines(spec: SystemSpec, avg, x_window, mu_window, spacing: float, cfg=None,
                      ccfg: ContinuationConfig | None = None) -> list[np.ndarray]:
    """Dense ordered samples of ``D_{ell,0}``, the zero set of ``T g_ell``."""
    ell = _ell_of(avg)
    ccfg = ccfg or GUIDE_STEPS
    branches = trace_diagram(spec, ell, 0.0, mu_window, x_window, ccfg, cfg)
    return [densify(spec, ell, b, 0.0, spacing, cfg) for b in branches]


def closeness(spec: SystemSpec, avg, eps_list: Sequence[float], x_window=(-1.0, 1.0),
              mu_window=(-1.0, 1.0), resolution: int = 400, cfg=None, margin: float = 0.5,
              ccfg: ContinuationConfig | None = None, guide: list[np.ndarray] | None = None,
              scan_rows_per_unit: int = 100) -> ClosenessReport:
    """One-sided Hausdorff distance from ``D_eps`` to ``D_{ell,0}`` in ``(x, mu)`` and its log-log slope.

    ``resolution`` is the number of samples per unit length along each curve.
    Scalar systems sample ``D_eps`` with the scan oracle on
    ``scan_rows_per_unit`` mu rows per unit.  The guiding set is traced on the
    window enlarged by ``margin`` on every side.
    """
    ell = _ell_of(avg)
    eps = np.array(sorted(float(e) for e in eps_list))
    if eps.size < 4:
        raise ContractError("closeness needs at least 4 eps values")
    if np.any(eps <= 0) or not np.all(np.isfinite(eps)):
        raise ContractError("closeness needs finite eps values in (0, eps_max]")
    if eps[-1] / eps[0] < 100.0 * (1 - 1e-12):
        raise ContractError("eps values must span at least two decades")
    if spec.k != 1:
        raise ContractError("closeness is defined for a single parameter")
    n = spec.n
    spacing = 1.0 / resolution
    big_x = (x_window[0] - margin, x_window[1] + margin)
    big_mu = (mu_window[0] - margin, mu_window[1] + margin)
    if guide is None:
        guide = guiding_polylines(spec, ell, big_x, big_mu, spacing, cfg)
    roots0 = None
    if n > 1:
        roots0 = guiding_roots(spec, ell, default_levels(mu_window), x_window, cfg)
    kept_eps, dists, counts, notes = [], [], [], []
    for e in eps:
        if n == 1:
            rows = int(round((mu_window[1] - mu_window[0]) * scan_rows_per_unit)) + 1
            pts, diverged = _scan_slice(spec, ell, x_window, mu_window, float(e), rows, 1001, cfg)
            if diverged:
                notes.append(f"eps={e:g}: {diverged} diverged cells skipped")
        else:
            chains = _continuation_slice(spec, ell, x_window, mu_window, float(e), spacing, cfg,
                                         ccfg or SLICE_STEPS, roots0)
            pts = np.concatenate(chains) if chains else np.zeros((0, n + 1))
            if len(pts):
                pts = pts[_in_window(pts, n, x_window, mu_window)]
        if len(pts) == 0:
            notes.append(f"eps={e:g}: empty diagram in window, dropped")
            continue
        d = point_to_polylines(pts, guide)
        kept_eps.append(e)
        dists.append(float(np.max(d)))
        counts.append(int(len(pts)))
    kept = np.array(kept_eps)
    dist = np.array(dists)
    slope = float("nan")
    if kept.size >= 2 and np.all(dist > 0):
        slope = float(np.polyfit(np.log(kept), np.log(dist), 1)[0])
    return ClosenessReport(epsilons=kept, distances=dist, fitted_slope=slope, notes=notes,
                           sample_counts=counts)
