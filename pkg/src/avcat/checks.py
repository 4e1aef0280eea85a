"""Verification checks behind ``avcat verify``.

Each check returns a plain dict with a boolean ``pass`` entry and the
measured quantities it was decided on.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .continuation import (Branch, classify_singularity, locate_fold, scan_rows, trace_diagram)
from .melnikov import average
from .surface import closeness
from .systems import load_system

CLOSENESS_LADDER = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
SLOPE_RANGE = (0.8, 1.2)
LOCATION_RTOL = 0.10


def _fold_dict(fr) -> dict:
    return {"mu": fr.mu_fold, "x": [float(v) for v in fr.x_fold], "F1": fr.F1, "F2": fr.F2,
            "classification": fr.classification,
            "side_counts": None if fr.side_counts is None else list(fr.side_counts)}


def continuation_counts(branches: Sequence[Branch], mus: Sequence[float]) -> list[int]:
    """Number of branch crossings of each vertical line ``mu = const``."""
    counts = []
    for mu in mus:
        c = 0
        for b in branches:
            m = b.mus
            lo, hi = m[:-1] - mu, m[1:] - mu
            c += int(np.sum((lo * hi < 0) | ((hi == 0) & (lo != 0))))
        counts.append(c)
    return counts


def _probes(lo: float, hi: float, count: int) -> np.ndarray:
    # offset by an irrational fraction of the spacing so no probe sits on a branch vertex
    h = (hi - lo) / (count - 1)
    p = np.linspace(lo, hi, count)
    p[1:-1] += h * (math.sqrt(2) - 1.0) * 0.01
    return p


def _diagram(spec, ell, eps, mu_window, x_window, cfg=None):
    branches = trace_diagram(spec, ell, eps, mu_window, x_window, cfg=cfg)
    folds = [locate_fold(spec, ell, b, i, eps, cfg, x_interval=x_window if spec.n == 1 else None)
             for b in branches for i in b.fold_intervals()]
    folds.sort(key=lambda f: f.mu_fold)
    return branches, folds


def check_closeness(system: str = "fold", eps_list: Sequence[float] = CLOSENESS_LADDER,
                    x_window=(-1.0, 1.0), mu_window=(-1.0, 1.0), resolution: int = 400,
                    params: dict | None = None, cfg=None) -> dict:
    spec = load_system(system, **(params or {}))
    avg = average(spec)
    rep = closeness(spec, avg, eps_list, x_window, mu_window, resolution, cfg)
    ok = bool(np.isfinite(rep.fitted_slope) and SLOPE_RANGE[0] <= rep.fitted_slope <= SLOPE_RANGE[1])
    out = rep.as_dict()
    out.update({"check": "closeness", "system": system, "ell": avg.ell, "pass": ok,
                "slope_range": list(SLOPE_RANGE), "notes": rep.notes})
    return out


def check_transcritical_breakage(eps: float = 0.02, c: float = 1.0, mu_window=(-1.0, 1.0),
                                 x_window=(-1.5, 1.5), probe_window=(-0.5, 0.5), probes: int = 41,
                                 cfg=None) -> dict:
    """Fold pair near ``+-2 sqrt(|eps| c)`` for one sign of eps, two persistent fixed points for the other."""
    spec = load_system("transcritical", c=c)
    ell = average(spec).ell
    expected = 2.0 * math.sqrt(abs(eps) * c)
    mus = _probes(probe_window[0], probe_window[1], probes)
    sides = {}
    for e in (abs(eps), -abs(eps)):
        branches, folds = _diagram(spec, ell, e, mu_window, x_window, cfg)
        scan = [r.count for r in scan_rows(spec, ell, x_window, mus, e, cfg=cfg)]
        cont = continuation_counts(branches, mus)
        sides[e] = {"eps": e, "folds": [_fold_dict(f) for f in folds], "branches": len(branches),
                    "probe_mu": mus.tolist(), "scan_counts": scan, "continuation_counts": cont,
                    "counts_agree": scan == cont}
    with_folds = [s for s in sides.values() if s["folds"]]
    without = [s for s in sides.values() if not s["folds"]]
    ok = len(with_folds) == 1 and len(without) == 1
    if ok:
        fs = with_folds[0]["folds"]
        located = (len(fs) == 2
                   and abs(fs[0]["mu"] + expected) <= LOCATION_RTOL * expected
                   and abs(fs[1]["mu"] - expected) <= LOCATION_RTOL * expected
                   and all(f["classification"] == "fold" for f in fs))
        between = [cnt for mu, cnt in zip(mus, with_folds[0]["scan_counts"])
                   if len(fs) == 2 and fs[0]["mu"] < mu < fs[1]["mu"]]
        empty_between = bool(between) and all(cnt == 0 for cnt in between)
        persistent = all(cnt == 2 for cnt in without[0]["scan_counts"])
        ok = located and empty_between and persistent
        with_folds[0]["located_within_tolerance"] = located
        with_folds[0]["empty_between_folds"] = empty_between
        without[0]["two_fixed_points_throughout"] = persistent
    ok = ok and all(s["counts_agree"] for s in sides.values())
    return {"check": "transcritical-breakage", "c": c, "expected_abs_mu": expected,
            "fold_sign": ("+" if with_folds[0]["eps"] > 0 else "-") if len(with_folds) == 1 else None,
            "sides": [sides[abs(eps)], sides[-abs(eps)]], "pass": bool(ok)}


def check_pitchfork_cusp(eps: float = 0.1, c: float = 1.0, mu_window=(-1.0, 1.0),
                         x_window=(-1.5, 1.5), cfg=None) -> dict:
    """One fold near ``-(27/4)^(1/3) (eps c)^(2/3)`` with counts 3 -> 1, plus a persistent branch."""
    spec = load_system("pitchfork", c=c)
    ell = average(spec).ell
    expected = -(27.0 / 4.0) ** (1.0 / 3.0) * (abs(eps) * c) ** (2.0 / 3.0)
    branches, folds = _diagram(spec, ell, eps, mu_window, x_window, cfg)
    one = len(folds) == 1
    located = one and abs(folds[0].mu_fold - expected) <= LOCATION_RTOL * abs(expected)
    transition = one and folds[0].side_counts == (3, 1)
    nondeg = one and folds[0].classification == "fold"
    persistent = [b for b in branches if not b.fold_intervals()
                  and b.mus.min() <= mu_window[0] and b.mus.max() >= mu_window[1]]
    ok = bool(one and located and transition and nondeg and len(persistent) >= 1)
    return {"check": "pitchfork-cusp", "eps": eps, "c": c, "ell": ell, "expected_mu": expected,
            "folds": [_fold_dict(f) for f in folds], "persistent_branches": len(persistent),
            "located_within_tolerance": bool(located), "counts_3_to_1": bool(transition), "pass": ok}


GERMS = (("fold", "fold"), ("transcritical", "transcritical-degenerate"),
         ("pitchfork", "pitchfork-degenerate"))
FOLD_CASES = (("fold", 0.1, {}), ("transcritical", 0.02, {"c": 1.0}), ("pitchfork", 0.1, {"c": 1.0}))


def check_saddle_node_conditions(cases=FOLD_CASES, mu_window=(-1.0, 1.0), x_window=(-1.5, 1.5),
                                 cfg=None) -> dict:
    """(F1)/(F2) at every fold found, and the germ classifier at eps = 0."""
    fold_reports = []
    ok = True
    for name, eps, params in cases:
        spec = load_system(name, **params)
        ell = average(spec).ell
        _, folds = _diagram(spec, ell, eps, mu_window, x_window, cfg)
        good = bool(folds) and all(f.classification == "fold" for f in folds)
        ok = ok and good
        fold_reports.append({"system": name, "eps": eps, "folds": [_fold_dict(f) for f in folds],
                             "pass": good})
    germs = []
    for name, expected in GERMS:
        spec = load_system(name)
        ell = average(spec).ell
        rep = classify_singularity(spec, ell, [0.0] * spec.n, [0.0] * spec.k, 0.0, cfg)
        germs.append({"system": name, "label": rep.label, "expected": expected,
                      "values": rep.values, "pass": rep.label == expected})
        ok = ok and rep.label == expected
    return {"check": "saddle-node-conditions", "folds": fold_reports, "germs": germs, "pass": bool(ok)}


CHECKS = {
    "closeness": check_closeness,
    "transcritical-breakage": check_transcritical_breakage,
    "pitchfork-cusp": check_pitchfork_cusp,
    "saddle-node-conditions": check_saddle_node_conditions,
}
