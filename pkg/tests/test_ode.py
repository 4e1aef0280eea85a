import io
import math

import numpy as np
import pytest

from avcat import ode
from avcat.errors import ContractError, DivergenceError
from avcat.expr import parse_system
from avcat.systems import load_system

GUIDE = parse_system("system foldguide\ndim n=1 k=1\nperiod T=2*pi\norder 1: x1^2 + mu1\nend\n")
LINEAR = parse_system("system linear\ndim n=1 k=1\nperiod T=1\norder 1: x1\nend\n")


def tanh_solution(x0, mu, eps, t):
    """Closed-form flow of x' = eps (x^2 + mu) for mu < 0 and |x0| < sqrt(-mu)."""
    a = math.sqrt(-mu)
    return -a * math.tanh(a * eps * t - math.atanh(x0 / a))


def final(spec, x0, mu, eps, t_span=None, cfg=None):
    return np.array(ode.integrate(spec, x0, mu, eps, t_span=t_span, cfg=cfg, record=False).final,
                    dtype=float)


def test_fold_guide_matches_tanh_formula():
    got = final(GUIDE, [0.0], [-0.5], 0.4)[0]
    ref = tanh_solution(0.0, -0.5, 0.4, 2 * math.pi)
    assert abs(got - ref) < 1e-8


@pytest.mark.parametrize("name", ["fold", "transcritical", "pitchfork", "saddlefocus"])
def test_zero_eps_freezes_state(name):
    spec = load_system(name)
    x0 = [0.3, -0.7][: spec.n]
    np.testing.assert_array_equal(final(spec, x0, [0.2] * spec.k, 0.0), x0)


def test_linear_growth_is_exponential():
    eps = 0.37
    got = final(LINEAR, [1.0], [0.0], eps, t_span=(0.0, 1.0))[0]
    assert abs(got - math.exp(eps)) < 1e-10


def test_jet_first_coefficient_is_quadrature_of_forcing():
    spec = load_system("fold")
    traj = ode.integrate_jet(spec, [0.0], [0.0], degree=1)
    for t, state in zip(traj.times, traj.states):
        c = state[0].coeffs
        assert c[0] == 0.0
        assert abs(c[1] - (1.0 - math.cos(t))) < 1e-10
    assert abs(traj.final[0].coeffs[1]) < 1e-12
    end = ode.integrate_jet(spec, [1.0], [0.0], degree=1, record=False).final[0].coeffs
    assert end[0] == 1.0 and abs(end[1] - 2 * math.pi) < 1e-12


def test_jet_requires_fixed_step_method():
    with pytest.raises(ContractError):
        ode.integrate_jet(load_system("fold"), [0.0], [0.0], cfg=ode.DEFAULT_FLOAT)


def test_semigroup_over_two_periods():
    rng = np.random.default_rng(5)
    for name in ["fold", "transcritical", "saddlefocus"]:
        spec = load_system(name)
        for _ in range(3):
            x0 = list(rng.uniform(-0.3, 0.3, spec.n))
            mu = list(rng.uniform(-0.5, -0.1, spec.k))
            eps = float(rng.uniform(0.01, 0.2))
            once = final(spec, x0, mu, eps)
            twice = final(spec, list(once), mu, eps)
            direct = final(spec, x0, mu, eps, t_span=(0.0, 2 * spec.T))
            np.testing.assert_allclose(direct, twice, atol=1e-9, rtol=0)


def _jet_error(spec, x0, mu, eps, degree):
    cfg = ode.IntegratorConfig(method="rk4", step_count=256)
    jet = ode.integrate_jet(spec, x0, mu, cfg=cfg, degree=degree, record=False).final
    poly = np.array([np.polyval(j.coeffs[::-1], eps) for j in jet])
    flt = final(spec, x0, mu, eps, cfg=cfg)
    return float(np.max(np.abs(poly - flt)))


@pytest.mark.parametrize("name,degree", [("fold", 1), ("fold", 2), ("transcritical", 2)])
def test_jet_float_consistency_rate(name, degree):
    spec = load_system(name)
    e_big = _jet_error(spec, [0.4], [-0.3], 1e-2, degree)
    e_small = _jet_error(spec, [0.4], [-0.3], 1e-3, degree)
    decades = math.log10(e_big / e_small)
    assert abs(decades - (degree + 1)) < 0.2


def test_rk4_fourth_order_on_tanh_flow():
    ref = tanh_solution(0.2, -0.5, 0.4, 2 * math.pi)
    errs = []
    for steps in (32, 64):
        cfg = ode.IntegratorConfig(method="rk4", step_count=steps)
        errs.append(abs(final(GUIDE, [0.2], [-0.5], 0.4, cfg=cfg)[0] - ref))
    assert 12.0 <= errs[0] / errs[1] <= 20.0


def test_divergence_is_reported_with_last_state():
    with pytest.raises(DivergenceError) as info:
        ode.integrate(load_system("fold"), [0.0], [0.5], 0.4, t_span=(0.0, 4 * math.pi))
    assert info.value.state is not None and abs(info.value.state[0]) > 1e6
    assert 0.0 < info.value.t < 4 * math.pi


def test_config_validation():
    with pytest.raises(ContractError):
        ode.IntegratorConfig(step_count=8)
    with pytest.raises(ContractError):
        ode.IntegratorConfig(abs_tol=0.0)
    with pytest.raises(ContractError):
        ode.IntegratorConfig(method="euler")


def test_trajectory_csv_export():
    traj = ode.integrate(GUIDE, [0.1], [-0.5], 0.4, cfg=ode.IntegratorConfig(method="rk4", step_count=16))
    buf = io.StringIO()
    ode.write_csv(traj, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x1"
    assert len(lines) == len(traj.times) + 1
    t, x = map(float, lines[-1].split(","))
    assert t == traj.times[-1] and x == float(traj.final[0])
    assert np.all(np.diff(traj.times) > 0) and traj.states[0][0] == 0.1
