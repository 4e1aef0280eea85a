import numpy as np
import pytest

from avcat.errors import ContractError
from avcat.melnikov import average
from avcat.surface import closeness, guiding_polylines, point_to_polylines, sweep_surface, verify_cloud
from avcat.systems import load_system


def rows_by_mu(cloud, eps):
    pts = cloud.slice(eps)
    mus, counts = np.unique(pts[:, 1], return_counts=True)
    return dict(zip(mus, counts))


@pytest.fixture(scope="module")
def fold_cloud():
    spec = load_system("fold")
    return spec, sweep_surface(spec, 1, (-1.5, 1.5), (-1.0, 1.0), [0.0, 0.1, 0.2, 0.3], resolution=101)


def test_fold_sweep_slices(fold_cloud):
    spec, cloud = fold_cloud
    assert set(cloud.provenance) == {"scan"}
    zero = cloud.slice(0.0)
    assert np.max(np.abs(zero[:, 0] ** 2 + zero[:, 1])) < 1e-9
    assert abs(zero[:, 1].max()) <= 0.02 + 1e-12
    tops = [cloud.slice(e)[:, 1].max() for e in (0.0, 0.1, 0.2, 0.3)]
    for e in (0.1, 0.2, 0.3):
        counts = rows_by_mu(cloud, e)
        top = cloud.slice(e)[:, 1].max()
        assert all(c == 2 for mu, c in counts.items() if mu < top - 0.05)
    assert all(abs(t) < 0.3 for t in tops)


def test_cloud_points_reverify(fold_cloud):
    spec, cloud = fold_cloud
    assert np.all(verify_cloud(spec, 1, cloud))


def test_cloud_order_and_window(fold_cloud):
    _, cloud = fold_cloud
    eps = cloud.points[:, -1]
    assert np.all(np.diff(eps) >= 0)
    assert cloud.window["mu"] == [-1.0, 1.0]


def test_transcritical_sections():
    spec = load_system("transcritical", c=1.0)
    cloud = sweep_surface(spec, 1, (-1.5, 1.5), (-1.0, 1.0), [-0.02, 0.0, 0.02], resolution=41)
    fold_mu = 2 * np.sqrt(0.02)
    zero = cloud.slice(0.0)
    assert np.all(np.minimum(np.abs(zero[:, 0]), np.abs(zero[:, 0] + zero[:, 1])) < 1e-9)
    minus = rows_by_mu(cloud, -0.02)
    assert len(minus) == 41 and all(c == 2 for c in minus.values())
    plus = rows_by_mu(cloud, 0.02)
    assert all(abs(mu) > fold_mu * 0.9 for mu in plus)
    assert all(c == 2 for mu, c in plus.items() if abs(mu) > fold_mu * 1.1)


def test_pitchfork_sections():
    spec = load_system("pitchfork", c=1.0)
    cloud = sweep_surface(spec, 2, (-1.5, 1.5), (-1.0, 1.0), [-0.1, 0.0, 0.1], resolution=21)
    fold_mu = -(27 / 4) ** (1 / 3) * 0.1 ** (2 / 3)
    for e in (-0.1, 0.1):
        counts = rows_by_mu(cloud, e)
        assert all(c == 3 for mu, c in counts.items() if mu < fold_mu - 0.05)
        assert all(c == 1 for mu, c in counts.items() if mu > fold_mu + 0.05)


def test_planar_sweep_uses_continuation():
    spec = load_system("saddlefocus")
    cloud = sweep_surface(spec, 1, (-1.0, 1.0), (-1.0, 1.0), [0.05], resolution=41)
    assert len(cloud.points) > 0 and set(cloud.provenance) == {"continuation"}
    assert np.all(verify_cloud(spec, 1, cloud))


def test_point_to_polylines_geometry():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    pts = np.array([[0.5, 0.2], [2.0, 0.5], [-1.0, 0.0]])
    np.testing.assert_allclose(point_to_polylines(pts, [line]), [0.2, 1.0, 1.0])


@pytest.mark.parametrize("eps_list", [[0.0], [0.1, 0.01, 0.001], [0.01, 0.02, 0.03, 0.05],
                                      [-0.1, 0.01, 0.001, 0.0001]])
def test_closeness_preconditions(eps_list):
    spec = load_system("fold")
    with pytest.raises(ContractError):
        closeness(spec, 1, eps_list)


def test_closeness_drops_empty_slices():
    spec = load_system("fold")
    rep = closeness(spec, 1, [1e-3, 1e-2, 3e-2, 1e-1], mu_window=(0.3, 1.0), resolution=50)
    assert rep.epsilons.size == 0 and len(rep.notes) == 4 and np.isnan(rep.fitted_slope)


def test_closeness_refinement_is_monotone():
    spec = load_system("fold")
    avg = average(spec)
    eps = [1e-3, 1e-2, 3e-2, 1e-1]
    coarse = closeness(spec, avg, eps, resolution=100)
    fine = closeness(spec, avg, eps, resolution=200)
    assert np.all(fine.distances <= 1.1 * coarse.distances)
    assert 0.8 <= fine.fitted_slope <= 1.2


def test_guiding_polylines_sit_on_zero_set():
    spec = load_system("fold")
    lines = guiding_polylines(spec, 1, (-1.5, 1.5), (-1.5, 1.5), 0.01)
    pts = np.concatenate(lines)
    assert np.max(np.abs(pts[:, 0] ** 2 + pts[:, 1])) < 1e-10
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.max(gaps) < 0.02
