"""Time marching for the oscillatory and homogenized equations."""
import numpy as np
import pytest

from nonconvex_hj.effective import compute_effective
from nonconvex_hj.evolution import (
    CFL, EvolutionError, cone, convergence_report, initial_data_from_dict, plane_wave,
    reachable_slopes, report_json, sinusoid, solve_homogenized, solve_oscillatory,
    tabulate_curve, value_bound,
)
from nonconvex_hj.hamiltonian import PiecewiseMonotoneHamiltonian as PH


@pytest.fixture(scope="module")
def w_curve():
    from nonconvex_hj.potential import PeriodicAnalytic
    return compute_effective(PH.from_knots([0, 1, 2], [0, 3, 1], -3, 1), PeriodicAnalytic.cosine(1.0))


def test_constant_data_without_potential(W):
    s = solve_oscillatory(W, None, 0.1, lambda x: 0 * x + 2.5, 0.5)
    np.testing.assert_allclose(s.values, 2.5, atol=1e-14)


@pytest.mark.parametrize("p", [-0.7, 0.5, 1.4, 2.6])
def test_plane_wave_without_potential(W, p):
    s = solve_oscillatory(W, None, 0.1, plane_wave(p, 0.3), 0.5)
    for j, t in enumerate(s.times):
        np.testing.assert_allclose(s.values[j], p * s.x + 0.3 - t * float(W(p)), atol=1e-12)


def test_scheme_monotonicity(W, cos1):
    g1 = lambda x: cone(x) - 0.2
    g2 = lambda x: np.maximum(cone(x), 0.3 * np.sin(3 * np.asarray(x)))
    assert np.all(g1(np.linspace(-5, 5, 1001)) <= g2(np.linspace(-5, 5, 1001)))
    s1 = solve_oscillatory(W, cos1, 0.1, g1, 0.5)
    s2 = solve_oscillatory(W, cos1, 0.1, g2, 0.5)
    assert np.all(s1.values <= s2.values + 1e-12)


def test_constant_shift_commutes(W, cos1):
    s1 = solve_oscillatory(W, cos1, 0.1, cone, 0.5)
    s2 = solve_oscillatory(W, cos1, 0.1, lambda x: cone(x) + 0.75, 0.5)
    np.testing.assert_allclose(s2.values - s1.values, 0.75, atol=1e-12)


def test_padding_doubling_leaves_window_unchanged(W, cos1):
    T = 0.5
    width = 1.1 * T * W.lipschitz_bound
    a = solve_oscillatory(W, cos1, 0.1, cone, T, padding=2 * width)
    b = solve_oscillatory(W, cos1, 0.1, cone, T, padding=4 * width)
    c = solve_oscillatory(W, cos1, 0.1, cone, T)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12
    assert np.max(np.abs(a.values - c.values)) <= 1e-12


def test_cfl_and_step_checks(W, cos1):
    s = solve_oscillatory(W, cos1, 0.1, cone, 0.5)
    assert s.cfl_number <= CFL + 1e-12
    assert s.h == pytest.approx(0.1 / 32)
    with pytest.raises(EvolutionError):
        solve_oscillatory(W, cos1, 0.1, cone, 0.5, h=0.01)
    with pytest.raises(EvolutionError):
        solve_oscillatory(W, cos1, 0.1, cone, 0.5, padding=0.1)
    with pytest.raises(EvolutionError):
        solve_oscillatory(W, cos1, 0.0, cone, 0.5)


def test_value_bound_holds(W, cos1):
    s = solve_oscillatory(W, cos1, 0.1, cone, 1.0)
    bound = value_bound(W, cone, 1.0, (-1, 1), s.h, 1.0)
    assert np.max(np.abs(s.values)) <= bound


def test_homogenized_plane_wave_convex():
    H = PH.from_knots([0.0], [0.0], -1, 2)
    s = solve_homogenized(H, plane_wave(0.8), 0.5)
    for j, t in enumerate(s.times):
        np.testing.assert_allclose(s.values[j], 0.8 * s.x - 1.6 * t, atol=1e-12)


def test_homogenized_plane_wave_on_flat(w_curve):
    s = solve_homogenized(w_curve, plane_wave(2.0), 1.0)
    for j, t in enumerate(s.times):
        np.testing.assert_allclose(s.values[j], 2.0 * s.x - t, atol=1e-9)


def test_homogenized_slopes_stay_bounded(w_curve):
    s = solve_homogenized(w_curve, cone, 1.0)
    sl = s.slopes()
    assert sl.min() >= -1 - 1e-9 and sl.max() <= 1 + 1e-9


def test_tabulated_curve_resolution(w_curve):
    F = tabulate_curve(w_curve, -2.0, 3.0)
    p = np.linspace(-2, 3, 777)
    assert np.max(np.abs(F(p) - w_curve(p))) <= 3 * 1e-3
    assert np.all(np.diff(F.p) <= 1e-3 + 1e-15)
    assert reachable_slopes(cone, (-1, 1), 1 / 256) == pytest.approx((-2.0, 2.0))


def test_zero_potential_report(W):
    rep = convergence_report(W, None, W, T=0.5, eps_list=(0.2, 0.1))
    for r in rep["rows"]:
        assert r["error"] <= 2 * r["hom_refinement_delta"] + 1e-3
    assert rep["within_value_bound"]
    assert "rows" in report_json(rep)


def test_report_rejects_increasing_eps(W, w_curve, cos1):
    with pytest.raises(EvolutionError):
        convergence_report(W, cos1, w_curve, eps_list=(0.1, 0.2))


def test_initial_data_library():
    assert initial_data_from_dict({"kind": "cone"}) is cone
    f = initial_data_from_dict({"kind": "plane_wave", "p": 2.0, "c": 1.0})
    assert float(f(1.0)) == 3.0
    s = initial_data_from_dict({"kind": "sinusoid", "amplitude": 0.5, "wavelength": 4.0})
    assert float(s(1.0)) == pytest.approx(0.5)
    assert float(sinusoid()(0.5)) == pytest.approx(1.0)
    with pytest.raises(EvolutionError):
        initial_data_from_dict({"kind": "nope"})


def test_csv_tiles(tmp_path, W, cos1):
    s = solve_oscillatory(W, cos1, 0.2, cone, 0.2, n_snapshots=2)
    files = s.to_csv(tmp_path / "u.csv", tile=100)
    assert len(files) == int(np.ceil(len(s.x) / 100))
    rows = sum(len(open(f).readlines()) - 1 for f in files)
    assert rows == len(s.x) * len(s.times)
    one = s.to_csv(tmp_path / "v.csv")
    assert open(one[0]).readline().strip() == "x,t,u"
    assert s.summary()["label"] == "eps=0.2"
