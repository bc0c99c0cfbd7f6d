"""Decompositions, admissible selections, slope intervals and special fields."""
import numpy as np
import pytest
from scipy.integrate import quad

from nonconvex_hj.corrector import (
    AdmissibleSelection, CorrectorError, OutsideAdmissibleRange, Segment, SlopeField, brute_force_selections,
    decompose, expected_slope, flat_interval, inf_admissible, interpolate, junction_admissible,
    monotone_solution, slope_intervals, subsolution_at_zero, sup_admissible, transition_slope,
    verify_metric_solution, zero_level_endpoints,
)
from nonconvex_hj.potential import PeriodicAnalytic

from conftest import two_sided, two_well_left, two_well_right, w_well


# --- junction test -----------------------------------------------------------------

def test_junction_without_jump(W):
    assert junction_admissible(W, 0.0, 2.0, 1.3, 1.3)


def test_junction_down_jump_between_branch_values(W):
    # mu - V(a) = 2: psi_1(2) = 3, psi_2(2) = 1.5 and max H on [1.5, 3] is 2
    assert junction_admissible(W, -0.5, 1.5, 3.0, 1.5)


def test_junction_up_jump_between_branch_values(W):
    # psi_3(2) = 2/3 up to psi_2(2) = 1.5: min H on [2/3, 1.5] is 2
    assert junction_admissible(W, -0.5, 1.5, 2.0 / 3.0, 1.5)


def test_junction_rejections(W):
    # an upward jump across the well bottom (H(2) = 1 < 2) is not a supersolution
    assert not junction_admissible(W, -0.5, 1.5, 2.0 / 3.0, 3.0)
    # a downward jump across the bump top (H(1) = 3 > 2) is not a subsolution
    assert not junction_admissible(W, -0.5, 1.5, 3.0, 2.0 / 3.0)
    assert junction_admissible(W, -0.5, 1.5, 2.0 / 3.0, 3.0, mode="subsolution")


# --- decomposition -----------------------------------------------------------------

def test_decompose_without_crossings(W, cos1):
    dec = decompose(W, cos1, 1.5)
    assert dec.n == 1 and dec.junctions == ()
    assert dec.start_junction == [None]


def test_decompose_large_oscillation(W, cos25):
    dec = decompose(W, cos25, 1.5)
    assert dec.n == 2
    ys = sorted(J.y for J in dec.junctions)
    # V(y) = -1.5  <=>  cos 2 pi y = -0.2
    y0 = np.arccos(-0.2) / (2 * np.pi)
    np.testing.assert_allclose(ys, [y0, 1 - y0], atol=1e-9)
    assert {J.tag for J in dec.junctions} == {"M1"}


@pytest.mark.parametrize("mu", [3.0, 3.5, -0.1])
def test_decompose_outside_admissible_range(W, cos1, mu):
    with pytest.raises(OutsideAdmissibleRange):
        decompose(W, cos1, mu)


def test_decomposition_interval_invariant(W, cos25):
    dec = decompose(W, cos25, 0.7)
    crit = [1.0, 3.0]
    for a, b in dec.intervals:
        y = np.linspace(a, b, 203)[1:-1]
        s = dec.mu - cos25(y)
        for c in crit:
            assert np.all(s > c) or np.all(s < c)


# --- sup / inf selections ------------------------------------------------------------

CASES = [
    (w_well, 2.5, [0.3, 0.7, 1.5, 2.2, 2.9]),
    (two_well_left, 3.0, [0.2, 0.8, 1.5, 2.5]),
    (two_well_right, 3.0, [0.2, 1.1, 1.9, 2.6]),
]


@pytest.mark.parametrize("make, mbar, mus", CASES)
def test_selections_match_brute_force(make, mbar, mus):
    H = make()
    model = PeriodicAnalytic.cosine(mbar)
    for mu in mus:
        up = sup_admissible(H, model, mu)
        dn = inf_admissible(H, model, mu)
        allsel = brute_force_selections(up.decomposition)
        assert len(up.decomposition.intervals) <= 8
        assert allsel
        best = tuple(min(s[i] for s in allsel) for i in range(up.decomposition.n))
        worst = tuple(max(s[i] for s in allsel) for i in range(up.decomposition.n))
        assert up.branches == best
        assert dn.branches == worst
        for sel in (up, dn):
            rep = verify_metric_solution(sel.field(), H)
            assert rep.passed, rep.to_dict()
            assert rep.residual <= 1e-8


def test_sup_selection_near_top_is_single_branch(W, cos25):
    up = sup_admissible(W, cos25, 2.99)
    dn = inf_admissible(W, cos25, 2.99)
    assert up.expected() >= dn.expected()
    assert set(up.branches) == {1}


def test_no_selection_raises(W, cos1):
    with pytest.raises((CorrectorError, OutsideAdmissibleRange)):
        sup_admissible(W, cos1, 5.0)


# --- expected slopes and flat intervals ------------------------------------------------

def test_expected_slope_of_first_branch(W, cos1):
    path = cos1.period_path()
    f = SlopeField(path, 1.0, [Segment(0.0, 1.0, lambda y: W.psi(1, 1.0 - path(y)), 1)])
    assert expected_slope(f) == pytest.approx(2.5, abs=1e-10)


def test_expected_slope_of_constant():
    path = PeriodicAnalytic.cosine(1.0).period_path()
    f = SlopeField(path, 0.0, [Segment(0.0, 1.0, lambda y: 0 * y + 0.37)])
    assert expected_slope(f) == pytest.approx(0.37)


@pytest.mark.parametrize("mu", [1.0 - 1e-9, 1.0 + 1e-9])
def test_expected_slope_limit_at_critical_level(W, cos1, mu):
    # level 1 is reached on the increasing branch (E = 1/2) and on the flat component
    # whose smallest average is E psi_2(1 - V) = 1.75
    ivs = slope_intervals(W, cos1, mu)
    assert ivs[0].lo == pytest.approx(0.5, abs=1e-6) and ivs[0].width < 1e-12
    assert ivs[-1].lo == pytest.approx(1.75, abs=1e-6)
    assert ivs[-1].hi == pytest.approx(2.5, abs=1e-6)
    assert inf_admissible(W, cos1, mu).expected() == pytest.approx(0.5, abs=1e-6)


def test_flat_interval_at_flat_level(W, cos1):
    lo, hi = flat_interval(W, cos1, 2.0)
    assert lo == pytest.approx(5 / 6, abs=1e-8)
    assert hi == pytest.approx(1.25, abs=1e-8)


def test_flat_interval_above_range(W, cos1):
    lo, hi = flat_interval(W, cos1, 4.0)
    assert lo == pytest.approx(5.5, abs=1e-10) and hi == pytest.approx(5.5, abs=1e-10)


def test_flat_intervals_are_disjoint(W, cos25):
    mus = np.linspace(0.05, 2.95, 50)
    ivs = sorted(flat_interval(W, cos25, m) for m in mus)
    for (a0, b0), (a1, b1) in zip(ivs[:-1], ivs[1:]):
        assert b0 < a1


# --- interpolation and transition ------------------------------------------------------

MU_MIX = 1.0   # W-well, mbar = 2.5: sup and inf differ on one interval of the period


def _pair(W, model):
    up = sup_admissible(W, model, MU_MIX)
    dn = inf_admissible(W, model, MU_MIX)
    dec = up.decomposition
    f1 = up.field()
    f2 = AdmissibleSelection(dec, dn.branches, "inf").field()
    return dec, up, dn, f1, f2


def test_interpolate_endpoints_and_mass(W, cos25):
    dec, up, dn, f1, f2 = _pair(W, cos25)
    I = (dec.intervals[0][0], dec.intervals[-1][1])
    m1, m2 = f1.integral(), f2.integral()
    assert m1 > m2
    assert interpolate(f1, f2, I, m1) is f1
    assert interpolate(f1, f2, I, m2) is f2
    for c in (0.25 * m1 + 0.75 * m2, 0.5 * (m1 + m2), 0.9 * m1 + 0.1 * m2):
        fc = interpolate(f1, f2, I, c)
        assert abs(fc.integral() - c) <= 1e-8
        assert verify_metric_solution(fc, W).passed
        y = np.linspace(I[0], I[1], 997, endpoint=False)
        assert np.all(fc(y) <= f1(y) + 1e-12) and np.all(fc(y) >= f2(y) - 1e-12)
    with pytest.raises(ValueError):
        interpolate(f1, f2, I, m1 + 1.0)


def test_interpolate_single_switch(W, cos25):
    dec, up, dn, f1, f2 = _pair(W, cos25)
    (i,) = [k for k in range(dec.n) if up.branches[k] != dn.branches[k]]
    a, b = dec.intervals[i]
    w = dec.weights()[i]
    # the mass target lies between psi_2 and psi_1: one downward switch 1 -> 2 carries it
    c = 0.5 * (w[0] + w[1])
    fc = interpolate(f1, f2, (a, b), c)
    inner = [sg for sg in fc.segments if sg.a >= a - 1e-12 and sg.b <= b + 1e-12]
    assert [sg.label for sg in inner] == [1, 2]
    assert verify_metric_solution(fc, W).passed
    # oracle: scan switch locations for the one that carries mass c
    psi1 = lambda t: float(W.psi(1, MU_MIX - cos25(np.array(t))))
    psi2 = lambda t: float(W.psi(2, MU_MIX - cos25(np.array(t))))
    xs = np.linspace(a, b, 4001)
    masses = np.array([quad(psi1, a, x)[0] + quad(psi2, x, b)[0] for x in xs])
    k = np.argmin(np.abs(masses - c))
    assert abs(inner[0].b - xs[k]) <= 2 * (xs[1] - xs[0])


def test_interpolate_below_middle_branch(W, cos25):
    dec, up, dn, f1, f2 = _pair(W, cos25)
    (i,) = [k for k in range(dec.n) if up.branches[k] != dn.branches[k]]
    a, b = dec.intervals[i]
    w = dec.weights()[i]
    c = 0.5 * (w[1] + w[2])
    fc = interpolate(f1, f2, (a, b), c)
    total = sum(quad(sg.fn, sg.a, sg.b)[0] for sg in fc.segments if sg.a >= a - 1e-12 and sg.b <= b + 1e-12)
    assert abs(total - c) <= 1e-8
    rep = verify_metric_solution(fc, W)
    assert rep.passed and rep.residual <= 1e-8


def test_transition_slope(W, cos25):
    e0 = inf_admissible(W, cos25, MU_MIX).expected()
    e1 = sup_admissible(W, cos25, MU_MIX).expected()
    assert e1 > e0
    assert expected_slope(transition_slope(W, cos25, MU_MIX, 0.0)) == pytest.approx(e0, abs=1e-12)
    assert expected_slope(transition_slope(W, cos25, MU_MIX, 1.0)) == pytest.approx(e1, abs=1e-12)
    half = transition_slope(W, cos25, MU_MIX, 0.5)
    assert expected_slope(half) == pytest.approx(0.5 * (e0 + e1), abs=1e-6)
    assert verify_metric_solution(half, W).passed


def test_transition_is_monotone_in_t(W, cos25):
    ts = np.linspace(0, 1, 101)
    E = np.array([expected_slope(transition_slope(W, cos25, MU_MIX, t)) for t in ts])
    assert np.all(np.diff(E) >= -1e-10)
    assert E[-1] - E[0] > 0.5


# --- monotone solutions and subsolutions ---------------------------------------------------

def test_monotone_solution_above_range(W, cos1):
    f = monotone_solution(W, cos1, 4.0)
    y = np.linspace(0, 1, 501)
    np.testing.assert_allclose(f(y), 5.0 - cos1(y), atol=1e-12)
    assert verify_metric_solution(f, W).passed


def test_monotone_solution_at_zero(W, cos1):
    f = monotone_solution(W, cos1, 0.0)
    y = np.linspace(0, 1, 501)
    np.testing.assert_allclose(f(y), W.psi(3, -cos1(y)), atol=1e-12)
    assert np.min(f(y)) >= -1e-12
    assert verify_metric_solution(f, W).passed


def test_zero_level_endpoints(W, cos1):
    q_m1, q0 = zero_level_endpoints(W, cos1)
    assert q_m1 == pytest.approx(-1 / 6, abs=1e-10)
    assert q0 == pytest.approx(1 / 6, abs=1e-10)


def test_subsolution_at_zero(W, cos1):
    f = subsolution_at_zero(W, cos1, 0.0, 0.4)
    assert expected_slope(f) == pytest.approx(0.0, abs=1e-6)
    rep = verify_metric_solution(f, W, mode="subsolution", delta=0.4)
    assert rep.passed, rep.to_dict()


def test_subsolution_at_zero_endpoints(W, cos1):
    f0 = subsolution_at_zero(W, cos1, 1 / 6, 0.4)
    assert expected_slope(f0) == pytest.approx(1 / 6, abs=1e-8)
    fm = subsolution_at_zero(W, cos1, -1 / 6, 0.4)
    assert expected_slope(fm) == pytest.approx(-1 / 6, abs=1e-8)
    assert verify_metric_solution(fm, W).passed
    with pytest.raises(ValueError):
        subsolution_at_zero(W, cos1, 0.3, 0.4)
    with pytest.raises(ValueError):
        subsolution_at_zero(W, cos1, 0.0, 0.6)


def test_verification_names_bad_junction(W, cos25):
    path = cos25.period_path()
    dec = decompose(W, cos25, MU_MIX)
    # branch 3 on the first interval then branch 1 across a cut where mu - V = 3:
    # an upward jump from 1 to 4 over the well bottom H(2) = 1 < 3
    (a, b), (c, d), (e, g) = dec.intervals
    fn = lambda j: (lambda y: W.psi(j, MU_MIX - path(y)))
    f = SlopeField(path, MU_MIX, [Segment(a, b, fn(3)), Segment(c, d, fn(1)), Segment(e, g, fn(1))])
    rep = verify_metric_solution(f, W)
    assert not rep.passed
    bad = rep.failures
    assert len(bad) >= 1
    assert any(abs(r.y - c) < 1e-9 and r.kind == "up" for r in bad)


def test_slope_field_csv(tmp_path, W, cos1):
    f = monotone_solution(W, cos1, 4.0)
    out = tmp_path / "f.csv"
    f.to_csv(out, n=11)
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (11, 2)
    assert open(out).readline().strip() == "y,f"
