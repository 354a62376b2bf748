import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccsynth.lti import FrequencyGrid, StateSpace, closed_loop, is_stable
from ccsynth.plant import GeneralizedPlant, particular_plant
from ccsynth.specs import (DEFAULT_HP1, DEFAULT_HP2, Affine, HalfPlane, LinearConstraint,
                           NormObjective, SpecError, SpecSet, fit_half_planes, frequency_bound,
                           gain_bounds, nyquist_robust_stability, passivity_constraint,
                           pointwise_half_planes, step_shape_constraints, tracking_objective)
from ccsynth.youla import make_tensors

Ts = 0.008
n = 8


def toy_plant():
    # z = z^-1 w + u, y = w: the closed loop is H = z^-1 + Q
    sys = StateSpace([[0.0]], [[1.0, 0.0]], [[1.0], [0.0]], [[0.0, 1.0], [1.0, 0.0]], Ts)
    return GeneralizedPlant(sys, ("w", "u"), ("z", "y"))


@pytest.fixture(scope="module")
def T():
    return make_tensors(toy_plant(), n, 40, FrequencyGrid.linear(Ts, 200))


def toy_impulse(theta, N=40):
    h = np.zeros(N)
    h[1] = 1.0
    h[:len(theta)] += theta
    return h


def toy_freq(theta, omega):
    h = toy_impulse(theta)
    return np.exp(-1j * np.outer(omega * Ts, np.arange(h.size))) @ h


thetas = st.lists(st.floats(-2, 2), min_size=n, max_size=n).map(np.array)


def test_toy_tensors(T):
    off, M = T.time("w->z")
    np.testing.assert_array_equal(off, toy_impulse(np.zeros(n)))
    np.testing.assert_array_equal(M, np.eye(40, n))


# --- half-planes --------------------------------------------------------------

def test_halfplane_invariants():
    for hp in (DEFAULT_HP1, DEFAULT_HP2):
        assert hp.contains(0.0)
        assert not hp.contains(-1.0)
        assert hp.margin(0.0) == pytest.approx(-hp.c)
    with pytest.raises(SpecError):
        HalfPlane(2.0, -0.5)
    with pytest.raises(SpecError):
        HalfPlane(1.0, 0.1)
    with pytest.raises(SpecError):
        HalfPlane(1.0, -1.5)


def test_default_halfplanes_meet_on_axis():
    # both boundaries pass through the same point of the negative real axis
    for hp in (DEFAULT_HP1, DEFAULT_HP2):
        assert hp.margin(-0.9) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=200)
@given(st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False),
       st.floats(-0.99, -0.01), st.floats(0.0, 0.05))
def test_fit_half_planes_properties(h, pivot, margin):
    if abs(h - pivot) < 1e-9:
        return
    a, c = fit_half_planes(np.array([h]), pivot, margin=0.0)
    hp = HalfPlane(a[0], c[0])
    assert hp.contains(0.0)
    assert hp.margin(-1.0) < 0
    for r in np.linspace(pivot - 10, pivot, 7):
        assert hp.margin(r) <= 1e-12
    # the locus point is kept unless it sits on the forbidden ray
    if not (abs(h.imag) < 1e-9 and h.real <= pivot):
        if abs(np.angle(h - pivot)) <= np.pi - 0.3:
            assert hp.margin(h) >= -1e-12
    a2, c2 = fit_half_planes(np.array([h]), pivot, margin=margin * abs(pivot))
    np.testing.assert_allclose(c2 - c, margin * abs(pivot), atol=1e-15)


def test_fit_half_planes_rejects():
    with pytest.raises(SpecError):
        fit_half_planes(np.array([0.3]), pivot=-1.2)
    with pytest.raises(SpecError):
        fit_half_planes(np.array([0.3]), pivot=-0.5, margin=0.6)


# --- passivity and frequency bounds -------------------------------------------

def test_passivity_delay_violates(T):
    con = passivity_constraint(T, "w->z")
    v = con.violation(np.zeros(n))
    cosine = np.cos(T.grid.omega * Ts)
    np.testing.assert_allclose(v, np.maximum(-cosine, 0), atol=1e-12)
    assert v.max() > 0.9


def test_passivity_static_half_passes(T):
    th = np.zeros(n)
    th[0], th[1] = 0.5, -1.0
    assert np.all(passivity_constraint(T, "w->z").violation(th) == 0)
    np.testing.assert_allclose(passivity_constraint(T, "w->z").expr(th), 0.5, atol=1e-12)


def test_passivity_coarse_grid_misses_dense_violation(T):
    # a grid stopping at a quarter of Nyquist never sees the delay go negative
    coarse = FrequencyGrid(np.linspace(0, 0.45 * np.pi / Ts, 20), Ts)
    assert np.all(passivity_constraint(T, "w->z", coarse).violation(np.zeros(n)) == 0)
    assert passivity_constraint(T, "w->z").violation(np.zeros(n)).max() > 0


@settings(max_examples=40, deadline=None)
@given(thetas, st.floats(0.1, 5.0))
def test_frequency_bound_oracle(th, b):
    T = make_tensors(toy_plant(), n, 40, FrequencyGrid.linear(Ts, 50))
    con = frequency_bound(T, "w->z", (0.0, T.grid.nyquist), b)
    mag = np.abs(toy_freq(th, T.grid.omega))
    np.testing.assert_allclose(con.violation(th), np.maximum(mag - b, 0), atol=1e-9)


def test_frequency_bound_edge_cases(T):
    assert frequency_bound(T, "w->z", (0.0, 100.0), np.inf) is None
    con = frequency_bound(T, "w->z", (0.0, 100.0), 0.0)
    assert con.violation(np.zeros(n)).max() == pytest.approx(1.0)
    with pytest.raises(SpecError):
        frequency_bound(T, "w->z", (1.0, 1.0 + 1e-9), 1.0)
    with pytest.raises(SpecError):
        frequency_bound(T, "w->z", (0.0, 2 * T.grid.nyquist), 1.0)
    with pytest.raises(SpecError):
        frequency_bound(T, "w->z", (0.0, 100.0), -1.0)


def test_frequency_bound_callable_drops_infinite(T):
    corner = 200.0
    con = frequency_bound(T, "w->z", (0.0, T.grid.nyquist), lambda w: 2.0 if w < corner else np.inf)
    assert con.count == int(np.sum(T.grid.omega < corner))


# --- gain bounds -----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(thetas, st.floats(0.1, 5.0))
def test_h2_and_l1_oracles(th, b):
    T = make_tensors(toy_plant(), n, 40, FrequencyGrid.linear(Ts, 10))
    h = toy_impulse(th)
    h2 = gain_bounds(T, "w->z", "h2", b)
    l1 = gain_bounds(T, "w->z", "l1", b)
    assert h2.violation(th)[0] == pytest.approx(max(np.linalg.norm(h) - b, 0), abs=1e-12)
    assert l1.violation(th)[0] == pytest.approx(max(np.abs(h).sum() - b, 0), abs=1e-12)


def test_gain_bound_rejects(T):
    with pytest.raises(SpecError):
        gain_bounds(T, "w->z", "h2", 0.0)
    with pytest.raises(SpecError):
        gain_bounds(T, "w->z", "hinf", 1.0)


# --- time-domain specs ----------------------------------------------------------

def test_tracking_zero_at_achievable_target(T, rng):
    th0 = rng.uniform(-1, 1, n)
    r = np.ones(40)
    desired = np.cumsum(toy_impulse(th0))
    obj = tracking_objective(T, "w->z", r, desired)
    assert obj.value(th0) == pytest.approx(0.0, abs=1e-12)
    sol = np.linalg.lstsq(obj.expr.M, -obj.expr.v, rcond=None)[0]
    np.testing.assert_allclose(sol, th0, atol=1e-10)


def test_tracking_norms_and_lengths(T):
    r = np.zeros(40)
    r[0] = 1.0
    d = np.zeros(40)
    for norm, ref in (("2", 1.0), ("inf", 1.0), ("1", 1.0)):
        assert tracking_objective(T, "w->z", r, d, norm=norm).value(np.zeros(n)) == pytest.approx(ref)
    with pytest.raises(SpecError):
        tracking_objective(T, "w->z", np.ones(41), np.ones(41))
    with pytest.raises(SpecError):
        tracking_objective(T, "w->z", np.ones(10), np.ones(9))


def test_steady_state_violation(T):
    (ss,) = step_shape_constraints(T, "w->z", steady_state_value=2.0)
    assert ss.violation(np.zeros(n))[0] == pytest.approx(1.0)
    th = np.zeros(n)
    th[3] = 1.0
    assert ss.violation(th)[0] == pytest.approx(0.0, abs=1e-14)
    (dc,) = step_shape_constraints(T, "w->z", steady_state_value=2.0, steady_state_method="dc")
    assert dc.violation(th)[0] == pytest.approx(0.0, abs=1e-12)


def test_overshoot_and_rise(T):
    cons = step_shape_constraints(T, "w->z", steady_state_value=1.0, no_overshoot=True,
                                  rise_time=(2 * Ts, 0.9))
    names = [c.name for c in cons]
    assert names == ["steady_state", "no_overshoot", "rise_time"]
    th = np.zeros(n)
    assert all(c.violation(th).max() == pytest.approx(0.0, abs=1e-14) for c in cons)
    th[2] = 0.5
    assert cons[1].violation(th).max() == pytest.approx(0.5)
    with pytest.raises(SpecError):
        step_shape_constraints(T, "w->z", no_overshoot=True)


# --- robust stability -------------------------------------------------------------

def test_nyquist_constraint_matches_halfplanes(T, rng):
    th = rng.uniform(-0.3, 0.3, n)
    corner = 2 * np.pi * 5.0
    con = nyquist_robust_stability(T, "w->z", omega_corner=corner)
    H = toy_freq(th, T.grid.omega)
    low = T.grid.omega <= corner
    ref = np.where(low, DEFAULT_HP1.margin(H), DEFAULT_HP2.margin(H))
    np.testing.assert_allclose(con.expr(th), ref, atol=1e-12)


def test_pointwise_scale_and_mask(T, rng):
    th = rng.uniform(-1, 1, n)
    m = np.zeros(T.grid.omega.size, bool)
    m[::7] = True
    con = pointwise_half_planes(T, "w->z", 1.0, -0.9, scale=0.5, mask=m)
    H = toy_freq(th, T.grid.omega[m])
    np.testing.assert_allclose(con.expr(th), 0.5 * H.real + 0.9, atol=1e-12)


def test_nyquist_pieces_must_cover(T):
    with pytest.raises(SpecError):
        nyquist_robust_stability(T, "w->z", pieces=[((0.0, 10.0), DEFAULT_HP1)])
    with pytest.raises(SpecError):
        nyquist_robust_stability(T, "w->z", omega_corner=0.0)


@pytest.mark.parametrize("delta", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_robust_design_stable_along_uncertainty(force_result, delta):
    P = force_result.problem.plant
    cl = closed_loop(particular_plant(P, delta), force_result.state_space())
    assert is_stable(cl)[0]


# --- containers -----------------------------------------------------------------

def test_specset_rejects_wrong_width():
    s = SpecSet(3)
    with pytest.raises(SpecError):
        s.add(LinearConstraint(expr=Affine(np.ones((1, 2)), [0.0])))
    with pytest.raises(SpecError):
        s.add("tracking")
    s.add(None, [NormObjective(expr=Affine(np.eye(3), np.zeros(3)))])
    assert len(s) == 1
    assert s.objective([3.0, 4.0, 0.0]) == pytest.approx(5.0)


def test_affine_validation():
    with pytest.raises(SpecError):
        Affine(np.ones((2, 2)), np.ones(3))
    with pytest.raises(SpecError):
        Affine(np.array([[np.nan]]), [0.0])
    with pytest.raises(SpecError):
        NormObjective(expr=Affine(np.eye(1), [0.0]), norm="3")
    e = Affine.vstack([Affine(np.eye(2), [1, 2]), -Affine(np.eye(2), [1, 2])])
    np.testing.assert_array_equal(e([1, 1]), [2, 3, -2, -3])
