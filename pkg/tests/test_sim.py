import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccsynth.lti import StateSpace, step_response
from ccsynth.plant import HumanModel
from ccsynth.sim import (ContactScenario, Patch, SimulationError, SweepReport, SweepRow,
                         TerracedSurface, force_step, make_admittance_controller,
                         make_pi_controller, min_jerk, settling_time, simulate_contact,
                         simulate_guiding, stiffness_sweep, traces_svg, tune_pi)

Ts = 0.008


def flat(k, **kw):
    args = dict(speed=0.0, setpoint=5.0, duration=3.0, Ts=Ts, settle=0.0)
    args.update(kw)
    return ContactScenario(TerracedSurface.flat(k), **args)


@pytest.fixture(scope="module")
def pi(robot):
    kp, ki, _ = tune_pi(robot, 3000.0)
    return make_pi_controller(kp, ki, Ts)


# --- surfaces and scenarios -------------------------------------------------------

def test_terrace_layout():
    s = TerracedSurface.materials()
    assert [p.stiffness for p in s.patches] == [3e3, 20e3, 80e3, 60e3, 60e3, 4e3]
    assert s.length == pytest.approx(0.24)
    np.testing.assert_array_equal(s.index([-1.0, 0.0, 0.0399, 0.04, 10.0]), [0, 0, 0, 1, 5])
    assert s.to_dict()["patches"][2]["name"] == "steel"


def test_bad_inputs():
    with pytest.raises(SimulationError):
        Patch(0.04, 0.0, 0.0)
    with pytest.raises(SimulationError):
        TerracedSurface(())
    with pytest.raises(SimulationError):
        ContactScenario(TerracedSurface.flat(1e3), noise=-1.0)
    with pytest.raises(SimulationError):
        make_admittance_controller(0.0, 8.0, 0.0, Ts)
    with pytest.raises(SimulationError):
        min_jerk(1.0, 0.0, Ts, 1.0)


def test_scenario_duration():
    sc = ContactScenario(TerracedSurface.materials(), speed=0.005, settle=2.0)
    assert sc.total_time == pytest.approx(2.0 + 0.24 / 0.005)
    assert sc.n_samples == int(round(sc.total_time / Ts)) + 1


# --- contact simulation ---------------------------------------------------------------

def test_zero_controller_never_presses(robot):
    tr = simulate_contact(StateSpace.static([[0.0]], Ts), robot,
                          ContactScenario(TerracedSurface.materials(), duration=20.0))
    assert not tr.diverged
    assert np.all(tr.force == 0)
    # the terrace falls away from the start height, so contact is lost
    assert tr.separation[-1] > 0 and not tr.contact[-1]


@pytest.mark.parametrize("k", [3000.0, 20000.0, 80000.0])
def test_bilateral_flat_matches_linear_loop(robot, force_result, pi, k):
    for K in (force_result.controller, pi):
        tr = simulate_contact(K, robot, flat(k, unilateral=False))
        lin = 5.0 * force_step(K, robot, k, len(tr))
        assert np.max(np.abs(tr.force - lin)) <= 1e-6 * max(1.0, np.max(np.abs(lin)))


def test_complementarity(robot, force_result):
    tr = simulate_contact(force_result.controller, robot,
                          ContactScenario(TerracedSurface.materials(), duration=30.0))
    assert np.all(tr.force >= 0)
    assert np.all(tr.separation >= 0)
    assert np.all(tr.force * tr.separation == 0)
    assert np.all(tr.contact == (tr.force > 0))


def test_noise_determinism(robot, force_result):
    sc = flat(20000.0, noise=0.05, seed=7)
    a = simulate_contact(force_result.controller, robot, sc)
    b = simulate_contact(force_result.controller, robot, sc)
    c = simulate_contact(force_result.controller, robot, flat(20000.0, noise=0.05, seed=8))
    assert a.to_csv() == b.to_csv()
    assert not np.array_equal(a.force, c.force)
    assert np.max(np.abs(a.force_measured - a.force)) > 0


def test_trace_csv_is_exact(robot, force_result):
    tr = simulate_contact(force_result.controller, robot, flat(3000.0, duration=0.5))
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0][:4] == ["t", "x_cmd", "x", "force"]
    assert len(rows) == len(tr) + 1
    np.testing.assert_array_equal([float(r[3]) for r in rows[1:]], tr.force)


def test_divergence_gives_partial_trace(robot):
    K = make_pi_controller(5e-3, 1.0, Ts)
    sc = flat(80000.0, duration=20.0, unilateral=False)
    tr = simulate_contact(K, robot, sc)
    assert tr.diverged and tr.diverged_at < 20.0
    assert len(tr) < sc.n_samples


def test_patch_summary(robot, force_result):
    s = TerracedSurface.materials()
    tr = simulate_contact(force_result.controller, robot, ContactScenario(s))
    rows = tr.patch_summary(s)
    assert [r["name"] for r in rows][:3] == ["foam", "hard paper", "steel"]
    assert all(r["samples"] > 0 for r in rows)


# --- guiding --------------------------------------------------------------------------

def test_guiding_still_operator_is_quiet(robot, guiding_result):
    tr = simulate_guiding(guiding_result.controller, robot, HumanModel(), np.zeros(300))
    assert np.all(tr.force == 0) and np.all(tr.x == 0)


def test_guiding_without_controller_is_static(robot):
    # the arm pulls a stiff, unmoving robot: force equals the spring law
    xh = min_jerk(0.001, 0.5, Ts, 1.0)
    h = HumanModel(20000.0, 0.0, 0.0, 0.0)
    tr = simulate_guiding(StateSpace.static([[0.0]], Ts), robot, h, xh)
    np.testing.assert_allclose(tr.force, 20000.0 * (xh - tr.x), rtol=1e-12, atol=1e-12)


def test_min_jerk_profile():
    x = min_jerk(0.6, 3.2, Ts, 5.0)
    assert x[0] == 0 and x[-1] == pytest.approx(0.6)
    assert np.all(np.diff(x) >= -1e-15)
    mid = int(round(1.6 / Ts))
    assert x[mid] == pytest.approx(0.3, abs=1e-12)


# --- baselines ------------------------------------------------------------------------

def test_pi_without_integral_is_static():
    K = make_pi_controller(0.3, 0.0, Ts)
    assert K.n_states == 0 and K.D[0, 0] == 0.3


@given(st.floats(1e-6, 1e-2), st.floats(1e-4, 1.0))
def test_pi_impulse_structure(kp, ki):
    K = make_pi_controller(kp, ki, Ts)
    s = step_response(K, 10)[:, 0, 0]
    # trapezoidal integral of a unit step
    ref = kp + ki * Ts * (np.arange(10) + 0.5)
    np.testing.assert_allclose(s, ref, rtol=1e-10)


def test_admittance_controller_dc():
    K = make_admittance_controller(1.2, 8.0, 500.0, Ts)
    assert K.dc_gain()[0, 0] == pytest.approx(1 / 500.0, rel=1e-9)


def test_pi_tuning_matches_time_constant(robot):
    for k in (3000.0, 80000.0):
        kp, ki, info = tune_pi(robot, k, tau=0.17)
        y = force_step(make_pi_controller(kp, ki, Ts), robot, k, 250)
        t63 = np.argmax(y >= 1 - np.exp(-1)) * Ts
        assert t63 == pytest.approx(0.17, rel=0.10)
        assert kp == pytest.approx(ki * info["zero_at"])


def test_settling_time():
    y = np.ones(50)
    assert settling_time(y, Ts) == 0.0
    y[:10] = 0.0
    assert settling_time(y, Ts) == pytest.approx(10 * Ts)
    y[-1] = 2.0
    assert settling_time(y, Ts) == np.inf


# --- sweeps ---------------------------------------------------------------------------

def test_sweep_report_logic():
    rows = [SweepRow(k, 0.5, k < 30, 5.0, "ok") for k in (10.0, 20.0, 40.0, 50.0)]
    rep = SweepReport(rows, nominal=10.0)
    assert not rep.all_stable and rep.first_unstable == 40.0
    assert rep.max_stable == 20.0 and rep.ratio == 2.0
    text = rep.to_csv()
    assert text.splitlines()[0] == "k,spectral_radius,verdict,peak_force,sim_status"
    assert text.count("unstable") == 2


def test_sweep_flags_pi_and_clears_robust(robot, pi, force_result):
    ks = [3000.0, 20000.0, 80000.0]
    bad = stiffness_sweep(pi, robot, "force", ks, nominal=3000.0)
    assert bad.rows[0].stable and not bad.all_stable
    good = stiffness_sweep(force_result.controller, robot, "force", ks, nominal=3000.0)
    assert good.all_stable and good.ratio == pytest.approx(80 / 3)
    with pytest.raises(SimulationError):
        stiffness_sweep(pi, robot, "force", [-1.0])
    with pytest.raises(SimulationError):
        stiffness_sweep(pi, robot, "hydraulic", ks)


@settings(max_examples=5, deadline=None)
@given(k=st.floats(3000.0, 100000.0))
def test_robust_controller_stable_anywhere_in_range(robot, force_result, k):
    rep = stiffness_sweep(force_result.controller, robot, "force", [k], sim_time=1.0)
    assert rep.all_stable


def test_svg(robot, force_result):
    tr = simulate_contact(force_result.controller, robot, flat(3000.0, duration=0.5))
    svg = traces_svg({"a": tr})
    assert svg.startswith("<svg") and svg.count("<polyline") == 2
