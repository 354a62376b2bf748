import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccsynth.lti import (FrequencyGrid, LTIError, StateSpace, closed_loop, impulse_response,
                         is_stable)
from ccsynth.plant import HumanModel, RobotModel, SpringEnvironment, build_admittance_plant, build_force_plant
from ccsynth.youla import (ControllerRuntime, HorizonError, InternalModelController, QBasis,
                           assemble_H, controller_step, make_tensors, realize_controller)

Ts = 0.008
N = 250


@pytest.fixture(scope="module")
def force_plant():
    return build_force_plant(RobotModel.from_parameters(), SpringEnvironment(3000.0, 97000.0))


@pytest.fixture(scope="module")
def tensors(force_plant):
    return make_tensors(force_plant, 64, N, FrequencyGrid.log(Ts, 120), np.inf)


def _channels(P):
    return [(o, i) for o in P.exogenous_outputs for i in P.exogenous_inputs]


def test_zero_theta_gives_P11(force_plant, tensors):
    P11 = impulse_response(force_plant.blocks()[0], N).h
    for o, (zo) in enumerate(force_plant.exogenous_outputs):
        for i, wi in enumerate(force_plant.exogenous_inputs):
            np.testing.assert_array_equal(assemble_H(tensors, np.zeros(64), (zo, wi)).siso, P11[:, o, i])


def test_shift_structure(tensors):
    for key in [("f_a", "f_d"), ("z_E", "w_E"), ("x_a", "x_env")]:
        _, M = tensors.time(key)
        np.testing.assert_array_equal(M[1:, 1:], M[:-1, :-1])
        assert np.all(M[0, 1:] == 0)


def test_basis_neighbours_shift(tensors):
    e3, e4 = np.eye(64)[3], np.eye(64)[4]
    h3 = assemble_H(tensors, e3, "f_d->f_a").siso - assemble_H(tensors, np.zeros(64), "f_d->f_a").siso
    h4 = assemble_H(tensors, e4, "f_d->f_a").siso - assemble_H(tensors, np.zeros(64), "f_d->f_a").siso
    np.testing.assert_array_equal(h4[1:], h3[:-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-2.0, 3.0))
def test_affinity(seed, alpha):
    rng = np.random.default_rng(seed)
    P = build_force_plant(RobotModel.from_parameters(), SpringEnvironment(3000.0, 97000.0))
    T = make_tensors(P, 16, 120, FrequencyGrid.log(Ts, 30), np.inf)
    t1, t2 = rng.uniform(-1, 1, 16), rng.uniform(-1, 1, 16)
    for dom in ("time", "freq"):
        def H(th):
            r = assemble_H(T, th, "f_d->f_a", domain=dom)
            return r.siso if dom == "time" else r
        lhs = H(alpha * t1 + (1 - alpha) * t2)
        rhs = alpha * H(t1) + (1 - alpha) * H(t2)
        scale = max(1.0, np.max(np.abs(H(t1))), np.max(np.abs(H(t2))))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale * (1 + abs(alpha) + abs(1 - alpha))


def test_frequency_tensor_matches_dft(rng, force_plant):
    # long horizon so the truncated DFT converges to the transfer function
    T = make_tensors(force_plant, 16, 1500, FrequencyGrid.log(Ts, 60), np.inf)
    for _ in range(5):
        th = rng.uniform(-1, 1, 16) * 1e-4
        for ch in ["f_d->f_a", "w_E->z_E", "x_env->x_a"]:
            h = assemble_H(T, th, ch).siso
            Hf = assemble_H(T, th, ch, domain="freq")
            dft = np.exp(-1j * np.outer(T.grid.omega * Ts, np.arange(h.size))) @ h
            assert np.max(np.abs(Hf - dft)) <= 1e-8 * max(1.0, np.max(np.abs(Hf)))


def test_steady_state_is_impulse_sum(tensors, rng):
    th = rng.uniform(-1, 1, 64) * 1e-4
    d0, row = tensors["f_d->f_a"].dc_maps()
    h = assemble_H(tensors, th, "f_d->f_a").siso
    assert d0 + row @ th == pytest.approx(h.sum(), abs=1e-8)


def test_unknown_channel(tensors):
    with pytest.raises(KeyError):
        assemble_H(tensors, np.zeros(64), "f_d->nope")
    with pytest.raises(ValueError):
        assemble_H(tensors, np.zeros(3), "f_d->f_a")


def test_horizon_too_short(force_plant):
    with pytest.raises(HorizonError):
        make_tensors(force_plant, 64, 70, FrequencyGrid.log(Ts, 10))


def test_zero_theta_is_zero_controller(force_plant):
    K = realize_controller(QBasis(8, Ts), np.zeros(8), force_plant.P22)
    assert np.all(impulse_response(K, 30).h == 0)


@given(st.floats(-5, 5), st.floats(-0.9, 5))
def test_static_plant_dc_gain(q, p):
    if abs(1 + q * p) < 1e-3:
        return
    P22 = StateSpace.static([[p]], Ts)
    K = InternalModelController(np.array([q]), P22).to_ss()
    assert K.dc_gain()[0, 0] == pytest.approx(q / (1 + q * p), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("which", ["force", "admittance"])
def test_oracle_equivalence(which, rng):
    robot = RobotModel.from_parameters()
    if which == "force":
        P = build_force_plant(robot, SpringEnvironment(3000.0, 97000.0))
    else:
        P = build_admittance_plant(robot, HumanModel(20000.0, 50.0, 480000.0, 200.0))
    T = make_tensors(P, 64, N, FrequencyGrid.log(Ts, 20), np.inf)
    for _ in range(10):
        th = rng.uniform(-1, 1, 64)
        K = realize_controller(QBasis(64, Ts), th, P.P22)
        cl = closed_loop(P, K)
        assert is_stable(cl)[0]
        h = impulse_response(cl, N).h
        for o, zo in enumerate(P.exogenous_outputs):
            for i, wi in enumerate(P.exogenous_inputs):
                H = assemble_H(T, th, (zo, wi)).siso
                assert np.max(np.abs(h[:, o, i] - H)) <= 1e-6 * max(1.0, np.max(np.abs(H)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_any_fir_q_stabilizes(seed, size):
    rng = np.random.default_rng(seed)
    P = build_force_plant(RobotModel.from_parameters(), SpringEnvironment(3000.0, 97000.0))
    th = rng.standard_normal(32)
    th *= size / np.linalg.norm(th)
    cl = closed_loop(P, InternalModelController(th, P.P22).to_ss())
    assert is_stable(cl)[0]


def test_controller_roundtrip(force_plant, rng):
    c = InternalModelController(rng.standard_normal(64), force_plant.P22)
    back = InternalModelController.from_dict(c.to_dict())
    np.testing.assert_array_equal(back.theta, c.theta)
    a, b = impulse_response(c.to_ss(), 200).h, impulse_response(back.to_ss(), 200).h
    assert np.max(np.abs(a - b)) <= 1e-12


def test_runtime_matches_impulse(force_plant, rng):
    c = InternalModelController(rng.standard_normal(64) * 1e-3, force_plant.P22)
    y = np.zeros(120)
    y[0] = 1.0
    for ctrl in (c, c.to_ss()):
        rt = ControllerRuntime(ctrl)
        u = rt.run(y)
        np.testing.assert_allclose(u, impulse_response(c.to_ss(), 120).siso, atol=1e-15)
        rt.reset()
        assert np.all(rt.run(np.zeros(50)) == 0)


def test_runtime_fault_holds_output(force_plant):
    rt = ControllerRuntime(InternalModelController(np.array([0.5, 0.25]), force_plant.P22))
    u1, f1 = controller_step(rt, 1.0)
    u2, f2 = controller_step(rt, float("nan"))
    assert not f1 and f2 and u2 == u1
    u3, f3 = controller_step(rt, 0.0)
    assert not f3 and np.isfinite(u3)


def test_runtime_determinism(force_plant, rng):
    c = InternalModelController(rng.standard_normal(64) * 1e-3, force_plant.P22)
    ys = rng.standard_normal(500)
    a = ControllerRuntime(c).run(ys)
    b = ControllerRuntime(c).run(ys)
    assert a.tobytes() == b.tobytes()


def test_runtime_throughput(force_plant, rng):
    rt = ControllerRuntime(InternalModelController(rng.standard_normal(64) * 1e-3, force_plant.P22))
    rt.run(np.zeros(10))
    ys = rng.standard_normal(1_000_000) * 1e-3
    t0 = time.perf_counter()
    rt.run(ys)
    assert time.perf_counter() - t0 < 1.0


def test_unstable_P22_rejected():
    with pytest.raises(LTIError):
        realize_controller(None, [1.0], StateSpace([[1.5]], [[1.0]], [[1.0]], [[0.0]], Ts))
