import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccsynth.lti import FrequencyGrid
from ccsynth.solve import (CompileError, ConicProgram, compile, dump_program, load_program,
                           regression_set, solve, verify_solution)
from ccsynth.specs import (Affine, L1Constraint, LinearConstraint, NormObjective, SocConstraint,
                           SpecSet, passivity_constraint, tracking_objective)
from ccsynth.youla import make_tensors

from test_specs import toy_impulse, toy_plant

BACKENDS = ["ipm", "admm"]


def lsq(n, a, weight=1.0, norm="2"):
    return NormObjective(name="fit", expr=Affine(np.eye(n), -np.asarray(a, float)), norm=norm,
                         weight=weight)


def project_l1_ball(a, r):
    # sort-based projection onto {x : |x|_1 <= r}
    if np.abs(a).sum() <= r:
        return a.copy()
    u = np.sort(np.abs(a))[::-1]
    css = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, a.size + 1) > css - r)[0][-1]
    lam = (css[k] - r) / (k + 1)
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0)


def lp(c, A, b, n_zero=0):
    c, A, b = (np.asarray(v, float) for v in (c, A, b))
    A = A.reshape(b.size, c.size)
    return ConicProgram(c, A, b, n_zero, b.size - n_zero, (), c.size, (("theta", 0, c.size),), ())


# --- compile -----------------------------------------------------------------

def test_compile_two_norm_counts():
    S = SpecSet(4).add(lsq(4, np.ones(4)))
    P = compile(S)
    assert P.size() == {"variables": 5, "rows": 5, "zero": 0, "nonneg": 0, "soc": 1, "soc_rows": 5}
    assert P.variables[1][0].startswith("t:")
    S.add(LinearConstraint(name="eq", expr=Affine(np.ones((1, 4)), [-1.0]), kind="=="))
    P2 = compile(S)
    assert P2.n_rows == P.n_rows + 1 and P2.n_zero == 1


def test_compile_other_norms():
    P = compile(SpecSet(3).add(lsq(3, np.zeros(3), norm="inf")))
    assert (P.n_vars, P.n_nonneg, P.n_cones) == (4, 6, 0)
    P = compile(SpecSet(3).add(lsq(3, np.zeros(3), norm="1")))
    assert (P.n_vars, P.n_nonneg) == (6, 6)
    P = compile(SpecSet(3).add(lsq(3, np.zeros(3)), L1Constraint(expr=Affine(np.eye(3), np.zeros(3)))))
    assert P.n_nonneg == 7 and P.n_vars == 7


def test_compile_errors():
    with pytest.raises(CompileError):
        compile(SpecSet(2))
    with pytest.raises(CompileError):
        compile(SpecSet(2).add(lsq(2, [0, 0])), n=3)


def test_compile_is_deterministic():
    S = SpecSet(5).add(lsq(5, np.arange(5)), LinearConstraint(expr=Affine(np.eye(5), np.ones(5))))
    assert compile(S).digest() == compile(S).digest()


def test_dump_load_roundtrip(tmp_path):
    S = SpecSet(3).add(lsq(3, [1, 2, 3]), SocConstraint(t=Affine(np.zeros((1, 3)), [1.0]),
                                                        X=Affine(np.eye(3), np.zeros(3)), dim=3))
    P = compile(S)
    text = dump_program(P, tmp_path / "p.json")
    Q = load_program((tmp_path / "p.json").read_text())
    assert Q.digest() == P.digest() and text
    assert Q.blocks == P.blocks and Q.variables == P.variables


# --- solutions against closed forms ---------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_unconstrained_least_squares(backend):
    a = np.array([0.3, -1.2, 2.0])
    rep = solve(compile(SpecSet(3).add(lsq(3, a))), backend=backend)
    assert rep.optimal
    np.testing.assert_allclose(rep.theta, a, atol=1e-5)
    assert rep.objective == pytest.approx(0.0, abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_ball_projection(backend):
    a = np.array([3.0, 4.0])
    S = SpecSet(2).add(lsq(2, a), SocConstraint(t=Affine(np.zeros((1, 2)), [1.0]),
                                                 X=Affine(np.eye(2), np.zeros(2)), dim=2))
    rep = solve(compile(S), backend=backend)
    assert rep.optimal
    np.testing.assert_allclose(rep.theta, a / 5, atol=1e-5)
    assert rep.objective == pytest.approx(4.0, rel=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0), st.sampled_from(BACKENDS))
def test_l1_ball_projection(seed, r, backend):
    a = np.random.default_rng(seed).standard_normal(6) * 2
    S = SpecSet(6).add(lsq(6, a), L1Constraint(expr=Affine(np.eye(6), np.zeros(6)), bound=r))
    rep = solve(compile(S), backend=backend)
    assert rep.optimal
    ref = project_l1_ball(a, r)
    # the objective is flat to second order, so theta is only fixed to ~sqrt(tol)
    np.testing.assert_allclose(rep.theta, ref, atol=2e-3)
    assert np.abs(rep.theta).sum() <= r + 1e-5
    assert rep.objective == pytest.approx(np.linalg.norm(ref - a), abs=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=9).filter(lambda v: len(v) % 2),
       st.sampled_from(BACKENDS))
def test_median_and_midrange(values, backend):
    b = np.array(values)
    e = Affine(np.ones((b.size, 1)), -b)
    r1 = solve(compile(SpecSet(1).add(NormObjective(expr=e, norm="1"))), backend=backend)
    ri = solve(compile(SpecSet(1).add(NormObjective(expr=e, norm="inf"))), backend=backend)
    assert r1.optimal and ri.optimal
    assert r1.objective == pytest.approx(np.abs(b - np.median(b)).sum(), abs=1e-4)
    assert ri.objective == pytest.approx((b.max() - b.min()) / 2, abs=1e-4)
    assert ri.theta[0] == pytest.approx((b.max() + b.min()) / 2, abs=1e-4)


@pytest.mark.parametrize("backend", BACKENDS)
def test_epigraph_is_tight(backend, rng):
    M = rng.standard_normal((12, 4))
    v = rng.standard_normal(12)
    obj = NormObjective(expr=Affine(M, v))
    S = SpecSet(4).add(obj, LinearConstraint(expr=Affine(np.eye(4), 0.1 * np.ones(4))))
    rep = solve(compile(S), backend=backend)
    assert rep.optimal
    t = rep.x[4]
    assert t == pytest.approx(obj.value(rep.theta), abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_weak_duality_and_dual_feasibility(backend, rng):
    M = rng.standard_normal((10, 5))
    S = SpecSet(5).add(NormObjective(expr=Affine(M, rng.standard_normal(10))),
                       LinearConstraint(expr=Affine(np.eye(5), np.ones(5))),
                       LinearConstraint(expr=Affine(np.ones((1, 5)), [-0.5]), kind="=="))
    P = compile(S)
    rep = solve(P, backend=backend)
    assert rep.optimal
    assert rep.objective >= rep.dual_objective - 1e-5
    assert rep.gap <= 1e-5
    # any feasible primal point bounds the dual objective from above
    x = np.zeros(P.n_vars)
    x[:5] = 0.1
    x[5] = np.linalg.norm(M @ x[:5] + S.objectives[0].expr.v) + 1
    s = P.b - P.A @ x
    assert np.all(s[P.n_zero:P.n_zero + P.n_nonneg] >= 0) and abs(s[0]) < 1e-12
    assert P.objective(x) >= rep.dual_objective - 1e-6
    y_nonneg = rep.y[P.n_zero:P.n_zero + P.n_nonneg]
    assert np.all(y_nonneg >= -1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_reported(backend):
    # theta >= 1 and theta <= 0
    P = lp([1.0], [[-1.0], [1.0]], [-1.0, 0.0])
    rep = solve(P, backend=backend, max_iter=20000)
    assert rep.status == "infeasible"
    assert not rep.optimal


@pytest.mark.parametrize("backend", BACKENDS)
def test_small_lp(backend):
    # min theta s.t. theta >= 3
    rep = solve(lp([1.0], [[-1.0]], [-3.0]), backend=backend)
    assert rep.optimal and rep.theta[0] == pytest.approx(3.0, abs=1e-5)


def test_solver_determinism(rng):
    P = compile(SpecSet(6).add(NormObjective(expr=Affine(rng.standard_normal((20, 6)), np.ones(20))),
                               LinearConstraint(expr=Affine(np.eye(6), np.ones(6)))))
    for backend in BACKENDS:
        a, b = solve(P, backend=backend), solve(P, backend=backend)
        assert a.theta.tobytes() == b.theta.tobytes()
        assert a.iterations == b.iterations


def test_bad_arguments():
    P = lp([1.0], [[-1.0]], [-1.0])
    with pytest.raises(ValueError):
        solve(P, tol=0.0)
    with pytest.raises(ValueError):
        solve(P, backend="simplex")


def test_clarabel_adapter_agrees():
    pytest.importorskip("clarabel")
    for name, (P, ref) in regression_set().items():
        rep = solve(P, backend="clarabel")
        assert rep.optimal, name
        assert rep.objective == pytest.approx(ref["objective"], rel=1e-5, abs=1e-6)


# --- regression set ---------------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("name", sorted(regression_set()))
def test_regression_set(name, backend):
    P, ref = regression_set()[name]
    assert P.size() == ref["size"]
    rep = solve(P, backend=backend)
    assert rep.optimal
    assert rep.primal_residual <= 1e-6 and rep.dual_residual <= 1e-6
    assert rep.objective == pytest.approx(ref["objective"], rel=1e-4, abs=1e-6)
    scale = max(1.0, np.max(np.abs(ref["theta"])))
    assert np.max(np.abs(rep.theta - np.array(ref["theta"]))) <= 1e-3 * scale


# --- verification -----------------------------------------------------------------

def test_coarse_grid_passivity_caught_by_dense_check():
    n = 8
    plant = toy_plant()
    coarse = FrequencyGrid(np.linspace(0, 0.45 * np.pi / plant.Ts, 10), plant.Ts)
    T = make_tensors(plant, n, 40, coarse)
    r = np.zeros(40)
    r[0] = 1.0
    track = tracking_objective(T, "w->z", r, toy_impulse(np.zeros(n)))
    P = compile(SpecSet(n).add(track, passivity_constraint(T, "w->z")))
    rep = solve(P)
    assert rep.optimal
    assert verify_solution(P, rep).passed
    dense = SpecSet(n).add(passivity_constraint(T, "w->z", FrequencyGrid.linear(plant.Ts, 400)))
    ver = verify_solution(P, rep, dense)
    assert not ver.passed
    assert ver.findings[0]["where"] == "dense" and ver.findings[0]["violation"] > 0.9


def test_zero_theta_unconstrained_is_vacuous():
    P = compile(SpecSet(3).add(lsq(3, np.zeros(3))))
    rep = solve(P)
    assert np.all(rep.theta == 0) or np.max(np.abs(rep.theta)) < 1e-8
    ver = verify_solution(P, rep, SpecSet(3))
    assert ver.passed and ver.findings == []


def test_force_program_size_snapshot(force_result):
    P = force_result.program
    assert P.size() == {"variables": 65, "rows": 2852, "zero": 1, "nonneg": 2600,
                        "soc": 1, "soc_rows": 251}
    assert [(b.name, b.cone) for b in P.blocks] == [("steady_state", "zero"), ("nyquist", "nonneg"),
                                                    ("tracking", "soc")]
    assert force_result.report.optimal
    assert force_result.verification.passed
