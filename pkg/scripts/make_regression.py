"""Regenerate the solver regression set shipped in ``src/ccsynth/regression``.

Each program is compiled from a spec set and dumped.  The reference optimum
is computed independently with cvxpy directly from the spec terms (not from
the compiled program), so the lifting and the solver are checked together.
"""

import json
from pathlib import Path

import cvxpy as cp
import numpy as np

from ccsynth.lti import FrequencyGrid
from ccsynth.plant import HumanModel, RobotModel, SpringEnvironment, build_admittance_plant, build_force_plant
from ccsynth.solve import compile, dump_program
from ccsynth.specs import (Affine, L1Constraint, LinearConstraint, NormObjective, SocConstraint, SpecSet,
                           frequency_bound, gain_bounds, step_shape_constraints, tracking_objective)
from ccsynth.synthesis import desired_response
from ccsynth.youla import make_tensors

OUT = Path(__file__).resolve().parents[1] / "src" / "ccsynth" / "regression"


def reference(S: SpecSet):
    th = cp.Variable(S.n)
    obj = 0
    for o in S.objectives:
        r = o.expr.M @ th + o.expr.v
        p = {"2": 2, "inf": "inf", "1": 1}[o.norm]
        obj = obj + o.weight * cp.norm(r, p)
    cons = []
    for c in S.constraints:
        if isinstance(c, LinearConstraint):
            e = c.expr.M @ th + c.expr.v
            cons.append(e == 0 if c.kind == "==" else e >= 0)
        elif isinstance(c, SocConstraint):
            X = c.X.M @ th + c.X.v
            t = c.t.M @ th + c.t.v
            for j in range(c.count):
                cons.append(cp.norm(X[j * c.dim:(j + 1) * c.dim], 2) <= t[j])
        elif isinstance(c, L1Constraint):
            cons.append(cp.norm(c.expr.M @ th + c.expr.v, 1) <= c.bound)
    prob = cp.Problem(cp.Minimize(obj), cons)
    for tol in (1e-10, 1e-9, 1e-8):
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
        if prob.status == "optimal":
            break
    assert prob.status == "optimal", prob.status
    return float(prob.value), np.asarray(th.value).tolist()


def cases():
    rng = np.random.default_rng(20240611)
    m, n = 30, 8
    M, v = rng.standard_normal((m, n)), rng.standard_normal(m)
    yield "least_squares", SpecSet(n).add(NormObjective(name="ls", expr=Affine(M, v)))

    n = 10
    M, v = rng.standard_normal((40, n)), rng.standard_normal(40)
    S = SpecSet(n).add(
        NormObjective(name="a", expr=Affine(M, v)),
        NormObjective(name="b", expr=Affine(M[:5], v[:5]), norm="inf"),
        NormObjective(name="c", expr=Affine(M[5:9], v[5:9]), norm="1", weight=0.3))
    S.add(LinearConstraint(name="ineq", expr=Affine(rng.standard_normal((8, n)), np.ones(8))))
    S.add(LinearConstraint(name="eq", expr=Affine(rng.standard_normal((2, n)), np.zeros(2)),
                           kind="=="))
    S.add(SocConstraint(name="soc", t=Affine(np.zeros((3, n)), [5, 6, 7]),
                        X=Affine(rng.standard_normal((6, n)), 0.5 * rng.standard_normal(6)), dim=2))
    S.add(L1Constraint(name="l1", expr=Affine(rng.standard_normal((4, n)), np.zeros(4)), bound=3))
    yield "mixed_cones", S

    n = 6
    M, v = rng.standard_normal((12, n)), rng.standard_normal(12)
    S = SpecSet(n).add(NormObjective(name="peak", expr=Affine(M, v), norm="inf"))
    S.add(LinearConstraint(name="box", expr=Affine(np.vstack([np.eye(n), -np.eye(n)]), 0.5 * np.ones(2 * n))))
    yield "minimax_box", S

    robot = RobotModel.from_parameters()
    Ts = robot.Ts
    grid = FrequencyGrid.log(Ts, 40)
    P = build_force_plant(robot, SpringEnvironment(3000.0, 97000.0))
    T = make_tensors(P, 12, 120, grid, np.inf)
    yd = desired_response({"type": "first_order", "tau": 0.17}, Ts, 120)
    S = SpecSet(12).add(tracking_objective(T, "f_d->f_a", np.ones(120), yd, weight=1 / np.linalg.norm(yd)))
    S.add(step_shape_constraints(T, "f_d->f_a", steady_state_value=1.0))
    S.add(frequency_bound(T, "f_d->f_a", (0.0, np.pi / Ts), 1.3, grid))
    yield "force_small", S

    P = build_admittance_plant(robot, HumanModel(20000.0, 50.0, 480000.0, 200.0))
    T = make_tensors(P, 10, 150, grid, np.inf)
    yd = desired_response({"type": "admittance", "m": 1.2, "b": 8.0, "k": 0.0,
                           "k_env": 20000.0, "b_env": 50.0}, Ts, 150)
    S = SpecSet(10).add(tracking_objective(T, "x_h->x_a", np.ones(150), yd, weight=1 / np.linalg.norm(yd)))
    S.add(step_shape_constraints(T, "x_h->x_a", steady_state_value=1.0))
    S.add(gain_bounds(T, "x_h->f_a", "h2", 4.0e4))
    yield "admittance_small", S


def main():
    OUT.mkdir(exist_ok=True)
    index = {}
    for name, S in cases():
        P = compile(S)
        dump_program(P, OUT / f"{name}.json")
        obj, theta = reference(S)
        index[name] = {"file": f"{name}.json", "objective": obj, "theta": theta,
                       "size": P.size()}
        print(f"{name}: {P.size()} objective {obj:.10g}")
    (OUT / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
