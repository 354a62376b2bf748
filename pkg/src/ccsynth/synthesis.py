"""End-to-end convex controller synthesis.

A :class:`SynthesisProblem` bundles the plant, the basis/horizon, the spec
descriptions and solver options.  :func:`synthesize` builds the response
tensors, compiles the specs into a conic program, solves it and realizes the
controller.

Robust stability uses half-planes on the open uncertainty loop.  Besides a
fixed list of half-planes an ``adaptive`` mode is available: every grid point
gets its own half-plane through a pivot on the negative real axis, oriented
from the previous solution's locus, while the uncertainty size is increased
gradually from a small fraction up to its full value.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .lti import FrequencyGrid, StateSpace, c2d, impulse_response
from .plant import GeneralizedPlant
from .solve import ConicProgram, SolveReport, Verification, compile, solve, verify_solution
from .specs import (
    DEFAULT_HP1,
    DEFAULT_HP2,
    DEFAULT_OMEGA_CORNER,
    HalfPlane,
    SpecError,
    SpecSet,
    fit_half_planes,
    frequency_bound,
    gain_bounds,
    nyquist_robust_stability,
    passivity_constraint,
    pointwise_half_planes,
    step_shape_constraints,
    tracking_objective,
)
from .youla import InternalModelController, QBasis, ResponseTensors, assemble_H, make_tensors

__all__ = [
    "RobustSpec",
    "SynthesisProblem",
    "SynthesisResult",
    "synthesize",
    "desired_response",
    "nyquist_grid",
    "build_specset",
    "verify_result",
    "critical_ray_violation",
]


def nyquist_grid(Ts: float, n_linear: int = 2500, n_log: int = 100,
                 f_min: float = 0.05, f_log_max: float = 3.0) -> FrequencyGrid:
    """Uniform grid over ``[0, Nyquist]`` merged with log points at low frequency.

    The uniform part keeps neighbouring locus points close at high frequency,
    where the response of a delayed plant rotates fastest.
    """
    lin = np.linspace(0.0, np.pi / Ts, n_linear)
    log = 2 * np.pi * np.geomspace(f_min, f_log_max, n_log) if n_log else np.zeros(0)
    return FrequencyGrid(np.unique(np.concatenate([lin, log])), Ts)


def desired_response(target: dict, Ts: float, N: int) -> NDArray[np.float64]:
    """Step response of a target model over ``N`` samples.

    ``{"type": "first_order", "tau": ...}`` is sampled exactly;
    ``{"type": "admittance", "m", "b", "k", "k_env", "b_env"}`` is the
    position response ``(k_env + b_env s) / (m s^2 + (b + b_env) s + k + k_env)``
    discretized with a zero-order hold.
    """
    kind = target.get("type")
    t = np.arange(N) * Ts
    if kind == "first_order":
        tau = float(target["tau"])
        if not tau > 0:
            raise SpecError("target time constant must be positive")
        return 1.0 - np.exp(-t / tau)
    if kind == "admittance":
        m, b, k = float(target["m"]), float(target["b"]), float(target.get("k", 0.0))
        ke, be = float(target["k_env"]), float(target.get("b_env", 0.0))
        if not m > 0:
            raise SpecError("target mass must be positive")
        sys = c2d([be, ke], [m, b + be, k + ke], Ts, "zoh")
        return impulse_response(sys, N).step()[:, 0, 0]
    raise SpecError(f"unknown target type {kind!r}")


@dataclass
class RobustSpec:
    """Robust-stability requirement on the uncertainty loop ``w_E -> z_E``."""

    channel: str = "w_E->z_E"
    mode: str = "halfplanes"  # "halfplanes" | "adaptive"
    omega_corner: float = DEFAULT_OMEGA_CORNER
    hp1: HalfPlane = DEFAULT_HP1
    hp2: HalfPlane = DEFAULT_HP2
    pieces: list | None = None
    pivot: float = -0.9
    max_angle: float = np.pi - 0.3
    margin: float = 1e-3
    steps: int = 12
    start: float = 0.015
    polish: int = 4
    retries: int = 6
    grid: FrequencyGrid | None = None


@dataclass
class SynthesisProblem:
    plant: GeneralizedPlant
    specs: list[dict]
    n: int = 64
    N: int = 250
    grid: FrequencyGrid | None = None
    robust: RobustSpec | None = None
    backend: str = "ipm"
    tol: float = 1e-6
    max_iter: int = 200000
    tail_tol: float = 1e-5
    name: str = "synthesis"


@dataclass
class SynthesisResult:
    problem: SynthesisProblem
    tensors: ResponseTensors
    program: ConicProgram
    specset: SpecSet
    report: SolveReport
    controller: InternalModelController
    verification: Verification | None = None
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    half_planes: tuple | None = None

    @property
    def theta(self) -> NDArray[np.float64]:
        return self.report.theta

    @property
    def ok(self) -> bool:
        return self.report.optimal

    def state_space(self) -> StateSpace:
        return self.controller.to_ss()


def _spec_terms(tensors: ResponseTensors, spec: dict, grid: FrequencyGrid | None) -> list:
    kind = spec["kind"]
    ch = spec["channel"]
    Ts, N = tensors.Ts, tensors.N
    if kind == "tracking":
        L = int(spec.get("samples", N))
        yd = desired_response(spec["target"], Ts, L)
        ref = np.ones(L)
        w = spec.get("weight", "normalized")
        weight = 1.0 / np.linalg.norm(yd) if w == "normalized" else float(w)
        return [tracking_objective(tensors, ch, ref, yd, str(spec.get("norm", "2")), weight,
                                   name=spec.get("name", "tracking"))]
    if kind == "steady_state":
        return step_shape_constraints(tensors, ch, steady_state_value=float(spec["value"]),
                                      steady_state_method=spec.get("method", "sum"))
    if kind == "no_overshoot":
        return step_shape_constraints(tensors, ch, no_overshoot=float(spec["ceiling"]))
    if kind == "rise_time":
        return step_shape_constraints(tensors, ch, steady_state_value=None,
                                      no_overshoot=False) + \
            step_shape_constraints(tensors, ch, steady_state_value=float(spec["value"]),
                                   rise_time=(float(spec["time"]), float(spec["fraction"])))[1:]
    if kind == "frequency_bound":
        lo, hi = spec["band_hz"]
        hi = min(2 * np.pi * hi, np.pi / Ts)
        c = frequency_bound(tensors, ch, (2 * np.pi * lo, hi), float(spec["bound"]), grid,
                            name=spec.get("name", "frequency_bound"))
        return [] if c is None else [c]
    if kind == "passivity":
        return [passivity_constraint(tensors, ch, grid, name=spec.get("name", "passivity"))]
    if kind == "gain_bound":
        return [gain_bounds(tensors, ch, spec["type"], float(spec["value"]),
                            name=spec.get("name"))]
    raise SpecError(f"unknown spec kind {kind!r}")


def build_specset(tensors: ResponseTensors, specs: list[dict],
                  grid: FrequencyGrid | None = None) -> SpecSet:
    S = SpecSet(tensors.n)
    for spec in specs:
        S.add(_spec_terms(tensors, spec, grid))
    return S


def _robust_constraint(tensors, rob: RobustSpec, grid, scale, a=None, c=None):
    if a is not None:
        return pointwise_half_planes(tensors, rob.channel, a, c, grid, scale, name="nyquist")
    return nyquist_robust_stability(tensors, rob.channel, rob.omega_corner, rob.hp1, rob.hp2,
                                    rob.pieces, grid, scale, rob.margin if rob.mode == "halfplanes" else 0.0)


def synthesize(problem: SynthesisProblem, verify: bool = True, dense_factor: int = 4,
               verbose: bool = False) -> SynthesisResult:
    """Run the synthesis pipeline; the result carries the final solve report."""
    t0 = time.perf_counter()
    plant = problem.plant
    grid = problem.grid or FrequencyGrid.log(plant.Ts)
    tensors = make_tensors(plant, QBasis(problem.n, plant.Ts), problem.N, grid, problem.tail_tol)
    base = build_specset(tensors, problem.specs)
    rob = problem.robust
    history = []
    opts = dict(tol=problem.tol, max_iter=problem.max_iter, backend=problem.backend)

    def run(extra):
        S = SpecSet(base.n, list(base.objectives), list(base.constraints))
        if extra is not None:
            S.add(extra)
        P = compile(S)
        return S, P, solve(P, **opts)

    planes = None
    if rob is None:
        S, P, rep = run(None)
    elif rob.mode == "halfplanes":
        rgrid = rob.grid or grid
        S, P, rep = run(_robust_constraint(tensors, rob, rgrid, 1.0))
    elif rob.mode == "adaptive":
        rgrid = rob.grid or nyquist_grid(plant.Ts)
        t1, M = tensors.freq(rob.channel, rgrid)
        a = np.ones(len(rgrid), dtype=complex)
        c = np.full(len(rgrid), rob.pivot)
        scales = list(np.geomspace(rob.start, 1.0, rob.steps)) + [1.0] * rob.polish
        rep = None
        good = None
        retries = 0
        k = 0
        while k < len(scales):
            sc = scales[k]
            last = k == len(scales) - 1
            cc = c + (rob.margin if last else 0.0)
            S, P, rep_k = run(_robust_constraint(tensors, rob, rgrid, sc, a, cc))
            history.append({"scale": float(sc), "status": rep_k.status,
                            "objective": rep_k.objective, "iterations": rep_k.iterations})
            if verbose:
                print(f"  continuation {k:2d} scale={sc:.4f} {rep_k.status} obj={rep_k.objective:.5f}")
            rep = rep_k
            if not rep_k.optimal:
                # step too long for the current half-planes: retry halfway (log scale)
                if good is None or retries >= rob.retries or sc <= good * (1 + 1e-9):
                    break
                retries += 1
                scales.insert(k, float(np.sqrt(good * sc)))
                continue
            good = sc
            planes = (a.copy(), cc.copy(), float(sc))
            h = sc * (t1 + M @ rep_k.theta)
            a, c = fit_half_planes(h, rob.pivot, rob.max_angle)
            k += 1
    else:
        raise SpecError(f"unknown robust mode {rob.mode!r}")

    controller = InternalModelController(rep.theta, plant.P22)
    result = SynthesisResult(problem, tensors, P, S, rep, controller, None, history,
                             0.0, planes)
    if verify and rep.optimal:
        result.verification = verify_result(result, dense_factor)
    result.wall_time = time.perf_counter() - t0
    return result


def verify_result(result: SynthesisResult, dense_factor: int = 4) -> Verification:
    """Recheck every spec on a denser grid and a doubled horizon."""
    problem = result.problem
    tensors = result.tensors
    dense_grid = tensors.grid.refined(dense_factor)
    dense_t = make_tensors(problem.plant, tensors.basis, tensors.N, dense_grid, np.inf)
    terms = SpecSet(tensors.n)
    for spec in problem.specs:
        if spec["kind"] == "tracking":
            continue
        terms.add(_spec_terms(dense_t, spec, dense_grid))
    rob = problem.robust
    if rob is not None:
        if rob.mode == "halfplanes":
            g = (rob.grid or tensors.grid).refined(dense_factor)
            terms.add(nyquist_robust_stability(dense_t, rob.channel, rob.omega_corner, rob.hp1,
                                               rob.hp2, rob.pieces, g, 1.0))
        # adaptive planes only exist at the grid points they were fitted on; between
        # points the locus is checked directly against the critical ray below
    ver = verify_solution(result.program, result.report, terms)
    if rob is not None:
        g = (rob.grid or nyquist_grid(problem.plant.Ts)).refined(dense_factor)
        h = assemble_H(dense_t, result.theta, rob.channel, g, domain="freq")
        v = critical_ray_violation(h)
        ver.max_violation["dense:critical_ray"] = v
        if v > ver.tol:
            ver.findings.append({"term": "critical_ray", "family": "robust-stability",
                                 "channel": rob.channel, "where": "dense", "violation": v})
    return ver


def critical_ray_violation(h: NDArray[np.complex128]) -> float:
    """How far the locus crosses the real axis left of ``-1`` (0 when it never does).

    A crossing of ``(-inf, -1]`` by ``H_add`` means some ``delta`` in ``[0, 1]``
    puts ``-1`` on the locus of ``delta * H_add``.
    """
    h = np.asarray(h)
    worst = 0.0
    on_axis = (np.abs(h.imag) == 0) & (h.real <= -1)
    if np.any(on_axis):
        worst = max(worst, float(np.max(-1 - h.real[on_axis])) + 1e-300)
    sgn = np.sign(h.imag)
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    for i in idx:
        t = h.imag[i] / (h.imag[i] - h.imag[i + 1])
        x = h.real[i] + t * (h.real[i + 1] - h.real[i])
        if x <= -1:
            worst = max(worst, float(-1 - x) + 1e-12)
    return worst
