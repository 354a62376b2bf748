"""Closed-loop time-domain simulation with unilateral contact.

Positions are measured along the pressing direction: a larger ``x`` pushes
the tool deeper into the surface.  A surface at elevation ``e`` (upward
positive, as in a terrain profile) therefore sits at ``x_env = -e``, and the
contact force is ``f = k * max(0, x - x_env)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize

from .lti import (LTIError, StateSpace, TransferFunction, c2d, closed_loop, is_stable,
                  step_response)
from .plant import (GeneralizedPlant, HumanModel, RobotModel, SpringEnvironment,
                    build_admittance_plant, build_force_plant, spring_damper)

__all__ = [
    "SimulationError", "Patch", "TerracedSurface", "ContactScenario", "Trace",
    "simulate_contact", "simulate_guiding", "min_jerk", "SweepRow", "SweepReport",
    "stiffness_sweep", "make_pi_controller", "make_admittance_controller", "tune_pi",
    "settling_time", "as_state_space", "traces_svg", "force_step",
]

# a trace is declared diverged once any signal leaves this box (m or N)
DIVERGENCE_BOUND = 1e6


class SimulationError(ValueError):
    """Bad simulation inputs (not raised for unstable closed loops)."""


@dataclass(frozen=True)
class Patch:
    length: float     # m along the sliding axis
    stiffness: float  # N/m
    elevation: float  # m, upward positive
    name: str = ""

    def __post_init__(self) -> None:
        if not self.stiffness > 0 or not np.isfinite(self.stiffness):
            raise SimulationError(f"patch stiffness must be positive, got {self.stiffness}")
        if not self.length > 0 or not np.isfinite(self.length):
            raise SimulationError(f"patch length must be positive, got {self.length}")
        if not np.isfinite(self.elevation):
            raise SimulationError("patch elevation must be finite")


@dataclass(frozen=True)
class TerracedSurface:
    """Consecutive flat patches along the sliding axis."""

    patches: tuple[Patch, ...]
    damping: float = 0.0  # N s/m, acts only while in contact

    def __post_init__(self) -> None:
        object.__setattr__(self, "patches", tuple(self.patches))
        if not self.patches:
            raise SimulationError("surface needs at least one patch")
        if self.damping < 0:
            raise SimulationError("surface damping must be non-negative")

    @classmethod
    def materials(cls, patch_length: float = 0.040, damping: float = 0.0) -> "TerracedSurface":
        """The six-material terrace: foam, hard paper, steel, two aluminium, carton."""
        rows = [("foam", 3.0, 0.0), ("hard paper", 20.0, -6.5), ("steel", 80.0, -10.0),
                ("aluminum", 60.0, -18.0), ("aluminum", 60.0, -30.0), ("carton", 4.0, -35.0)]
        return cls(tuple(Patch(patch_length, k * 1e3, e * 1e-3, name) for name, k, e in rows),
                   damping)

    @classmethod
    def flat(cls, stiffness: float, elevation: float = 0.0, length: float = 1.0) -> "TerracedSurface":
        return cls((Patch(length, stiffness, elevation, "flat"),))

    @property
    def edges(self) -> NDArray[np.float64]:
        return np.concatenate([[0.0], np.cumsum([p.length for p in self.patches])])

    @property
    def length(self) -> float:
        return float(self.edges[-1])

    def index(self, s: ArrayLike) -> NDArray[np.int64]:
        """Patch index under lateral position ``s``; clamps to the first/last patch."""
        idx = np.searchsorted(self.edges, s, side="right") - 1
        return np.clip(idx, 0, len(self.patches) - 1)

    def to_dict(self) -> dict:
        return {"damping": self.damping,
                "patches": [{"name": p.name, "length": p.length, "stiffness": p.stiffness,
                             "elevation": p.elevation} for p in self.patches]}


@dataclass(frozen=True)
class ContactScenario:
    """Hold a force setpoint while sliding across a surface.

    The tool starts touching the first patch with zero force.  For ``settle``
    seconds it only presses; afterwards it slides at ``speed``.
    """

    surface: TerracedSurface
    speed: float = 0.005
    setpoint: float = 5.0
    duration: float | None = None
    Ts: float = 0.008
    noise: float = 0.0
    seed: int = 0
    settle: float = 2.0
    unilateral: bool = True

    def __post_init__(self) -> None:
        if not self.Ts > 0:
            raise SimulationError("Ts must be positive")
        if self.duration is not None and not self.duration > 0:
            raise SimulationError("duration must be positive")
        if self.speed < 0 or self.settle < 0 or self.noise < 0:
            raise SimulationError("speed, settle and noise must be non-negative")

    @property
    def total_time(self) -> float:
        if self.duration is not None:
            return float(self.duration)
        if self.speed == 0:
            return self.settle + 5.0
        return self.settle + self.surface.length / self.speed

    @property
    def n_samples(self) -> int:
        return int(round(self.total_time / self.Ts)) + 1


TRACE_COLUMNS = ("t", "x_cmd", "x", "force", "force_measured", "u", "contact",
                 "separation", "reference", "patch")


@dataclass
class Trace:
    """Per-sample record of a simulation.

    ``x_cmd`` is the commanded position, ``x`` the actual tool position,
    ``u`` the controller output and ``reference`` the force setpoint (contact)
    or the operator's intended position (guiding).
    """

    Ts: float
    t: NDArray[np.float64]
    x_cmd: NDArray[np.float64]
    x: NDArray[np.float64]
    force: NDArray[np.float64]
    force_measured: NDArray[np.float64]
    u: NDArray[np.float64]
    contact: NDArray[np.bool_]
    separation: NDArray[np.float64]
    reference: NDArray[np.float64]
    patch: NDArray[np.int64]
    status: str = "ok"
    diverged_at: float | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    def columns(self) -> dict:
        return {c: getattr(self, c) for c in TRACE_COLUMNS}

    def to_csv(self, path=None) -> str:
        """CSV with a header row, SI units and round-trip exact numbers."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        cols = [self.t, self.x_cmd, self.x, self.force, self.force_measured, self.u]
        for i in range(len(self.t)):
            w.writerow([repr(float(c[i])) for c in cols]
                       + [int(self.contact[i]), repr(float(self.separation[i])),
                          repr(float(self.reference[i])), int(self.patch[i])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def patch_summary(self, surface: TerracedSurface, fraction: float = 0.25) -> list[dict]:
        """Mean and peak-to-peak force over the last ``fraction`` of each patch visit."""
        out = []
        for i, p in enumerate(surface.patches):
            idx = np.nonzero(self.patch == i)[0]
            row = {"patch": i, "name": p.name, "stiffness": p.stiffness,
                   "samples": int(len(idx)), "mean_force": float("nan"),
                   "peak_to_peak": float("nan")}
            if len(idx):
                tail = idx[int(len(idx) * (1 - fraction)):]
                f = self.force[tail]
                row["mean_force"] = float(np.mean(f))
                row["peak_to_peak"] = float(np.ptp(f))
            out.append(row)
        return out


def as_state_space(controller) -> StateSpace:
    if isinstance(controller, StateSpace):
        return controller
    if isinstance(controller, TransferFunction) or hasattr(controller, "to_ss"):
        return controller.to_ss()
    raise SimulationError(f"cannot use {type(controller).__name__} as a controller")


class _Runner:
    """Steps a SISO state-space system one sample at a time."""

    __slots__ = ("A", "B", "C", "D", "s")

    def __init__(self, sys: StateSpace):
        if sys.n_inputs != 1 or sys.n_outputs != 1:
            raise SimulationError("only SISO blocks can be simulated here")
        self.A, self.B = sys.A, sys.B[:, 0]
        self.C, self.D = sys.C[0], float(sys.D[0, 0])
        self.s = np.zeros(sys.n_states)

    def output(self, v: float = 0.0) -> float:
        return float(self.C @ self.s) + self.D * v

    def advance(self, v: float) -> None:
        self.s = self.A @ self.s + self.B * v


def _check_Ts(a: float, b: float) -> None:
    if abs(a - b) > 1e-12 * max(a, b):
        raise SimulationError(f"sample periods differ ({a} vs {b})")


def _empty(n: int) -> dict:
    return {c: np.zeros(n, dtype=bool if c == "contact" else (np.int64 if c == "patch" else float))
            for c in TRACE_COLUMNS}


def _finish(cols: dict, k: int, Ts: float, diverged: bool, meta: dict) -> Trace:
    n = k if diverged else len(cols["t"])
    data = {c: v[:n].copy() for c, v in cols.items()}
    return Trace(Ts=Ts, status="diverged" if diverged else "ok",
                 diverged_at=float(k * Ts) if diverged else None, meta=meta, **data)


def simulate_contact(controller, robot: RobotModel, scenario: ContactScenario) -> Trace:
    """Force control against a terraced surface with make/break contact.

    Each sample: read the tool position, evaluate the contact law, filter the
    force through the sensor path, feed ``setpoint - measurement`` to the
    controller and apply its output as a position offset.  A closed loop that
    blows up yields a partial trace with ``status == "diverged"``.
    """
    K = as_state_space(controller)
    _check_Ts(K.Ts, robot.Ts)
    _check_Ts(scenario.Ts, robot.Ts)
    Ts = robot.Ts
    act, comp, fpath, ctrl = (_Runner(robot.actuation), _Runner(robot.compliance),
                              _Runner(robot.force_path), _Runner(K))
    surf = scenario.surface
    k_p = np.array([p.stiffness for p in surf.patches])
    x_env_p = np.array([-p.elevation for p in surf.patches])
    x0 = x_env_p[0]
    n = scenario.n_samples
    rng = np.random.default_rng(scenario.seed)
    noise = (rng.uniform(-scenario.noise, scenario.noise, n) if scenario.noise > 0
             else np.zeros(n))
    cols = _empty(n)
    b_s = surf.damping
    pen_prev = 0.0
    diverged = False
    k = 0
    for k in range(n):
        t = k * Ts
        lateral = scenario.speed * max(0.0, t - scenario.settle)
        i = int(surf.index(lateral))
        ks, xe = k_p[i], x_env_p[i]
        x = x0 + act.output()
        xc0 = comp.output()
        dc = comp.D
        # x_a = x + x_c with x_c = xc0 + dc * f; solve assuming contact, then check
        denom = 1.0 - dc * (ks + b_s / Ts)
        xa = (x + xc0 - dc * (ks * xe + b_s * (xe + pen_prev) / Ts)) / denom
        pen = xa - xe
        if scenario.unilateral and pen <= 0:
            xa = x + xc0
            pen = xa - xe
            f = 0.0
        else:
            f = ks * pen + b_s * (pen - pen_prev) / Ts
            if scenario.unilateral and f < 0:
                f = 0.0
        contact = f > 0 or (not scenario.unilateral)
        fm = fpath.output(f)
        y = scenario.setpoint - (fm + noise[k])
        u = ctrl.output(y)
        cols["t"][k] = t
        cols["x_cmd"][k] = x0 + u
        cols["x"][k] = xa
        cols["force"][k] = f
        cols["force_measured"][k] = fm + noise[k]
        cols["u"][k] = u
        cols["contact"][k] = contact
        cols["separation"][k] = max(0.0, -pen) if scenario.unilateral else 0.0
        cols["reference"][k] = scenario.setpoint
        cols["patch"][k] = i
        if not (np.isfinite(u) and np.isfinite(xa) and abs(u) < DIVERGENCE_BOUND
                and abs(f) < DIVERGENCE_BOUND):
            diverged = True
            break
        pen_prev = pen if pen > 0 else 0.0
        act.advance(u)
        comp.advance(f)
        fpath.advance(f)
        ctrl.advance(y)
    meta = {"kind": "contact", "setpoint": scenario.setpoint, "speed": scenario.speed,
            "seed": scenario.seed}
    return _finish(cols, k, Ts, diverged, meta)


def min_jerk(distance: float, duration: float, Ts: float, total: float) -> NDArray[np.float64]:
    """Minimum-jerk point-to-point profile, held at ``distance`` after ``duration``."""
    if not duration > 0:
        raise SimulationError("duration must be positive")
    t = np.arange(int(round(total / Ts)) + 1) * Ts
    s = np.clip(t / duration, 0.0, 1.0)
    return distance * (10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5)


def simulate_guiding(controller, robot: RobotModel, human: HumanModel,
                     intent: ArrayLike | None = None, method: str = "backward") -> Trace:
    """An operator drags the end effector through a spring-damper arm.

    ``intent`` is the operator's desired position per sample; by default a
    0.6 m minimum-jerk motion over 3 s followed by 2 s of holding.  The
    controller sees the measured interaction force and commands position.
    """
    K = as_state_space(controller)
    _check_Ts(K.Ts, robot.Ts)
    Ts = robot.Ts
    xh = (min_jerk(0.6, 3.0, Ts, 5.0) if intent is None
          else np.asarray(intent, dtype=float).ravel())
    arm = _Runner(as_state_space(spring_damper(human.k_hum, human.b_hum, Ts, method)))
    act, comp, fpath, ctrl = (_Runner(robot.actuation), _Runner(robot.compliance),
                              _Runner(robot.force_path), _Runner(K))
    n = len(xh)
    cols = _empty(n)
    diverged = False
    k = 0
    for k in range(n):
        x = act.output()
        xc0, dc = comp.output(), comp.D
        # f = arm(xh - xa), xa = x + xc0 + dc f  (arm feed-through is arm.D)
        fa0 = arm.output()
        f = (fa0 + arm.D * (xh[k] - x - xc0)) / (1.0 + arm.D * dc)
        xa = x + xc0 + dc * f
        fm = fpath.output(f)
        u = ctrl.output(fm)
        cols["t"][k] = k * Ts
        cols["x_cmd"][k] = u
        cols["x"][k] = xa
        cols["force"][k] = f
        cols["force_measured"][k] = fm
        cols["u"][k] = u
        cols["contact"][k] = True
        cols["reference"][k] = xh[k]
        if not (np.isfinite(u) and np.isfinite(f) and abs(u) < DIVERGENCE_BOUND
                and abs(f) < DIVERGENCE_BOUND):
            diverged = True
            break
        arm.advance(xh[k] - xa)
        act.advance(u)
        comp.advance(f)
        fpath.advance(f)
        ctrl.advance(fm)
    meta = {"kind": "guiding", "k_hum": human.k_hum, "b_hum": human.b_hum}
    return _finish(cols, k, Ts, diverged, meta)


# ---------------------------------------------------------------------------
# classical baselines

def make_pi_controller(kp: float, ki: float, Ts: float) -> StateSpace:
    """``u = kp*y + ki*integral(y)`` with a trapezoidal (Tustin) integrator."""
    if not Ts > 0:
        raise SimulationError("Ts must be positive")
    if ki == 0:
        return StateSpace.static([[kp]], Ts)
    h = ki * Ts / 2
    return TransferFunction([kp + h, h - kp], [1.0, -1.0], Ts).to_ss()


def make_admittance_controller(m: float, b: float, k: float, Ts: float) -> StateSpace:
    """Force-to-position map ``1 / (m s^2 + b s + k)`` discretized with a ZOH."""
    if not m > 0:
        raise SimulationError("admittance mass must be positive")
    if not Ts > 0:
        raise SimulationError("Ts must be positive")
    return c2d([1.0], [m, b, k], Ts, "zoh")


def force_step(controller, robot: RobotModel, k_env: float, N: int) -> NDArray[np.float64]:
    """Linear closed-loop step response ``f_d -> f_a`` against a spring of stiffness ``k_env``."""
    plant = build_force_plant(robot, SpringEnvironment(k_env, 0.0))
    H = closed_loop(plant, as_state_space(controller))
    sub = H.select([plant.output_index("f_a")], [plant.input_index("f_d")])
    return step_response(sub, N)[:, 0, 0]


def tune_pi(robot: RobotModel, k_env: float, tau: float = 0.17, horizon: float = 2.0,
            zero_at: float | None = None) -> tuple[float, float, dict]:
    """One-dimensional search for a PI matching a first-order step of time constant ``tau``.

    The PI zero is pinned at ``zero_at`` (default: the robot's dominant lag,
    ``kp = ki * zero_at``) and the integral gain is searched on a log scale to
    minimize the normalized 2-norm error against the target over ``horizon``.
    Returns ``(kp, ki, info)``.
    """
    Ts = robot.Ts
    if zero_at is None:
        zero_at = _dominant_lag(robot)
    N = int(round(horizon / Ts))
    target = 1.0 - np.exp(-np.arange(N) * Ts / tau)
    ref = np.linalg.norm(target)
    plant = build_force_plant(robot, SpringEnvironment(k_env, 0.0))
    i_out, i_in = plant.output_index("f_a"), plant.input_index("f_d")

    def cost(log_ki):
        ki = float(np.exp(log_ki))
        K = make_pi_controller(ki * zero_at, ki, Ts)
        try:
            H = closed_loop(plant, K)
        except LTIError:
            return 1e3
        if not is_stable(H)[0]:
            return 1e3
        y = step_response(H.select([i_out], [i_in]), N)[:, 0, 0]
        return float(np.linalg.norm(y - target) / ref)

    guess = np.log(1.0 / (k_env * tau))
    res = optimize.minimize_scalar(cost, bounds=(guess - 4, guess + 4), method="bounded",
                                   options={"xatol": 1e-6})
    ki = float(np.exp(res.x))
    return ki * zero_at, ki, {"error": float(res.fun), "evaluations": int(res.nfev),
                              "zero_at": zero_at}


def _dominant_lag(robot: RobotModel) -> float:
    p = robot.actuation.poles()
    p = p[np.abs(p) > 1e-9]
    if not len(p):
        return 0.0
    r = float(np.max(np.abs(p)))
    return -robot.Ts / np.log(r)


def settling_time(y: ArrayLike, Ts: float, final: float = 1.0, band: float = 0.02) -> float:
    """Time after which ``|y - final|`` stays within ``band * |final|`` (inf if never)."""
    y = np.asarray(y, dtype=float)
    out = np.abs(y - final) > band * abs(final)
    if not np.any(out):
        return 0.0
    last = int(np.nonzero(out)[0][-1])
    if last == len(y) - 1:
        return float("inf")
    return (last + 1) * Ts


# ---------------------------------------------------------------------------
# stiffness sweeps

@dataclass(frozen=True)
class SweepRow:
    k: float
    spectral_radius: float
    stable: bool
    peak_force: float
    sim_status: str


@dataclass
class SweepReport:
    rows: list[SweepRow]
    nominal: float | None = None

    @property
    def all_stable(self) -> bool:
        return all(r.stable for r in self.rows)

    @property
    def first_unstable(self) -> float | None:
        for r in self.rows:
            if not r.stable:
                return r.k
        return None

    @property
    def max_stable(self) -> float | None:
        """Largest swept stiffness below which every row is stable."""
        best = None
        for r in sorted(self.rows, key=lambda r: r.k):
            if not r.stable:
                break
            best = r.k
        return best

    @property
    def ratio(self) -> float | None:
        if self.nominal is None or self.max_stable is None:
            return None
        return self.max_stable / self.nominal

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "spectral_radius", "verdict", "peak_force", "sim_status"])
        for r in self.rows:
            w.writerow([repr(float(r.k)), repr(float(r.spectral_radius)),
                        "stable" if r.stable else "unstable", repr(float(r.peak_force)),
                        r.sim_status])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _human_at(human: HumanModel, k: float) -> HumanModel:
    """Arm of stiffness ``k`` on the uncertainty segment; damping moves with the same delta."""
    if human.delta_k > 0:
        return human.at((k - human.k_hum) / human.delta_k)
    return HumanModel(k, human.b_hum, 0.0, 0.0)


def stiffness_sweep(controller, robot: RobotModel,
                    builder: Callable[[float], GeneralizedPlant] | str,
                    k_values: Sequence[float], *, human: HumanModel | None = None,
                    setpoint: float = 5.0, sim_time: float = 3.0,
                    nominal: float | None = None) -> SweepReport:
    """Linear stability verdict plus a short nonlinear run at each stiffness.

    ``builder`` maps a stiffness to the plant to analyse, or is ``"force"`` /
    ``"admittance"`` for the two standard plants.  Contact plants are run
    against a flat unilateral surface; admittance plants against an operator
    holding still after a short 5 cm pull.
    """
    K = as_state_space(controller)
    human = human or HumanModel()
    if isinstance(builder, str):
        kind = builder
        if kind == "force":
            def builder(k):
                return build_force_plant(robot, SpringEnvironment(k, 0.0))
        elif kind == "admittance":
            def builder(k):
                return build_admittance_plant(robot, _human_at(human, k))
        else:
            raise SimulationError(f"unknown plant kind {kind!r}")
    rows = []
    for k in k_values:
        k = float(k)
        if not (k > 0 and np.isfinite(k)):
            raise SimulationError(f"stiffness values must be positive and finite, got {k}")
        plant = builder(k)
        ok, rho = is_stable(closed_loop(plant, K))
        kind = plant.meta.get("kind", "force")
        if kind == "admittance":
            Ts = robot.Ts
            hm = HumanModel(k, plant.meta.get("b_nominal", human.b_hum), 0.0, 0.0)
            tr = simulate_guiding(K, robot, hm, min_jerk(0.05, 0.5, Ts, sim_time))
        else:
            sc = ContactScenario(TerracedSurface.flat(k), speed=0.0, setpoint=setpoint,
                                 duration=sim_time, Ts=robot.Ts, settle=0.0)
            tr = simulate_contact(K, robot, sc)
        peak = float(np.max(np.abs(tr.force))) if len(tr) else float("nan")
        if tr.diverged:
            peak = float("inf")
        rows.append(SweepRow(k, float(rho), bool(ok), peak, tr.status))
    return SweepReport(rows, nominal)


# ---------------------------------------------------------------------------
# minimal SVG plots

def traces_svg(traces: dict[str, Trace], fields: Sequence[str] = ("force", "x"),
               width: int = 720, height: int = 220) -> str:
    """Stacked line plots, one panel per field, one polyline per trace."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    pad = 40
    H = height * len(fields)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" '
             f'font-family="sans-serif" font-size="11">']
    for j, fld in enumerate(fields):
        y0 = j * height
        series = [(name, tr.t, getattr(tr, fld)) for name, tr in traces.items() if len(tr)]
        if not series:
            continue
        tmax = max(float(t[-1]) for _, t, _ in series) or 1.0
        vals = np.concatenate([v[np.isfinite(v)] for _, _, v in series])
        lo, hi = (float(vals.min()), float(vals.max())) if len(vals) else (0.0, 1.0)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        parts.append(f'<rect x="{pad}" y="{y0 + 10}" width="{width - 2 * pad}" '
                     f'height="{height - 2 * pad + 20}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="4" y="{y0 + 22}">{fld}</text>')
        parts.append(f'<text x="4" y="{y0 + height - pad + 28}">{lo:.4g}</text>')
        parts.append(f'<text x="4" y="{y0 + 42}">{hi:.4g}</text>')
        for c, (name, t, v) in enumerate(series):
            step = max(1, len(t) // 2000)
            xs = pad + (t[::step] / tmax) * (width - 2 * pad)
            vv = np.clip(v[::step], lo, hi)
            ys = y0 + 10 + (height - 2 * pad + 20) * (1 - (vv - lo) / (hi - lo))
            pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
            col = colors[c % len(colors)]
            parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1" points="{pts}"/>')
            parts.append(f'<text x="{width - pad - 120}" y="{y0 + 24 + 12 * c}" '
                         f'fill="{col}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
