"""Generalized plants for force control and hand guiding.

Signal conventions (one Cartesian axis, SI units):

* ``x`` is the robot position, positive towards the environment or operator.
* The uncertainty port is left open.  ``z_E = E_add * d`` where ``d`` is the
  displacement that produces a positive force, and ``w_E`` is subtracted in
  the force summation.  Closing the port with ``w_E = -delta * z_E`` yields
  the particular environment ``E_n + delta * E_add``.  Written this way the
  robust-stability loop has its critical point at ``-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lti import (
    Block,
    LTIError,
    StateSpace,
    TransferFunction,
    WellPosednessError,
    interconnect,
    is_stable,
    make_first_order_delayed,
    summation,
)

__all__ = [
    "PlantError",
    "HumanModel",
    "SpringEnvironment",
    "UncertainEnvironment",
    "RobotModel",
    "GeneralizedPlant",
    "build_force_plant",
    "build_admittance_plant",
    "particular_plant",
    "spring_damper",
    "lowpass",
]


class PlantError(LTIError):
    """Invalid model parameters or a plant that violates the stable-plant assumption."""


def spring_damper(k: float, b: float, Ts: float, method: str = "backward") -> TransferFunction:
    """Discretize ``k + b s``.

    ``"backward"`` uses ``s -> (1 - z^-1)/Ts`` and keeps the plant stable.
    ``"tustin"`` is available for comparison; for ``b > 0`` it places a pole at
    ``z = -1`` and the resulting plant is rejected by the builders.
    """
    if method == "backward":
        return TransferFunction([k + b / Ts, -b / Ts], [1.0], Ts)
    if method == "tustin":
        c = 2.0 / Ts
        return TransferFunction([k + b * c, k - b * c], [1.0, 1.0], Ts)
    raise PlantError(f"unknown discretization {method!r}")


def lowpass(cutoff_hz: float, Ts: float) -> StateSpace:
    """First-order low-pass with unit DC gain, bilinear transform of ``wc/(s + wc)``.

    The bilinear map keeps the analog -3 dB point when ``cutoff_hz`` is well
    below Nyquist; the filter has direct feed-through.
    """
    if not cutoff_hz > 0:
        raise PlantError("filter cutoff must be positive")
    c = 2 * np.pi * cutoff_hz * Ts / 2
    b0 = c / (1 + c)
    a1 = (c - 1) / (1 + c)
    return TransferFunction([b0, b0], [1.0, a1], Ts).to_ss()


@dataclass(frozen=True)
class HumanModel:
    """Operator arm as a spring-damper with additive stiffness/damping uncertainty."""

    k_hum: float = 20000.0
    b_hum: float = 50.0
    delta_k: float = 480000.0
    delta_b: float = 200.0

    def __post_init__(self) -> None:
        for name in ("k_hum", "b_hum", "delta_k", "delta_b"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise PlantError(f"{name} must be finite and non-negative, got {v}")

    def uncertain(self, Ts: float, method: str = "backward") -> "UncertainEnvironment":
        return UncertainEnvironment(spring_damper(self.k_hum, self.b_hum, Ts, method),
                                    spring_damper(self.delta_k, self.delta_b, Ts, method))

    def at(self, delta: float) -> "HumanModel":
        """Nominal human whose parameters equal the particular model at ``delta``."""
        return HumanModel(self.k_hum + delta * self.delta_k,
                          self.b_hum + delta * self.delta_b, 0.0, 0.0)


@dataclass(frozen=True)
class SpringEnvironment:
    """Pure stiffness ``k_env + delta * delta_k``."""

    k_env: float = 3000.0
    delta_k: float = 97000.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.k_env) and self.k_env > 0):
            raise PlantError(f"k_env must be positive, got {self.k_env}")
        if not (np.isfinite(self.delta_k) and self.delta_k >= 0):
            raise PlantError(f"delta_k must be non-negative, got {self.delta_k}")

    def uncertain(self, Ts: float) -> "UncertainEnvironment":
        return UncertainEnvironment(TransferFunction([self.k_env], [1.0], Ts),
                                    TransferFunction([self.delta_k], [1.0], Ts))

    def stiffness(self, delta: float) -> float:
        return self.k_env + delta * self.delta_k


@dataclass(frozen=True)
class UncertainEnvironment:
    """``E_p = E_n + delta * E_add`` with ``delta`` in ``delta_range``."""

    nominal: TransferFunction
    additive: TransferFunction
    delta_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.nominal.Ts != self.additive.Ts:
            raise PlantError("nominal and additive parts have different sample periods")
        lo, hi = self.delta_range
        if not 0 <= lo <= hi:
            raise PlantError(f"invalid delta range {self.delta_range}")

    def particular(self, delta: float) -> TransferFunction:
        m = max(self.nominal.num.size, self.additive.num.size)
        if self.nominal.den.size != 1 or self.additive.den.size != 1:
            raise PlantError("particular() supports polynomial (FIR) environments only")
        num = np.zeros(m)
        num[:self.nominal.num.size] += self.nominal.num
        num[:self.additive.num.size] += delta * self.additive.num
        return TransferFunction(num, [1.0], self.nominal.Ts)


@dataclass(frozen=True)
class RobotModel:
    """Position-controlled robot plus force sensor.

    ``actuation`` maps the position command ``u`` to the position ``x``;
    ``force_path`` maps the actual force to the measured force;
    ``compliance`` (default zero) maps the actual force to extra displacement.
    """

    actuation: StateSpace
    force_path: StateSpace
    compliance: StateSpace | None = None

    def __post_init__(self) -> None:
        Ts = self.actuation.Ts
        comp = self.compliance
        if comp is None:
            comp = StateSpace.static([[0.0]], Ts)
            object.__setattr__(self, "compliance", comp)
        for name, s in (("actuation", self.actuation), ("force_path", self.force_path),
                        ("compliance", comp)):
            if s.n_inputs != 1 or s.n_outputs != 1:
                raise PlantError(f"{name} must be SISO")
            if abs(s.Ts - Ts) > 1e-15 * Ts:
                raise PlantError(f"{name} sample period differs from actuation")
            ok, rho = is_stable(s)
            if not ok:
                raise PlantError(f"{name} is not stable (spectral radius {rho:.6g})")
        if np.any(self.actuation.D != 0):
            raise PlantError("actuation must be strictly proper (no feed-through)")

    @property
    def Ts(self) -> float:
        return self.actuation.Ts

    @classmethod
    def from_parameters(cls, tau: float = 0.0437, delay: float = 0.036, Ts: float = 0.008,
                        filter_cutoff: float | None = 73.0,
                        delay_mode: str | int = "round") -> "RobotModel":
        act = make_first_order_delayed(tau, delay, Ts, 1.0, delay_mode)
        if np.any(act.D != 0):
            raise PlantError("actuation needs at least one sample of delay or lag")
        fp = lowpass(filter_cutoff, Ts) if filter_cutoff else StateSpace.static([[1.0]], Ts)
        return cls(act, fp)


@dataclass(frozen=True)
class GeneralizedPlant:
    """Plant ``P: [w..., u] -> [z..., y]`` with named channels; ``u``/``y`` last."""

    sys: StateSpace
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    n_u: int = 1
    n_y: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if len(self.inputs) != self.sys.n_inputs or len(self.outputs) != self.sys.n_outputs:
            raise PlantError("channel names do not match plant dimensions")
        if len(set(self.inputs)) != len(self.inputs) or len(set(self.outputs)) != len(self.outputs):
            raise PlantError("duplicate channel names")

    @property
    def Ts(self) -> float:
        return self.sys.Ts

    @property
    def exogenous_inputs(self) -> tuple[str, ...]:
        return self.inputs[:len(self.inputs) - self.n_u]

    @property
    def exogenous_outputs(self) -> tuple[str, ...]:
        return self.outputs[:len(self.outputs) - self.n_y]

    def input_index(self, name: str) -> int:
        try:
            return self.inputs.index(name)
        except ValueError:
            raise PlantError(f"unknown input channel {name!r}; have {self.inputs}") from None

    def output_index(self, name: str) -> int:
        try:
            return self.outputs.index(name)
        except ValueError:
            raise PlantError(f"unknown output channel {name!r}; have {self.outputs}") from None

    def channel(self, output: str, input: str) -> StateSpace:
        return self.sys.select([self.output_index(output)], [self.input_index(input)])

    def blocks(self) -> tuple[StateSpace, StateSpace, StateSpace, StateSpace]:
        """``(P11, P12, P21, P22)``."""
        nw = len(self.exogenous_inputs)
        nz = len(self.exogenous_outputs)
        s = self.sys
        zi, yi = list(range(nz)), list(range(nz, s.n_outputs))
        wi, ui = list(range(nw)), list(range(nw, s.n_inputs))
        return s.select(zi, wi), s.select(zi, ui), s.select(yi, wi), s.select(yi, ui)

    @property
    def P22(self) -> StateSpace:
        return self.blocks()[3]

    def close_uncertainty(self, delta: float) -> "GeneralizedPlant":
        """Close ``w_E = -delta * z_E`` and drop the port."""
        wi = self.input_index("w_E")
        zi = self.output_index("z_E")
        s = self.sys
        d_loop = -delta * s.D[zi, wi]
        if abs(1 - d_loop) < 1e-12:
            raise WellPosednessError("uncertainty closure is ill-posed")
        # w_E = -delta (C_z x + D_z v + D_zw w_E)  with v the remaining inputs
        keep_in = [i for i in range(s.n_inputs) if i != wi]
        keep_out = [o for o in range(s.n_outputs) if o != zi]
        g = -delta / (1 - d_loop)
        Wx = g * s.C[zi]
        Wv = g * s.D[zi, keep_in]
        bw = s.B[:, wi]
        dw = s.D[:, wi]
        A = s.A + np.outer(bw, Wx)
        B = s.B[:, keep_in] + np.outer(bw, Wv)
        C = s.C + np.outer(dw, Wx)
        D = s.D[:, keep_in] + np.outer(dw, Wv)
        sys = StateSpace(A, B, C[keep_out], D[keep_out], s.Ts)
        meta = dict(self.meta)
        meta["delta"] = float(delta)
        return GeneralizedPlant(sys, tuple(self.inputs[i] for i in keep_in),
                                tuple(self.outputs[o] for o in keep_out),
                                self.n_u, self.n_y, meta)

    def to_dict(self) -> dict:
        d = self.sys.to_dict()
        d["inputs"] = list(self.inputs)
        d["outputs"] = list(self.outputs)
        return d


def _check_plant(plant: GeneralizedPlant) -> GeneralizedPlant:
    P22 = plant.P22
    if np.any(P22.D != 0):
        raise PlantError("D22 must vanish")
    ok, rho = is_stable(plant.sys)
    if not ok:
        raise PlantError(f"open-loop plant is unstable (spectral radius {rho:.6g})")
    return plant


def _env_block(tf: TransferFunction, inp: str, out: str) -> Block:
    return Block(tf.to_ss(), (inp,), (out,), name=out)


def build_force_plant(robot: RobotModel, env: SpringEnvironment) -> GeneralizedPlant:
    """Direct force control of a position-controlled robot against a spring.

    Inputs ``(f_p, x_p, f_d, x_env, w_E, u)``, outputs ``(x_a, f_a, e, z_E, y)``
    with ``e = f_d - f_a`` and the measurement ``y = f_d - f_m``.
    """
    Ts = robot.Ts
    E = env.uncertain(Ts)
    blocks = [
        Block(robot.actuation, ("u",), ("x",), "actuation"),
        Block(robot.compliance, ("f_a",), ("x_c",), "compliance"),
        summation("x_a", [(1, "x"), (1, "x_c"), (1, "x_p")], Ts),
        summation("d", [(1, "x_a"), (-1, "x_env")], Ts),
        _env_block(E.nominal, "d", "f_e"),
        _env_block(E.additive, "d", "z_E"),
        summation("f_a", [(1, "f_e"), (1, "f_p"), (-1, "w_E")], Ts),
        Block(robot.force_path, ("f_a",), ("f_m",), "force_path"),
        summation("y", [(1, "f_d"), (-1, "f_m")], Ts),
        summation("e", [(1, "f_d"), (-1, "f_a")], Ts),
    ]
    inputs = ("f_p", "x_p", "f_d", "x_env", "w_E", "u")
    outputs = ("x_a", "f_a", "e", "z_E", "y")
    sys = interconnect(blocks, inputs, outputs)
    meta = {"kind": "force", "k_nominal": env.k_env, "delta_k": env.delta_k}
    return _check_plant(GeneralizedPlant(sys, inputs, outputs, meta=meta))


def build_admittance_plant(robot: RobotModel, human: HumanModel,
                           method: str = "backward") -> GeneralizedPlant:
    """Hand guiding: the operator pulls the end effector through an arm impedance.

    Inputs ``(x_h, f_p, w_E, u)``, outputs ``(x_a, f_a, z_E, y)`` where ``x_h`` is
    the operator's intended position, ``f_a = E (x_h - x_a)`` the interaction
    force and ``y`` the measured interaction force.
    """
    Ts = robot.Ts
    E = human.uncertain(Ts, method)
    blocks = [
        Block(robot.actuation, ("u",), ("x",), "actuation"),
        Block(robot.compliance, ("f_a",), ("x_c",), "compliance"),
        summation("x_a", [(1, "x"), (1, "x_c")], Ts),
        summation("d", [(1, "x_h"), (-1, "x_a")], Ts),
        _env_block(E.nominal, "d", "f_h"),
        _env_block(E.additive, "d", "z_E"),
        summation("f_a", [(1, "f_h"), (1, "f_p"), (-1, "w_E")], Ts),
        Block(robot.force_path, ("f_a",), ("y",), "force_path"),
    ]
    inputs = ("x_h", "f_p", "w_E", "u")
    outputs = ("x_a", "f_a", "z_E", "y")
    sys = interconnect(blocks, inputs, outputs)
    meta = {"kind": "admittance", "k_nominal": human.k_hum, "delta_k": human.delta_k,
            "b_nominal": human.b_hum, "delta_b": human.delta_b}
    return _check_plant(GeneralizedPlant(sys, inputs, outputs, meta=meta))


def particular_plant(plant: GeneralizedPlant, delta: float) -> StateSpace:
    """Plant with the uncertainty loop closed at ``delta``; channels as in ``plant``
    minus ``w_E``/``z_E``."""
    if delta < 0:
        raise PlantError("delta must be non-negative")
    return plant.close_uncertainty(delta).sys
