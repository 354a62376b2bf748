"""Problem configuration files.

A config is a YAML document with the blocks ``robot``, ``environment``,
``synthesis``, ``simulation``, ``sweep`` and ``output``.  Every key is
checked against a schema; unknown keys, wrong types and out-of-range values
are reported with the line they appear on.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .lti import FrequencyGrid
from .plant import (GeneralizedPlant, HumanModel, RobotModel, SpringEnvironment,
                    build_admittance_plant, build_force_plant)
from .sim import ContactScenario, TerracedSurface
from .synthesis import RobustSpec, SynthesisProblem, nyquist_grid

__all__ = ["ConfigError", "ProblemConfig", "load_config", "parse_config", "shipped_config",
           "SHIPPED"]

SHIPPED = ("force_control", "hand_guiding")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads YAML 1.2 floats such as ``3e3``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                 |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                 |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                 |[-+]?\.(?:inf|Inf|INF)
                 |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


class ConfigError(ValueError):
    """Parse or validation failure; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


# ---------------------------------------------------------------------------
# schema

def _num(lo=None, hi=None, lo_open=False, integer=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "expected a number"
        if integer and (not float(v).is_integer()):
            return "expected an integer"
        if not np.isfinite(v):
            return "must be finite"
        if lo is not None and (v <= lo if lo_open else v < lo):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None
    return check


def _choice(*opts):
    def check(v):
        return None if v in opts else f"must be one of {', '.join(map(str, opts))}"
    return check


def _str(v):
    return None if isinstance(v, str) else "expected a string"


def _bool(v):
    return None if isinstance(v, bool) else "expected true/false"


def _delay_mode(v):
    if v in ("round", "exact"):
        return None
    if isinstance(v, int) and not isinstance(v, bool) and v >= 1:
        return None
    return "must be 'round', 'exact' or a positive integer"


POS = _num(0, lo_open=True)
NONNEG = _num(0)

SCHEMA: dict[str, Any] = {
    "name": (_str, "problem"),
    "seed": (_num(0, integer=True), 0),
    "robot": {
        "tau": (POS, 0.0437),
        "delay": (NONNEG, 0.036),
        "Ts": (POS, 0.008),
        "filter_cutoff": (POS, 73.0),
        "delay_mode": (_delay_mode, "round"),
    },
    "environment": {
        "kind": (_choice("force", "admittance"), None),
        "k_nominal": (POS, None),
        "k_max": (POS, None),
        "b_nominal": (NONNEG, 50.0),
        "b_max": (NONNEG, 250.0),
    },
    "synthesis": {
        "n": (_num(1, integer=True), 64),
        "N": (_num(1, integer=True), 250),
        "backend": (_choice("ipm", "admm", "clarabel"), "ipm"),
        "tol": (POS, 1e-6),
        "max_iter": (_num(1, integer=True), 200000),
        "grid_points": (_num(2, integer=True), 400),
        "specs": ("specs", []),
        "robust": {
            "enabled": (_bool, True),
            "mode": (_choice("halfplanes", "adaptive"), "adaptive"),
            "corner_hz": (POS, 5.0),
            "pivot": (_num(hi=0), -0.9),
            "margin": (NONNEG, 1e-3),
            "steps": (_num(1, integer=True), 12),
            "start": (_num(0, 1, lo_open=True), 0.015),
            "polish": (_num(0, integer=True), 4),
            "grid_linear": (_num(2, integer=True), 2500),
            "grid_log": (_num(0, integer=True), 100),
        },
    },
    "simulation": {
        "scenario": (_choice("terrace", "flat", "guiding"), None),
        "speed": (NONNEG, 0.005),
        "setpoint": (_num(), 5.0),
        "patch_length": (POS, 0.040),
        "settle": (NONNEG, 2.0),
        "duration": (POS, None),
        "noise": (NONNEG, 0.0),
        "surface_damping": (NONNEG, 0.0),
        "stiffness": (POS, None),
        "distance": (_num(), 0.6),
        "move_time": (POS, 3.0),
        "hold_time": (NONNEG, 2.0),
    },
    "sweep": {
        "k_min": (POS, None),
        "k_max": (POS, None),
        "steps": (_num(1, integer=True), 20),
        "sim_time": (POS, 3.0),
    },
    "output": {
        "dir": (_str, None),
        "svg": (_bool, True),
    },
}

SPEC_KEYS: dict[str, dict[str, Callable]] = {
    "tracking": {"channel": _str, "target": dict, "norm": _choice("2", "inf", "1"),
                 "weight": None, "samples": _num(1, integer=True), "name": _str},
    "steady_state": {"channel": _str, "value": _num(), "method": _choice("sum", "dc")},
    "no_overshoot": {"channel": _str, "ceiling": _num()},
    "rise_time": {"channel": _str, "value": _num(), "time": POS, "fraction": _num(0, 1)},
    "frequency_bound": {"channel": _str, "band_hz": list, "bound": POS, "name": _str},
    "passivity": {"channel": _str, "name": _str},
    "gain_bound": {"channel": _str, "type": _choice("h2", "l1"), "value": POS, "name": _str},
}
SPEC_REQUIRED = {
    "tracking": ("channel", "target"), "steady_state": ("channel", "value"),
    "no_overshoot": ("channel", "ceiling"), "rise_time": ("channel", "value", "time", "fraction"),
    "frequency_bound": ("channel", "band_hz", "bound"), "passivity": ("channel",),
    "gain_bound": ("channel", "type", "value"),
}
TARGET_KEYS = {
    "first_order": {"tau": POS},
    "admittance": {"m": POS, "b": NONNEG, "k": NONNEG, "k_env": NONNEG, "b_env": NONNEG},
}


def _line(node) -> int | None:
    return node.start_mark.line + 1 if node is not None else None


def _check_block(data: dict, node, schema: dict, path: str, src: str | None) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{path or 'document'} must be a mapping", _line(node), src)
    keys = {k.value: (k, v) for k, v in node.value}
    out = {}
    for key, (knode, vnode) in keys.items():
        full = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key '{full}'", _line(knode), src)
        rule = schema[key]
        if isinstance(rule, dict):
            out[key] = _check_block(data.get(key) or {}, vnode, rule, full, src)
            continue
        check, _ = rule
        value = data[key]
        if check == "specs":
            out[key] = _check_specs(value, vnode, full, src)
            continue
        if value is None:
            out[key] = None
            continue
        msg = check(value)
        if msg:
            raise ConfigError(f"'{full}' {msg} (got {value!r})", _line(vnode), src)
        out[key] = value
    # defaults
    for key, rule in schema.items():
        if key in out:
            continue
        if isinstance(rule, dict):
            out[key] = _defaults(rule)
        else:
            out[key] = copy.deepcopy(rule[1])
    return out


def _defaults(schema: dict) -> dict:
    return {k: (_defaults(r) if isinstance(r, dict) else copy.deepcopy(r[1]))
            for k, r in schema.items()}


def _check_specs(value, node, path, src) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"'{path}' must be a list", _line(node), src)
    out = []
    for item, inode in zip(value, node.value):
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError(f"each entry of '{path}' needs a 'kind'", _line(inode), src)
        kind = item["kind"]
        if kind not in SPEC_KEYS:
            raise ConfigError(f"unknown spec kind {kind!r}", _line(inode), src)
        allowed = SPEC_KEYS[kind]
        knodes = {k.value: (k, v) for k, v in inode.value}
        for key, val in item.items():
            if key == "kind":
                continue
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' for spec '{kind}'",
                                  _line(knodes[key][0]), src)
            check = allowed[key]
            if check is dict or check is list:
                if not isinstance(val, check):
                    raise ConfigError(f"'{key}' must be a {'mapping' if check is dict else 'list'}",
                                      _line(knodes[key][1]), src)
            elif check is not None:
                msg = check(val)
                if msg:
                    raise ConfigError(f"'{key}' {msg} (got {val!r})", _line(knodes[key][1]), src)
        for key in SPEC_REQUIRED[kind]:
            if key not in item:
                raise ConfigError(f"spec '{kind}' is missing '{key}'", _line(inode), src)
        if kind == "tracking":
            _check_target(item["target"], knodes["target"][1], src)
        if kind == "frequency_bound":
            band = item["band_hz"]
            if len(band) != 2 or not all(isinstance(b, (int, float)) for b in band) \
                    or not 0 <= band[0] < band[1]:
                raise ConfigError("'band_hz' must be [lo, hi] with 0 <= lo < hi",
                                  _line(knodes["band_hz"][1]), src)
        out.append(dict(item))
    return out


def _check_target(target: dict, node, src) -> None:
    kind = target.get("type")
    if kind not in TARGET_KEYS:
        raise ConfigError(f"target type must be one of {', '.join(TARGET_KEYS)}", _line(node), src)
    knodes = {k.value: (k, v) for k, v in node.value}
    for key, val in target.items():
        if key == "type":
            continue
        if key not in TARGET_KEYS[kind]:
            raise ConfigError(f"unknown key '{key}' for target '{kind}'", _line(knodes[key][0]), src)
        msg = TARGET_KEYS[kind][key](val)
        if msg:
            raise ConfigError(f"'{key}' {msg} (got {val!r})", _line(knodes[key][1]), src)


# ---------------------------------------------------------------------------

@dataclass
class ProblemConfig:
    """A validated configuration plus helpers that build the objects it describes."""

    data: dict
    text: str
    source: str | None = None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def kind(self) -> str:
        return self.data["environment"]["kind"]

    @property
    def digest(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def robot(self) -> RobotModel:
        r = self.data["robot"]
        return RobotModel.from_parameters(r["tau"], r["delay"], r["Ts"], r["filter_cutoff"],
                                          r["delay_mode"])

    def environment(self):
        e = self.data["environment"]
        dk = e["k_max"] - e["k_nominal"]
        if self.kind == "force":
            return SpringEnvironment(e["k_nominal"], dk)
        return HumanModel(e["k_nominal"], e["b_nominal"], dk, e["b_max"] - e["b_nominal"])

    def plant(self) -> GeneralizedPlant:
        if self.kind == "force":
            return build_force_plant(self.robot(), self.environment())
        return build_admittance_plant(self.robot(), self.environment())

    def problem(self) -> SynthesisProblem:
        s = self.data["synthesis"]
        plant = self.plant()
        rb = s["robust"]
        robust = None
        if rb["enabled"]:
            Ts = plant.Ts
            robust = RobustSpec(mode=rb["mode"], omega_corner=2 * np.pi * rb["corner_hz"],
                                pivot=rb["pivot"], margin=rb["margin"], steps=int(rb["steps"]),
                                start=rb["start"], polish=int(rb["polish"]),
                                grid=nyquist_grid(Ts, int(rb["grid_linear"]), int(rb["grid_log"])))
        grid = FrequencyGrid.log(plant.Ts, int(s["grid_points"]))
        return SynthesisProblem(plant, copy.deepcopy(s["specs"]), int(s["n"]), int(s["N"]), grid,
                                robust, s["backend"], float(s["tol"]), int(s["max_iter"]),
                                name=self.name)

    def scenario(self) -> ContactScenario:
        sm = self.data["simulation"]
        Ts = self.data["robot"]["Ts"]
        if sm["scenario"] == "terrace":
            surf = TerracedSurface.materials(sm["patch_length"], sm["surface_damping"])
        else:
            k = sm["stiffness"] or self.data["environment"]["k_nominal"]
            surf = TerracedSurface(TerracedSurface.flat(k).patches, sm["surface_damping"])
        return ContactScenario(surf, sm["speed"], sm["setpoint"], sm["duration"], Ts, sm["noise"],
                               self.seed, sm["settle"])

    def sweep_values(self) -> np.ndarray:
        sw = self.data["sweep"]
        e = self.data["environment"]
        lo = sw["k_min"] or e["k_nominal"]
        hi = sw["k_max"] or e["k_max"]
        steps = int(sw["steps"])
        return np.geomspace(lo, hi, steps) if steps > 1 else np.array([float(lo)])


def _validate_semantics(data: dict, root, src) -> None:
    env = data["environment"]
    env_node = _child(root, "environment")
    for key in ("kind", "k_nominal", "k_max"):
        if env[key] is None:
            raise ConfigError(f"'environment.{key}' is required", _line(env_node), src)
    if env["k_max"] < env["k_nominal"]:
        raise ConfigError("'environment.k_max' must be >= 'environment.k_nominal'",
                          _line(_child(env_node, "k_max")), src)
    if env["b_max"] < env["b_nominal"]:
        raise ConfigError("'environment.b_max' must be >= 'environment.b_nominal'",
                          _line(_child(env_node, "b_max")), src)
    sw = data["sweep"]
    if sw["k_min"] and sw["k_max"] and sw["k_max"] < sw["k_min"]:
        raise ConfigError("'sweep.k_max' must be >= 'sweep.k_min'",
                          _line(_child(_child(root, "sweep"), "k_max")), src)
    channels = _channels(env["kind"])
    for spec, node in zip(data["synthesis"]["specs"], _spec_nodes(root)):
        ch = spec["channel"]
        parts = [p.strip() for p in ch.split("->")]
        if len(parts) != 2 or parts[0] not in channels[0] or parts[1] not in channels[1]:
            raise ConfigError(f"channel {ch!r} does not exist in the {env['kind']} plant "
                              f"(inputs {', '.join(channels[0])}; outputs {', '.join(channels[1])})",
                              _line(node), src)
    sim = data["simulation"]
    if sim["scenario"] is None:
        sim["scenario"] = "guiding" if env["kind"] == "admittance" else "terrace"
    if (sim["scenario"] == "guiding") != (env["kind"] == "admittance"):
        raise ConfigError(f"scenario '{sim['scenario']}' does not fit a {env['kind']} environment",
                          _line(_child(_child(root, "simulation"), "scenario")), src)


def _channels(kind: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if kind == "force":
        return ("f_p", "x_p", "f_d", "x_env", "w_E"), ("x_a", "f_a", "e", "z_E")
    return ("x_h", "f_p", "w_E"), ("x_a", "f_a", "z_E")


def _child(node, key):
    if not isinstance(node, yaml.MappingNode):
        return None
    for k, v in node.value:
        if k.value == key:
            return v
    return None


def _spec_nodes(root):
    node = _child(_child(root, "synthesis"), "specs")
    return node.value if isinstance(node, yaml.SequenceNode) else []


def parse_config(text: str, source: str | None = None) -> ProblemConfig:
    try:
        root = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line, source) from None
    if root is None:
        raise ConfigError("empty configuration", 1, source)
    checked = _check_block(data, root, SCHEMA, "", source)
    _validate_semantics(checked, root, source)
    return ProblemConfig(checked, text, source)


def load_config(path) -> ProblemConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``force_control`` or ``hand_guiding``)."""
    if name not in SHIPPED:
        raise ConfigError(f"no shipped config named {name!r}; choose from {', '.join(SHIPPED)}")
    return Path(__file__).parent / "configs" / f"{name}.cfg"
