"""Command-line front end.

Commands::

    ccsynth synth    --config CFG               controller.json, theta.csv, report.json
    ccsynth sim      --controller C --config CFG trace.csv, summary.json (+ trace.svg)
    ccsynth sweep    --controller C --config CFG sweep.csv
    ccsynth analyze  --controller C --config CFG poles.csv, step.csv, impulse.csv,
                                                 nyquist.csv, margins.json
    ccsynth baseline --config CFG --type pi|admittance|zero   controller.json

``CFG`` is a path or the name of a shipped config (``force_control``,
``hand_guiding``).  Every run writes ``manifest.json`` next to its outputs.

Exit codes: 0 success, 1 tool or parse error, 2 solver not optimal,
3 finding (failed verification, divergence, oscillation, off-setpoint
force, unstable sweep row).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SHIPPED, ConfigError, ProblemConfig, load_config, shipped_config
from .lti import LTIError, StateSpace, closed_loop, frequency_response, impulse_response, is_stable
from .plant import HumanModel, particular_plant
from .sim import (ContactScenario, SimulationError, TerracedSurface, make_admittance_controller,
                  make_pi_controller, min_jerk, simulate_contact, simulate_guiding, stiffness_sweep, traces_svg, tune_pi)
from .specs import DEFAULT_HP1, DEFAULT_HP2, SpecError
from .synthesis import critical_ray_violation, desired_response, nyquist_grid, synthesize
from .youla import InternalModelController

EXIT_OK, EXIT_ERROR, EXIT_SOLVER, EXIT_FINDING = 0, 1, 2, 3
CONTROLLER_FORMAT = "ccsynth-controller-1"
ENV_OUT = "CCSYNTH_OUT"


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# controller files

def controller_document(kind: str, K: StateSpace, **fields) -> dict:
    doc = {"format": CONTROLLER_FORMAT, "type": kind, "Ts": K.Ts}
    doc.update(fields)
    doc["state_space"] = K.to_dict()
    return doc


def youla_document(controller: InternalModelController, **fields) -> dict:
    d = controller.to_dict()
    return controller_document("youla", controller.to_ss(), theta=d["theta"], P22=d["P22"],
                               **fields)


def load_controller(path) -> tuple[StateSpace, dict]:
    """Read a controller file; Youla controllers are rebuilt from theta and P22."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CLIError(f"cannot read controller {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != CONTROLLER_FORMAT:
        raise CLIError(f"{path}: not a {CONTROLLER_FORMAT} document")
    try:
        if doc.get("type") == "youla":
            K = InternalModelController.from_dict(doc).to_ss()
        else:
            K = StateSpace.from_dict(doc["state_space"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CLIError(f"{path}: malformed controller: {exc}") from None
    return K, doc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# shared plumbing

def _config(arg: str) -> ProblemConfig:
    if arg in SHIPPED and not Path(arg).exists():
        return load_config(shipped_config(arg))
    return load_config(arg)


def output_dir(flag: str | None, cfg: ProblemConfig | None, command: str) -> Path:
    """``--out`` beats ``output.dir`` in the config, which beats ``$CCSYNTH_OUT``."""
    if flag:
        out = Path(flag)
    elif cfg is not None and cfg.data["output"]["dir"]:
        out = Path(cfg.data["output"]["dir"])
    elif os.environ.get(ENV_OUT):
        name = cfg.name if cfg is not None else "run"
        out = Path(os.environ[ENV_OUT]) / name / command
    else:
        name = cfg.name if cfg is not None else "run"
        out = Path("ccsynth_out") / name / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: ProblemConfig | None, seed: int | None,
                   files: list[str], args: dict) -> None:
    man = {
        "tool": "ccsynth",
        "version": __version__,
        "command": command,
        "arguments": args,
        "config": None if cfg is None else {"name": cfg.name, "source": cfg.source,
                                            "sha256": cfg.digest,
                                            "text_sha256": hashlib.sha256(cfg.text.encode()).hexdigest()},
        "seed": seed,
        "outputs": {f: _sha256(out / f) for f in sorted(files)},
    }
    _write_json(out / "manifest.json", man)


def _seed(args, cfg: ProblemConfig) -> int:
    return cfg.seed if args.seed is None else int(args.seed)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    cfg = _config(args.config)
    problem = cfg.problem()
    if args.tol is not None:
        problem.tol = args.tol
    if args.max_iter is not None:
        problem.max_iter = args.max_iter
    if args.backend is not None:
        problem.backend = args.backend
    out = output_dir(args.out, cfg, "synth")
    _say(args, f"synthesizing {cfg.name}: n={problem.n} N={problem.N} backend={problem.backend}")
    res = synthesize(problem, verbose=args.verbose)
    rep = res.report

    doc = youla_document(res.controller, name=cfg.name, config_sha256=cfg.digest,
                         status=rep.status, objective=rep.objective)
    _write_json(out / "controller.json", doc)
    _csv(out / "theta.csv", ["i", "theta"], [(i + 1, float(t)) for i, t in enumerate(res.theta)])
    report = {
        "name": cfg.name,
        "solve": rep.summary(),
        "program": res.program.size(),
        "program_sha256": res.program.digest(),
        "continuation": res.history,
        "verification": None if res.verification is None else res.verification.to_dict(),
        "wall_time": res.wall_time,
    }
    _write_json(out / "report.json", report)
    files = ["controller.json", "theta.csv", "report.json"]
    write_manifest(out, "synth", cfg, _seed(args, cfg), files,
                   {"backend": problem.backend, "tol": problem.tol, "max_iter": problem.max_iter})

    ver = res.verification
    _say(args, f"status {rep.status}  objective {rep.objective:.6g}  "
               f"residuals {rep.primal_residual:.2e}/{rep.dual_residual:.2e}  "
               f"time {res.wall_time:.1f} s")
    if ver is not None:
        _say(args, f"verification {'passed' if ver.passed else 'FAILED'} "
                   f"({len(ver.findings)} findings > {ver.tol:g})")
    _say(args, f"wrote {out}")
    if not rep.optimal:
        return EXIT_SOLVER
    return EXIT_OK if ver is None or ver.passed else EXIT_FINDING


# ---------------------------------------------------------------------------
# baseline controllers

def cmd_baseline(args) -> int:
    cfg = _config(args.config)
    robot = cfg.robot()
    Ts = robot.Ts
    if args.type == "pi":
        if args.kp is not None and args.ki is not None:
            kp, ki, info = args.kp, args.ki, {}
        else:
            if cfg.kind != "force":
                raise CLIError("PI tuning needs a force config")
            k = args.k or cfg.data["environment"]["k_nominal"]
            target = _first_order_tau(cfg)
            kp, ki, info = tune_pi(robot, k, tau=target, horizon=args.horizon)
            info = {"tuned_at": k, "target_tau": target, **info}
        K = make_pi_controller(kp, ki, Ts)
        doc = controller_document("pi", K, kp=kp, ki=ki, tuning=info)
    elif args.type == "admittance":
        if args.m is None or args.b is None:
            raise CLIError("admittance baseline needs --m and --b")
        K = make_admittance_controller(args.m, args.b, args.k or 0.0, Ts)
        doc = controller_document("admittance", K, m=args.m, b=args.b, k=args.k or 0.0)
    else:
        K = StateSpace.static([[0.0]], Ts)
        doc = controller_document("zero", K)
    out = output_dir(args.out, cfg, "baseline")
    _write_json(out / "controller.json", doc)
    write_manifest(out, "baseline", cfg, _seed(args, cfg), ["controller.json"],
                   {"type": args.type})
    extra = " ".join(f"{k}={float(doc[k]):.6g}" for k in ("kp", "ki", "m", "b") if k in doc)
    _say(args, f"{args.type} controller {extra} -> {out / 'controller.json'}")
    return EXIT_OK


def _first_order_tau(cfg: ProblemConfig) -> float:
    for spec in cfg.data["synthesis"]["specs"]:
        t = spec.get("target") or {}
        if spec["kind"] == "tracking" and t.get("type") == "first_order":
            return float(t["tau"])
    return 0.17


# ---------------------------------------------------------------------------
# sim

def cmd_sim(args) -> int:
    cfg = _config(args.config)
    K, doc = load_controller(args.controller)
    robot = cfg.robot()
    seed = _seed(args, cfg)
    sm = cfg.data["simulation"]
    out = output_dir(args.out, cfg, "sim")
    summary = {"controller": doc["type"], "scenario": sm["scenario"]}
    finding = False

    if sm["scenario"] == "guiding":
        e = cfg.data["environment"]
        human = HumanModel(args.stiffness or sm["stiffness"] or e["k_nominal"], e["b_nominal"])
        total = sm["move_time"] + sm["hold_time"]
        intent = min_jerk(sm["distance"], sm["move_time"], robot.Ts, total)
        tr = simulate_guiding(K, robot, human, intent)
        hold = tr.t >= sm["move_time"] + 0.5 * sm["hold_time"]
        ptp = float(np.ptp(tr.force[hold])) if np.any(hold) else float("nan")
        osc = bool(ptp > args.osc_limit)
        summary.update({"k_hum": human.k_hum, "b_hum": human.b_hum,
                        "peak_force": float(np.max(np.abs(tr.force))),
                        "final_position": float(tr.x[-1]), "target": float(intent[-1]),
                        "hold_peak_to_peak": ptp, "oscillation": osc})
        finding = osc
        _say(args, f"guiding k_hum={human.k_hum:g} N/m: peak force {summary['peak_force']:.4g} N, "
                   f"final x {tr.x[-1]:.5f} m (target {intent[-1]:.5f}), "
                   f"hold p-p {ptp:.3g} N{'  OSCILLATING' if osc else ''}")
    else:
        sc = cfg.scenario()
        if args.stiffness:
            surf = TerracedSurface(TerracedSurface.flat(args.stiffness).patches, sc.surface.damping)
            sc = ContactScenario(surf, sc.speed, sc.setpoint, sc.duration, sc.Ts, sc.noise,
                                 sc.seed, sc.settle)
        if seed != sc.seed:
            sc = replace(sc, seed=seed)
        tr = simulate_contact(K, robot, sc)
        rows = tr.patch_summary(sc.surface)
        for r in rows:
            r["oscillation"] = bool(np.isfinite(r["peak_to_peak"]) and r["peak_to_peak"] > args.osc_limit)
            r["within_band"] = bool(abs(r["mean_force"] - sc.setpoint) <= args.band)
            finding |= r["oscillation"] or not r["within_band"]
        summary.update({"setpoint": sc.setpoint, "patches": rows,
                        "peak_force": float(np.max(np.abs(tr.force))) if len(tr) else 0.0})
        for r in rows:
            flag = "OSCILLATING" if r["oscillation"] else ("ok" if r["within_band"] else "off-setpoint")
            _say(args, f"patch {r['patch']} {r['name']:<12} k={r['stiffness'] / 1e3:6.1f} N/mm  "
                       f"mean {r['mean_force']:8.4f} N  p-p {r['peak_to_peak']:8.4f} N  {flag}")

    summary.update({"status": tr.status, "diverged_at": tr.diverged_at, "samples": len(tr),
                    "osc_limit": args.osc_limit})
    finding |= tr.diverged
    if tr.diverged:
        _say(args, f"simulation DIVERGED at t={tr.diverged_at:.3f} s")
    files = ["trace.csv", "summary.json"]
    tr.to_csv(out / "trace.csv")
    _write_json(out / "summary.json", summary)
    if cfg.data["output"]["svg"] and not args.no_svg:
        fields = ("force", "x") if sm["scenario"] != "guiding" else ("force", "x", "reference")
        (out / "trace.svg").write_text(traces_svg({doc["type"]: tr}, fields))
        files.append("trace.svg")
    write_manifest(out, "sim", cfg, seed, files,
                   {"controller_sha256": _sha256(Path(args.controller)),
                    "stiffness": args.stiffness, "osc_limit": args.osc_limit})
    _say(args, f"wrote {out}")
    return EXIT_FINDING if finding else EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    K, doc = load_controller(args.controller)
    robot = cfg.robot()
    sw = cfg.data["sweep"]
    e = cfg.data["environment"]
    lo = args.k_min or sw["k_min"] or e["k_nominal"]
    hi = args.k_max or sw["k_max"] or e["k_max"]
    steps = args.steps or int(sw["steps"])
    if not (lo > 0 and hi >= lo and steps >= 1):
        raise CLIError("sweep range must be positive with k_max >= k_min")
    ks = np.geomspace(lo, hi, steps) if steps > 1 else np.array([float(lo)])
    human = cfg.environment() if cfg.kind == "admittance" else None
    rep = stiffness_sweep(K, robot, cfg.kind, ks, human=human,
                          setpoint=cfg.data["simulation"]["setpoint"],
                          sim_time=args.sim_time or sw["sim_time"], nominal=e["k_nominal"])
    out = output_dir(args.out, cfg, "sweep")
    rep.to_csv(out / "sweep.csv")
    for r in rep.rows:
        _say(args, f"k={r.k / 1e3:9.3f} N/mm  rho={r.spectral_radius:.6f}  "
                   f"{'stable' if r.stable else 'UNSTABLE':8s}  peak {r.peak_force:.4g} N  {r.sim_status}")
    ratio = rep.ratio
    _say(args, f"max stable {rep.max_stable}  ratio to nominal {ratio if ratio is None else round(ratio, 3)}")
    write_manifest(out, "sweep", cfg, _seed(args, cfg), ["sweep.csv"],
                   {"controller_sha256": _sha256(Path(args.controller)),
                    "k_min": lo, "k_max": hi, "steps": steps})
    _say(args, f"wrote {out}")
    return EXIT_OK if rep.all_stable else EXIT_FINDING


# ---------------------------------------------------------------------------
# analyze

def cmd_analyze(args) -> int:
    cfg = _config(args.config)
    K, doc = load_controller(args.controller)
    plant = cfg.plant()
    Ts = plant.Ts
    N = args.samples or int(cfg.data["synthesis"]["N"])
    out = output_dir(args.out, cfg, "analyze")

    # poles at the nominal and at the extreme environment
    pole_rows = []
    stability = {}
    for case, delta in (("nominal", 0.0), ("extreme", 1.0)):
        cl = closed_loop(particular_plant(plant, delta), K)
        p = cl.poles()
        p = p[np.lexsort((p.imag, p.real, -np.abs(p)))]
        ok, rho = is_stable(cl)
        stability[case] = {"delta": delta, "spectral_radius": rho, "stable": ok}
        pole_rows += [(case, float(z.real), float(z.imag), float(abs(z))) for z in p]
    _csv(out / "poles.csv", ["case", "real", "imag", "radius"], pole_rows)

    # per-channel responses of the nominal closed loop (uncertainty port open)
    cl = closed_loop(plant, K)
    ins, outs = plant.exogenous_inputs, plant.exogenous_outputs
    imp = impulse_response(cl, N)
    names = [f"{i}->{o}" for o in outs for i in ins]
    flat_h = imp.h.reshape(N, -1)
    flat_s = imp.step().reshape(N, -1)
    t = imp.t
    _csv(out / "impulse.csv", ["t"] + names, [[float(t[k])] + list(map(float, flat_h[k])) for k in range(N)])
    _csv(out / "step.csv", ["t"] + names, [[float(t[k])] + list(map(float, flat_s[k])) for k in range(N)])

    # Nyquist locus of the uncertainty loop
    rb = cfg.data["synthesis"]["robust"]
    grid = nyquist_grid(Ts, int(rb["grid_linear"]), int(rb["grid_log"]))
    wi, zi = ins.index("w_E"), outs.index("z_E")
    H = frequency_response(cl, grid)[:, zi, wi]
    m1 = DEFAULT_HP1.margin(H)
    m2 = DEFAULT_HP2.margin(H)
    hi_band = grid.omega >= 2 * np.pi * rb["corner_hz"]
    dist = np.abs(H + 1.0)
    _csv(out / "nyquist.csv", ["f_hz", "re", "im", "hp1_margin", "hp2_margin", "dist_to_critical"],
         [(float(w / (2 * np.pi)), float(h.real), float(h.imag), float(a), float(b), float(d))
          for w, h, a, b, d in zip(grid.omega, H, m1, m2, dist)])

    margins = {
        "stability": stability,
        "robust": {
            "min_dist_to_critical": float(dist.min()),
            "critical_ray_violation": critical_ray_violation(H),
            "hp1_min_margin_above_corner": float(m1[hi_band].min()) if np.any(hi_band) else None,
            "hp2_min_margin_below_corner": float(m2[~hi_band].min()) if np.any(~hi_band) else None,
            "corner_hz": rb["corner_hz"],
        },
        "specs": _spec_margins(cfg, cl, ins, outs, Ts),
    }
    _write_json(out / "margins.json", margins)
    files = ["poles.csv", "impulse.csv", "step.csv", "nyquist.csv", "margins.json"]
    write_manifest(out, "analyze", cfg, _seed(args, cfg), files,
                   {"controller_sha256": _sha256(Path(args.controller)), "samples": N})
    for case, s in stability.items():
        _say(args, f"{case:8s} spectral radius {s['spectral_radius']:.6f} "
                   f"{'stable' if s['stable'] else 'UNSTABLE'}")
    r = margins["robust"]
    _say(args, f"nyquist: min |H+1| {r['min_dist_to_critical']:.4f}, "
               f"critical-ray violation {r['critical_ray_violation']:.3g}")
    for s in margins["specs"]:
        _say(args, "  " + ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                                    for k, v in s.items()))
    _say(args, f"wrote {out}")
    return EXIT_OK


def _spec_margins(cfg, cl, ins, outs, Ts) -> list[dict]:
    rows = []
    for spec in cfg.data["synthesis"]["specs"]:
        i, o = (p.strip() for p in spec["channel"].split("->"))
        sub = cl.select([outs.index(o)], [ins.index(i)])
        row = {"kind": spec["kind"], "channel": spec["channel"]}
        if spec["kind"] == "tracking":
            L = int(spec.get("samples", cfg.data["synthesis"]["N"]))
            yd = desired_response(spec["target"], Ts, L)
            y = impulse_response(sub, L).step()[:, 0, 0]
            row["normalized_error"] = float(np.linalg.norm(y - yd) / np.linalg.norm(yd))
        elif spec["kind"] == "steady_state":
            row["dc_gain"] = float(sub.dc_gain()[0, 0])
            row["error"] = float(abs(row["dc_gain"] - spec["value"]))
        else:
            row["note"] = "see synth verification"
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# entry point

class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other input errors; 2 means "solver failed"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ccsynth",
                                description="Convex controller synthesis for robot contact tasks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, controller=True):
        sp.add_argument("--config", "-c", required=True,
                        help=f"config path or shipped name ({', '.join(SHIPPED)})")
        if controller:
            sp.add_argument("--controller", "-k", required=True, help="controller.json")
        sp.add_argument("--out", "-o", help=f"output directory (default: config output.dir, "
                                            f"then ${ENV_OUT}, then ./ccsynth_out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--quiet", "-q", action="store_true")

    s = sub.add_parser("synth", help="synthesize a controller")
    common(s, controller=False)
    s.add_argument("--tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--backend", choices=("ipm", "admm", "clarabel"))
    s.add_argument("--verbose", "-v", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sim", help="simulate the configured scenario")
    common(s)
    s.add_argument("--stiffness", type=float, help="use a flat surface / arm of this stiffness (N/m)")
    s.add_argument("--osc-limit", type=float, default=2.0,
                   help="steady peak-to-peak force (N) above which oscillation is flagged")
    s.add_argument("--band", type=float, default=1.0, help="tolerated mean force error (N)")
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("sweep", help="stability over a stiffness range")
    common(s)
    s.add_argument("--k-min", type=float)
    s.add_argument("--k-max", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--sim-time", type=float)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("analyze", help="poles, responses, Nyquist locus and margins")
    common(s)
    s.add_argument("--samples", type=int, help="response length (default: synthesis N)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("baseline", help="write a classical controller")
    common(s, controller=False)
    s.add_argument("--type", choices=("pi", "admittance", "zero"), required=True)
    s.add_argument("--kp", type=float)
    s.add_argument("--ki", type=float)
    s.add_argument("--k", type=float, help="PI: tuning stiffness (N/m); admittance: spring (N/m)")
    s.add_argument("--horizon", type=float, default=2.0, help="PI tuning horizon (s)")
    s.add_argument("--m", type=float)
    s.add_argument("--b", type=float)
    s.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CLIError, SpecError, SimulationError, LTIError) as exc:
        print(f"ccsynth {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
