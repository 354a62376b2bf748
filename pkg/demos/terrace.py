"""Slide a force-controlled tool over a terrace of foam, paper, steel, aluminium and carton.

Compares the synthesized controller with two classical PI loops: one tuned on
foam (fast, but it chatters on steel) and one tuned on steel (stable, sluggish).
Writes terrace.svg next to this script.

    python demos/terrace.py
"""

from pathlib import Path

import numpy as np

from ccsynth.config import load_config, shipped_config
from ccsynth.sim import make_pi_controller, simulate_contact, traces_svg, tune_pi
from ccsynth.synthesis import synthesize

cfg = load_config(shipped_config("force_control"))
robot = cfg.robot()
scenario = cfg.scenario()

print("synthesizing ...")
design = synthesize(cfg.problem())
print(f"  {design.report.status} in {design.wall_time:.1f} s, objective {design.report.objective:.4f}")

controllers = {"synthesized": design.controller}
for label, k in (("PI (foam)", 3000.0), ("PI (steel)", 80000.0)):
    kp, ki, _ = tune_pi(robot, k)
    controllers[label] = make_pi_controller(kp, ki, robot.Ts)

traces = {}
for label, K in controllers.items():
    tr = simulate_contact(K, robot, scenario)
    traces[label] = tr
    print(f"\n{label}: {'diverged' if tr.diverged else 'ok'}, peak {np.max(tr.force):.1f} N")
    for row in tr.patch_summary(scenario.surface):
        print(f"  {row['name']:<11} mean {row['mean_force']:6.2f} N  p-p {row['peak_to_peak']:6.2f} N")

out = Path(__file__).with_name("terrace.svg")
out.write_text(traces_svg(traces))
print(f"\nwrote {out}")
