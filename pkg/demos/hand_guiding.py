"""Drag the robot by hand, first with a relaxed arm and then with a stiff one.

The classical admittance law (virtual mass 1.2 kg, damping 8 Ns/m) is
compared with the synthesized admittance controller.  The operator is a
spring pulling on a position-controlled robot, so the robot's lag alone
stretches the arm during the move and the peak force is large.  At the stiff
end the synthesized loop is close to marginal and its ripple decays slowly.
The stiff operator also damps harder (stiffness and damping grow together in
the uncertainty model); a stiff arm with light damping is outside that model.

    python demos/hand_guiding.py      # synthesis takes about a minute
"""

from pathlib import Path

import numpy as np

from ccsynth.config import load_config, shipped_config
from ccsynth.plant import HumanModel
from ccsynth.sim import make_admittance_controller, min_jerk, simulate_guiding, traces_svg
from ccsynth.synthesis import synthesize

cfg = load_config(shipped_config("hand_guiding"))
robot = cfg.robot()
env = cfg.environment()

print("synthesizing ...")
design = synthesize(cfg.problem())
print(f"  {design.report.status} in {design.wall_time:.1f} s")

controllers = {"synthesized": design.controller,
               "classical": make_admittance_controller(1.2, 8.0, 0.0, robot.Ts)}
intent = min_jerk(0.3, 2.0, robot.Ts, 10.0)
hold = np.arange(len(intent)) * robot.Ts >= 8.0

traces = {}
for k_arm, b_arm in ((env.k_hum, env.b_hum), (env.k_hum + env.delta_k, env.b_hum + env.delta_b)):
    human = HumanModel(k_arm, b_arm)
    print(f"\narm stiffness {k_arm / 1e3:.0f} N/mm")
    for label, K in controllers.items():
        tr = simulate_guiding(K, robot, human, intent)
        traces[f"{label} {k_arm / 1e3:.0f} N/mm"] = tr
        if tr.diverged:
            print(f"  {label:<12} diverged at {tr.diverged_at:.2f} s")
            continue
        ptp = np.ptp(tr.force[hold[:len(tr)]])
        print(f"  {label:<12} end {tr.x[-1]:.3f} m of {intent[-1]:.3f}, "
              f"peak {np.max(np.abs(tr.force)):7.1f} N, p-p over last 2 s {ptp:.2f} N")

out = Path(__file__).with_name("hand_guiding.svg")
out.write_text(traces_svg(traces))
print(f"\nwrote {out}")
