"""History-dependent threshold: watch the fixed-point iteration contract window by window.

Run: python3 demos/coulomb_fixed_point.py
"""
from pathlib import Path

from frictionstokes import discretize, parse_scenario, solve_coulomb
from frictionstokes.coulomb import self_consistency_residual

sc = parse_scenario(Path(__file__).parent / "scenarios" / "coulomb_couette.toml")
disc = discretize(sc)
traj, trace = solve_coulomb(sc, disc=disc)

# Each window restarts the iteration from the converged state at its start.
for w, rec in enumerate(trace.windows):
    incs = " ".join(f"{x:.2e}" for x in trace.increments(w))
    print(f"window {w} steps {rec.start}..{rec.end}: increments {incs}")

res, size = self_consistency_residual(traj, sc.coulomb, disc)
print(f"self-consistency residual {res:.2e} (threshold norm {size:.3f})")
print(f"threshold at the wall grows from {traj.thresholds.values[0].mean():.4f} to {traj.thresholds.values[-1].mean():.4f}")
