"""Plane Couette flow over a Tresca wall: stick above the threshold, slip below it.

Run: python3 demos/couette_slip.py
"""
from frictionstokes import DomainSpec, Scenario
from frictionstokes.verification import couette_check, eps_schedule_to

domain = DomainSpec(2, ((0.0, 1.0),), 1.0, periodic=(0,))

# The moving lid drags the fluid with shear stress mu * s / h = 1.  A threshold
# above that holds the bottom wall fluid at the lid speed; a lower threshold lets
# it slip until the wall stress equals the threshold.
for ell in (2.0, 0.5):
    sc = Scenario(domain=domain, resolution=16, T=1.0, dt=0.05, threshold=ell, eps_schedule=eps_schedule_to(1e-5))
    c = couette_check(sc)
    print(
        f"ell={ell}: regime={c.oracle.regime} wall speed {c.wall_speed:.6f} (exact {c.oracle.wall_speed}), "
        f"|sigma_t| {c.shear_stress:.6f} (exact {c.oracle.shear_stress})"
    )
