import numpy as np
import pytest

from conftest import couette
from frictionstokes.fem import WallData
from frictionstokes.stepping import discretize, run_tresca
from frictionstokes.verification import (
    VerificationReport,
    c1_prime,
    complementarity_series,
    couette_oracle,
    couette_poiseuille_wall_speed,
    empirical_orders,
    energy_budget,
    eps_convergence_study,
    eps_schedule_to,
    friction_gap,
    verify_trajectory,
)


def test_couette_oracle_regimes():
    assert couette_oracle(1, 1, 1, 2.0) == couette_oracle(1, 1, 1, 1.0)
    stick = couette_oracle(1, 1, 1, 2.0)
    assert (stick.regime, stick.wall_speed, stick.shear_stress) == ("stick", 1.0, 1.0)
    slip = couette_oracle(1, 1, 1, 0.5)
    assert (slip.regime, slip.wall_speed, slip.shear_stress) == ("slip", 0.5, 0.5)
    rest = couette_oracle(1, 1, 0, 0.5)
    assert rest.wall_speed == 0.0 and rest.shear_stress == 0.0
    assert couette_oracle(1, 1, -1, 0.5).wall_speed == -0.5


def test_closed_channel_wall_speed():
    assert couette_poiseuille_wall_speed(1, 1, 1, 0.5) == pytest.approx(0.875)
    assert couette_poiseuille_wall_speed(1, 1, 1, 2.0) == 1.0


def test_c1_prime_vanishes_for_zero_data(unit_domain):
    sc = couette(unit_domain, wall=WallData("couette", 0.0))
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    C1, terms = c1_prime(disc, traj)
    assert C1 == 0.0 and terms == (0.0, 0.0, 0.0, 0.0)


def test_c1_prime_couette_value(periodic_domain):
    sc = couette(periodic_domain, T=0.25)
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    C1, terms = c1_prime(disc, traj)
    expected = 2.0 / disc.alpha * disc.ops.norm_h1(disc.lifting.G0) ** 2 * 0.25
    assert C1 == pytest.approx(expected, rel=1e-12)
    assert terms[0] == 0.0 and terms[1] == 0.0 and terms[3] == 0.0


def test_c1_prime_force_term_scales_quadratically(periodic_domain):
    base = couette(periodic_domain, f=(0.3, 0.0), T=0.125)
    big = couette(periodic_domain, f=(3.0, 0.0), T=0.125)
    d1, d2 = discretize(base), discretize(big)
    t1 = c1_prime(d1, run_tresca(base, disc=d1))[1][1]
    t2 = c1_prime(d2, run_tresca(big, disc=d2))[1][1]
    assert t1 == pytest.approx(0.5 * 0.3**2 * 0.125, rel=1e-10)
    assert t2 == pytest.approx(100 * t1, rel=1e-12)


def test_energy_budget_on_forced_run(periodic_domain):
    sc = couette(periodic_domain, f=(1.0, 0.0), ell=0.3)
    disc = discretize(sc)
    eb = energy_budget(run_tresca(sc, disc=disc), disc)
    assert eb.holds and eb.steps_hold
    assert np.all(eb.measured_curve <= eb.bound_curve * (1 + 1e-12))


def test_friction_gap_bounds_and_monotone(periodic_domain):
    sc = couette(periodic_domain, ell=0.5, T=0.125)
    rows = eps_convergence_study(sc, [1e-2, 1e-3, 1e-4])
    for r in rows:
        assert 0.0 <= r.gap <= r.bound
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    orders = empirical_orders([r.eps for r in rows], gaps)
    assert np.all(orders > 0.5)


def test_complementarity_residuals_shrink(periodic_domain):
    out = []
    for eps in (1e-3, 1e-4):
        sc = couette(periodic_domain, ell=0.5, eps_schedule=eps_schedule_to(eps))
        disc = discretize(sc)
        traj = run_tresca(sc, disc=disc)
        out.append(complementarity_series(traj, disc, eps)[-1])
    assert out[1][0] <= out[0][0]
    assert out[1][1] < out[0][1]
    assert out[1][1] <= 1e-2 * 0.5


def test_eps_study_rejects_unordered(periodic_domain):
    with pytest.raises(ValueError):
        eps_convergence_study(couette(periodic_domain), [1e-3, 1e-2])


def test_eps_schedule_ends_at_target():
    assert eps_schedule_to(1e-5) == (1e-2, 1e-3, 1e-4, 1e-5)
    assert eps_schedule_to(3e-3) == (1e-2, 3e-3)


def test_report_lines_and_purity(periodic_domain):
    sc = couette(periodic_domain)
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    before = [s.v_tilde.copy() for s in traj.states]
    rep = verify_trajectory(traj, disc)
    assert rep.passed
    names = [e.name for e in rep.entries]
    assert {"energy_bound", "energy_steps", "divergence", "infeasibility", "friction_gap"} <= set(names)
    for line in rep.to_text().splitlines():
        assert line.split()[0] in ("PASS", "FAIL")
        assert "value=" in line and "tol=" in line
    assert all(np.array_equal(a, s.v_tilde) for a, s in zip(before, traj.states))
    assert friction_gap(traj, disc)[0] >= 0


def test_report_fail_token():
    rep = VerificationReport()
    rep.add("x", False, 2.0, 1.0)
    assert not rep.passed and rep.to_text().startswith("FAIL x value=2.000000e+00 tol=1.000000e+00")
