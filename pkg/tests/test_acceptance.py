"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured value and
the tolerance it was judged against, then asserts.
"""
import time

import numpy as np
import pytest

from conftest import couette
from frictionstokes import CoulombConfig, CoulombSpec, DomainSpec, solve_coulomb
from frictionstokes.cli import main
from frictionstokes.coulomb import self_consistency_residual
from frictionstokes.fem import WallData
from frictionstokes.friction import ThresholdField
from frictionstokes.stepping import discretize, march_to_steady, run_tresca
from frictionstokes.stress import Mollifier, StressField, analytic_norms, regularized_normal_trace
from frictionstokes.verification import (
    complementarity_residual,
    couette_check,
    energy_budget,
    eps_convergence_study,
    eps_schedule_to,
    order_study,
    wall_fields,
)

PERIODIC = DomainSpec(2, ((0.0, 1.0),), 1.0, periodic=(0,))
CLOSED = DomainSpec(2, ((0.0, 1.0),), 1.0)


@pytest.fixture
def verdict(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number} ({name}): {detail}")
        assert ok, detail

    return emit


def coulomb_couette(T=1.0, dt=1 / 64, resolution=8, **kw):
    spec = CoulombSpec(F0=0.2, Fsigma=0.1, S=1.0, tol=1e-8, max_iter=50, **kw)
    return couette(CLOSED, ell=0.2, resolution=resolution, T=T, dt=dt, coulomb=spec,
                   eps_schedule=(1e-2, 1e-3, 1e-4, 1e-5))


def test_couette_stick_slip_oracle(verdict):
    details, ok = [], True
    for ell, speed in ((2.0, 1.0), (0.5, 0.5)):
        sc = couette(PERIODIC, ell=ell, resolution=32, eps_schedule=eps_schedule_to(1e-5))
        start = time.perf_counter()
        c = couette_check(sc, steady_tol=1e-9)
        elapsed = time.perf_counter() - start
        good = c.speed_error <= 1e-3 and c.stress_error <= 1e-3 and c.oracle.wall_speed == speed and elapsed <= 120
        ok &= good
        details.append(
            f"ell={ell} {c.oracle.regime} speed={c.wall_speed:.8f} |sigma_t|={c.shear_stress:.8f} "
            f"err=({c.speed_error:.1e},{c.stress_error:.1e}) tol=1e-3 time={elapsed:.1f}s"
        )
    verdict(1, "Couette oracle", ok, "; ".join(details))


def test_energy_budget(verdict):
    runs = []
    sc = couette(PERIODIC, ell=0.3, f=(1.0, 0.0), T=0.5)
    disc = discretize(sc)
    runs.append(("forced Tresca", run_tresca(sc, disc=disc), disc))
    sc = couette(CLOSED, ell=0.5, T=0.5, zeta={"kind": "sine", "offset": 1.0, "amplitude": 0.5, "omega": 4.0})
    disc = discretize(sc)
    runs.append(("oscillating wall", run_tresca(sc, disc=disc), disc))
    sc = coulomb_couette(T=0.25, dt=1 / 32)
    disc = discretize(sc)
    runs.append(("Coulomb", solve_coulomb(sc, disc=disc)[0], disc))
    ok, details = True, []
    for name, traj, disc in runs:
        eb = energy_budget(traj, disc, rtol=1e-10)
        ok &= eb.holds and eb.steps_hold
        details.append(f"{name}: max={eb.measured_curve.max():.3e} <= {eb.bound:.3e}, steps ok={eb.steps_hold}")
    verdict(2, "energy budget", ok, "; ".join(details))


def test_regularization_gap(verdict):
    sc = couette(PERIODIC, ell=0.5, resolution=16, T=0.25, dt=1 / 32)
    rows = eps_convergence_study(sc, [1e-2, 1e-3, 1e-4])
    bounded = all(0.0 <= r.gap <= r.bound for r in rows)
    gaps = [r.gap for r in rows]
    mono = gaps[0] > gaps[1] > gaps[2]
    detail = " ".join(f"eps={r.eps:g}: gap={r.gap:.3e} bound={r.bound:.3e}" for r in rows)
    verdict(3, "regularization gap", bounded and mono, detail)


def test_complementarity(verdict):
    ok, details = True, []
    for ell in (0.5, 2.0):
        res = []
        for eps in (1e-4, 1e-5):
            sc = couette(PERIODIC, ell=ell, resolution=16, eps_schedule=eps_schedule_to(eps))
            disc = discretize(sc)
            state, _ = march_to_steady(disc, 0.1, steady_tol=1e-9, max_steps=2000)
            w = disc.quadrature.weights
            slip, sig = wall_fields(disc, state, np.full(w.size, ell), eps)
            infeas, align = complementarity_residual(sig, slip, np.full(w.size, ell), w)
            res.append((infeas, align))
        (i4, a4), (i5, a5) = res
        # the discrete traction never exceeds the threshold, so infeasibility sits at zero
        good = i5 <= 1e-2 * ell and a5 <= 1e-2 * ell * 1.0 and i5 <= i4 and a5 < a4
        ok &= good
        details.append(f"ell={ell}: infeas {i4:.1e}->{i5:.1e}, alignment {a4:.2e}->{a5:.2e} tol={1e-2 * ell:g}")
    verdict(4, "complementarity", ok, "; ".join(details))


def test_tresca_recovery(verdict):
    spec = CoulombSpec(F0=0.2, Fsigma=0.0, S=1.0)
    sc = couette(CLOSED, ell=0.2, T=0.5, dt=1 / 32, coulomb=spec)
    disc = discretize(sc)
    traj, trace = solve_coulomb(sc, disc=disc)
    ref = run_tresca(sc, ThresholdField.constant(0.2, disc.quadrature.xprime, sc.time_grid()), disc=disc)
    diff = max(
        max(disc.ops.norm_mass(a.v_tilde - b.v_tilde), np.abs(a.v_tilde - b.v_tilde).max(), np.abs(a.p - b.p).max())
        for a, b in zip(traj.states, ref.states)
    )
    iters = [w.iterations for w in trace.windows]
    ok = diff <= 1e-12 and iters == [1] * len(iters)
    verdict(5, "Tresca recovery", ok, f"max state difference={diff:.1e} tol=1e-12, inner iterations={iters}")


def test_coulomb_fixed_point(verdict):
    sc = coulomb_couette()
    disc = discretize(sc)
    traj, trace = solve_coulomb(sc, disc=disc)
    ratios = [r for w in range(len(trace.windows)) for r in trace.ratios(w)]
    iters = [w.iterations for w in trace.windows]
    res, size = self_consistency_residual(traj, sc.coulomb, disc)
    ok = (
        all(w.converged for w in trace.windows)
        and all(r < 1 for r in ratios)
        and max(iters) <= 50
        and res <= 2e-8 * (1 + size)
    )
    detail = (
        f"windows={len(trace.windows)} iterations={iters} max ratio={max(ratios):.3f} "
        f"residual={res:.2e} tol={2e-8 * (1 + size):.2e}"
    )
    verdict(6, "Coulomb fixed point", ok, detail)


def test_prefix_stability(verdict):
    one, tr1 = solve_coulomb(coulomb_couette())
    two, tr2 = solve_coulomb(coulomb_couette(window=0.5))
    diff = max(np.abs(a.v_tilde - b.v_tilde).max() for a, b in zip(one.states, two.states))
    ok = len(tr1.schedule) == 1 and len(tr2.schedule) == 2 and diff <= 10 * 1e-8
    verdict(7, "prefix stability", ok, f"windows {len(tr1.schedule)} vs {len(tr2.schedule)}, difference={diff:.1e} tol=1e-7")


def test_temporal_order(verdict):
    sc = couette(PERIODIC, ell=0.5, resolution=16, T=0.25, eps_schedule=eps_schedule_to(1e-5))
    st = order_study(sc, [1 / 16, 1 / 32, 1 / 64], reference_dts=(1 / 128, 1 / 256))
    ok = all(abs(o - 1.0) <= 0.2 for o in st.orders)
    errs = " ".join(f"{e:.3e}" for e in st.errors)
    verdict(8, "temporal order", ok, f"errors={errs} orders={' '.join(f'{o:.3f}' for o in st.orders)} tol=1.0+-0.2")


SCENARIO = """
[domain]
dimension = 2
omega = [[0.0, 1.0]]

[physics]
T = 0.25

[friction]
eps_schedule = [1e-2, 1e-3, 1e-4]

[friction.coulomb]
F0 = 0.2
Fsigma = 0.1
window = 0.0625

[discretization]
resolution = 8
dt = 0.03125
"""


def test_determinism(verdict, tmp_path, capsys):
    path = tmp_path / "s.toml"
    path.write_text(SCENARIO)
    run = lambda out, *extra: main(["run-coulomb", "--scenario", str(path), "--out", str(out), *extra])  # noqa: E731
    codes = [run(tmp_path / "a"), run(tmp_path / "b")]
    ck = str(tmp_path / "ck.json")
    codes.append(run(tmp_path / "c", "--checkpoint", ck, "--stop-after-windows", "2"))
    codes.append(run(tmp_path / "c", "--checkpoint", ck, "--resume"))
    capsys.readouterr()
    ma, mb, mc = ((tmp_path / d / "manifest.txt").read_bytes() for d in "abc")
    ok = codes == [0, 0, 0, 0] and ma == mb == mc
    verdict(9, "determinism", ok, f"exit codes={codes} repeat identical={ma == mb} resume identical={ma == mc}")


def test_trace_operator(verdict):
    row = lambda x: np.stack([x[:, 0] * x[:, 1], 1.0 + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])], 1)  # noqa: E731
    div = lambda x: x[:, 1] + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
    field = StressField(row_fn=row, div_fn=div)
    s_l2, d_l2 = analytic_norms(row, div, CLOSED)
    ok, parts = True, []
    for xp in (0.3, 0.5, 0.7):
        exact = -row(np.array([[xp, 0.0]]))[0, 1]
        errs, bound_ok = [], True
        for rho in (0.2, 0.1, 0.05):
            m = Mollifier(rho)
            val = regularized_normal_trace(field, None, m, [xp], domain=CLOSED)
            errs.append(abs(val - exact))
            bound_ok &= abs(val) <= m.continuity_constant() * (s_l2 + d_l2)
        ok &= errs[0] > errs[1] > errs[2] and bound_ok
        parts.append(f"x'={xp}: errors " + " ".join(f"{e:.2e}" for e in errs) + f" bound ok={bound_ok}")
    verdict(10, "trace operator", ok, "; ".join(parts))
