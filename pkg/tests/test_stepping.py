import logging
import re

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from conftest import couette
from frictionstokes.errors import DataError, StepError, UsageError
from frictionstokes.fem import WallData
from frictionstokes.friction import ThresholdField
from frictionstokes.stepping import (
    RunConfig,
    discretize,
    forcing_vector,
    initial_state,
    march_to_steady,
    run_tresca,
    step,
)
from frictionstokes.verification import energy_budget


def test_lifting_initial_state_is_zero(periodic_domain):
    disc = discretize(couette(periodic_domain))
    st = initial_state(disc.scenario, disc.spaces, disc.ops, disc.lifting)
    assert not np.any(st.v_tilde) and not np.any(st.p)


def test_initial_state_is_interpolant_of_perturbation(periodic_domain):
    w = lambda x: np.stack([x[:, 1] * (1 - x[:, 1]), 0 * x[:, 0]], 1)  # noqa: E731
    sc0 = couette(periodic_domain)
    disc = discretize(sc0)
    G = disc.lifting.G0
    v0 = lambda x: disc.spaces.as_nodal(G)[0] * 0 + np.stack([1 - x[:, 1], 0 * x[:, 0]], 1) + w(x)  # noqa: E731
    sc = sc0.with_changes(v0=v0)
    st = initial_state(sc, disc.spaces, disc.ops, disc.lifting)
    assert np.allclose(st.v_tilde, disc.spaces.interpolate(w), atol=1e-13)


def test_divergent_initial_velocity_rejected(unit_domain):
    sc = couette(unit_domain).with_changes(v0=lambda x: np.stack([1 - x[:, 1] + x[:, 0], 0 * x[:, 0]], 1))
    disc = discretize(couette(unit_domain))
    with pytest.raises(DataError):
        initial_state(sc, disc.spaces, disc.ops, disc.lifting)


def test_zero_data_gives_zero_solution(unit_domain):
    sc = couette(unit_domain, ell=3.0, T=0.25, wall=WallData("couette", 0.0))
    traj = run_tresca(sc)
    for st in traj.states:
        assert not np.any(st.v_tilde) and not np.any(st.p)


def test_zero_final_time():
    from frictionstokes import DomainSpec, Scenario

    sc = Scenario(domain=DomainSpec(), resolution=3, T=0.0, dt=0.1)
    traj = run_tresca(sc)
    assert len(traj.states) == 1


def test_runs_are_bit_identical(periodic_domain):
    sc = couette(periodic_domain)
    a, b = run_tresca(sc), run_tresca(sc)
    for s, t in zip(a.states, b.states):
        assert np.array_equal(s.v_tilde, t.v_tilde) and np.array_equal(s.p, t.p)


def test_zero_threshold_matches_plain_stokes(unit_domain):
    sc = couette(unit_domain, ell=1.0, T=0.25)
    disc = discretize(sc)
    xp = disc.quadrature.xprime
    traj = run_tresca(sc, ThresholdField.constant(1.0, xp, sc.time_grid()).scaled(0.0), disc=disc)
    # independent monolithic solve of the unregularized Stokes steps
    P, Pp = disc.spaces.prolong, disc.spaces.pressure_prolong
    ops = disc.ops
    M, A = P.T @ ops.mass @ P, P.T @ ops.viscous @ P
    B = Pp.T @ ops.divergence @ P
    m = Pp.T @ ops.mean
    K = (M / sc.dt + A).tocsr()
    big = sp.bmat([[K, B.T, None], [B, None, sp.csr_matrix(m[:, None])], [None, sp.csr_matrix(m[None, :]), None]]).tocsc()
    u = np.zeros(P.shape[1])
    for n, t in enumerate(sc.time_grid()[1:], start=1):
        rhs = np.concatenate([P.T @ forcing_vector(disc, t) + M @ u / sc.dt, np.zeros(B.shape[0] + 1)])
        u = spla.spsolve(big, rhs)[: P.shape[1]]
        assert np.abs(P @ u - traj.states[n].v_tilde).max() <= 1e-9


def test_state_invariants_and_energy(unit_domain):
    sc = couette(unit_domain, ell=0.5, T=0.25)
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    Pp = disc.spaces.pressure_prolong
    for st in traj.states[1:]:
        div = Pp.T @ (disc.ops.divergence @ st.v_tilde)
        assert np.abs(div).max() <= 1e-10 * max(disc.ops.norm_mass(st.v_tilde), 1.0)
        mean = disc.ops.mean @ st.p
        assert abs(mean) <= 1e-12 * max(np.abs(st.p).max(), 1.0)
    assert all(e.holds(1e-10) for e in traj.energy)
    eb = energy_budget(traj, disc)
    assert eb.holds
    assert np.all(np.diff(traj.times) > 0)
    assert len(traj.second_differences) == len(traj.states) - 2


def test_noisy_newton_guess_converges_to_same_trajectory(periodic_domain):
    sc = couette(periodic_domain, T=0.125)
    disc = discretize(sc)
    ref = run_tresca(sc, disc=disc)
    noisy = run_tresca(sc, config=RunConfig(guess_noise=1.0, seed=7), disc=disc)
    for a, b in zip(ref.states, noisy.states):
        assert np.abs(a.v_tilde - b.v_tilde).max() <= 10 * sc.newton_tol * 100


def test_newton_failure_reports_step(periodic_domain):
    sc = couette(periodic_domain, newton_max_iter=1, newton_tol=1e-15, eps_schedule=(1e-5,))
    with pytest.raises(StepError) as info:
        run_tresca(sc)
    assert info.value.step_index == 1
    assert len(info.value.residuals) >= 1


def test_step_past_final_time(periodic_domain):
    sc = couette(periodic_domain, T=0.125, dt=0.125)
    disc = discretize(sc)
    st0 = initial_state(sc, disc.spaces, disc.ops, disc.lifting)
    ell = np.full(disc.quadrature.size, 0.5)
    st1 = step(st0, disc, ell)
    assert st1.t == pytest.approx(0.125)
    with pytest.raises(UsageError):
        step(st1, disc, ell)


def test_progress_log_lines(periodic_domain, caplog):
    sc = couette(periodic_domain, T=0.125)
    with caplog.at_level(logging.INFO, logger="frictionstokes.stepping"):
        run_tresca(sc)
    pat = re.compile(r"^step=\d+ t=\S+ newton_iters=\d+ resid=\S+ energy=\S+$")
    lines = [r.getMessage() for r in caplog.records if r.name == "frictionstokes.stepping"]
    assert len(lines) == 2 and all(pat.match(m) for m in lines)


@pytest.mark.parametrize("ell,speed", [(2.0, 1.0), (0.5, 0.5)])
def test_couette_steady_branches_coarse(periodic_domain, ell, speed):
    sc = couette(periodic_domain, ell=ell, eps_schedule=(1e-2, 1e-3, 1e-4, 1e-5))
    disc = discretize(sc)
    state, _ = march_to_steady(disc, 0.1, steady_tol=1e-8)
    v = disc.spaces.trace_values(state.v_tilde + disc.lifting.G0)[:, 0]
    assert np.abs(v - speed).max() <= 1e-4
