import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import couette
from frictionstokes import DomainSpec
from frictionstokes.stepping import State, discretize, march_to_steady, run_tresca
from frictionstokes.stress import (
    BoundaryTraceHistory,
    Mollifier,
    StressField,
    analytic_norms,
    boundary_history,
    compute_stress,
    momentum_residual_div_stress,
    regularized_normal_trace,
    trace_operator,
)

BOX = DomainSpec(2, ((0.0, 1.0),), 1.0)


def manufactured():
    row = lambda x: np.stack([x[:, 0] * x[:, 1], 1.0 + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])], 1)  # noqa: E731
    div = lambda x: x[:, 1] + np.sin(np.pi * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
    return StressField(row_fn=row, div_fn=div), row, div


def test_mollifier_slice_integrates_to_one():
    m = Mollifier(0.1)
    x = np.linspace(-0.1, 0.1, 20001)
    pts = np.stack([x, 0 * x], 1)
    assert np.trapezoid(m.value(pts, np.zeros(2)), x) == pytest.approx(1.0, rel=1e-6)


def test_pure_pressure_stress(unit_domain):
    disc = discretize(couette(unit_domain))
    sp_ = disc.spaces
    st0 = State(0.0, np.zeros(sp_.n_velocity), np.ones(sp_.n_pressure))
    sig = compute_stress(st0, sp_, disc.lifting, 0.0, 1.0)
    assert np.allclose(sig.cell_values, -np.eye(2)[None, None], atol=1e-13)


def test_couette_shear_stress(periodic_domain):
    disc = discretize(couette(periodic_domain))
    sp_ = disc.spaces
    st0 = State(0.0, np.zeros(sp_.n_velocity), np.zeros(sp_.n_pressure))
    sig = compute_stress(st0, sp_, disc.lifting, 1.0, 1.0)
    # lifting (1 - y, 0) gives sigma_12 = -1
    assert np.allclose(sig.cell_values[..., 0, 1], -1.0, atol=1e-12)
    assert np.allclose(sig.cell_values[..., 0, 0], 0.0, atol=1e-12)


def test_trace_converges_as_radius_halves():
    field, row, div = manufactured()
    xp = 0.5
    exact = -row(np.array([[xp, 0.0]]))[0, 1]
    errs = [abs(regularized_normal_trace(field, None, Mollifier(r), [xp], domain=BOX) - exact) for r in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


@pytest.mark.parametrize("rho", [0.2, 0.1, 0.05])
def test_trace_continuity_bound(rho):
    field, row, div = manufactured()
    m = Mollifier(rho)
    s_l2, d_l2 = analytic_norms(row, div, BOX)
    val = regularized_normal_trace(field, None, m, [0.5], domain=BOX)
    assert abs(val) <= m.continuity_constant() * (s_l2 + d_l2)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_trace_is_linear(a, b):
    f1, _, _ = manufactured()
    f2 = StressField(row_fn=lambda x: np.stack([np.cos(x[:, 1]), x[:, 0] ** 2], 1), div_fn=lambda x: -np.sin(x[:, 1]))
    m = Mollifier(0.1)
    r1 = regularized_normal_trace(f1, None, m, [0.4], domain=BOX)
    r2 = regularized_normal_trace(f2, None, m, [0.4], domain=BOX)
    comb = StressField(
        row_fn=lambda x: a * f1.row_fn(x) + b * f2.row_fn(x), div_fn=lambda x: a * f1.div_fn(x) + b * f2.div_fn(x)
    )
    r = regularized_normal_trace(comb, None, m, [0.4], domain=BOX)
    assert r == pytest.approx(a * r1 + b * r2, abs=1e-10 * (1 + abs(a) + abs(b)))


def test_constant_row_trace():
    field = StressField(row_fn=lambda x: np.tile([0.3, -2.0], (len(x), 1)), div_fn=lambda x: np.zeros(len(x)))
    assert regularized_normal_trace(field, None, Mollifier(0.1), [0.5], domain=BOX) == pytest.approx(2.0, abs=1e-8)


def test_fe_operator_matches_pointwise_path(periodic_domain):
    sc = couette(periodic_domain, ell=0.5)
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    op = trace_operator(disc)
    st1, st2 = traj.states[-2], traj.states[-1]
    stress = compute_stress(st2, disc.spaces, disc.lifting, 1.0, 1.0)
    div = momentum_residual_div_stress(st1, st2, disc)
    full = op.apply(stress, div)
    for q in (0, len(full) // 2):
        single = regularized_normal_trace(stress, div, op.mollifier, disc.quadrature.xprime[q], disc=disc)
        assert single == pytest.approx(full[q], abs=1e-10)
    assert np.all(np.abs(full) <= op.continuity_constant * 1e6)


def test_steady_state_has_divergence_free_stress(periodic_domain):
    sc = couette(periodic_domain, ell=2.0)
    disc = discretize(sc)
    state, _ = march_to_steady(disc, 0.1, steady_tol=1e-10)
    prev = State(state.t - sc.dt, state.v_tilde.copy(), state.p)
    nxt = State(state.t, state.v_tilde, state.p)
    div = momentum_residual_div_stress(prev, nxt, disc)
    assert np.abs(div).max() <= 1e-12


def test_couette_normal_trace_is_small(periodic_domain):
    sc = couette(periodic_domain, ell=0.5, resolution=8, T=0.125)
    disc = discretize(sc)
    traj = run_tresca(sc, disc=disc)
    hist = boundary_history(disc, traj.states)
    assert hist.values.shape == (len(traj.states), disc.quadrature.size)
    assert np.all(np.isfinite(hist.values)) and np.all(hist.values >= 0)


def test_history_csv_round_trip(tmp_path, rng):
    xp = rng.random((5, 1))
    h = BoundaryTraceHistory(rng.random((4, 5)), np.linspace(0, 0.3, 4), xp)
    path = tmp_path / "h.csv"
    h.to_csv(path)
    back = BoundaryTraceHistory.from_csv(path)
    assert np.array_equal(back.values, h.values) and np.array_equal(back.times, h.times)
    assert np.array_equal(back.xprime, xp)


def test_mollifier_rejects_bad_radius():
    from frictionstokes.errors import UsageError

    with pytest.raises(UsageError):
        Mollifier(0.0)
