"""Backward Euler with Newton for the regularized Tresca problem.

The unknown is the homogeneous velocity v_tilde = v - G0 zeta(t), which
vanishes on Gamma1 and GammaL and has zero normal component on Gamma0.  On
Gamma0 its tangential trace is exactly the slip v_t - s zeta, the argument
of the friction term.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DataError, StepError, UsageError
from .fem import SaddleSolver, assemble_operators, build_lifting, build_spaces, korn_coercivity_estimate, load_vector
from .friction import ThresholdField, friction_force, friction_jacobian
from .mesh import build_mesh

log = logging.getLogger("frictionstokes.stepping")


@dataclass
class Discretization:
    """Mesh, spaces, operators, lifting and Korn constant for one scenario."""

    scenario: object
    mesh: object
    spaces: object
    ops: object
    lifting: object
    alpha: float
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def quadrature(self):
        return self.spaces.gamma0

    def solver(self, dt):
        key = float(dt)
        if key not in self._solvers:
            self._solvers[key] = StepSolver(self, key)
        return self._solvers[key]


def discretize(scenario, alpha=None):
    mesh = build_mesh(scenario.domain, scenario.resolution)
    spaces = build_spaces(mesh)
    ops = assemble_operators(spaces, scenario.mu)
    lifting = build_lifting(spaces, scenario.wall, ops, scenario.domain)
    if alpha is None:
        alpha = korn_coercivity_estimate(ops)
    return Discretization(scenario, mesh, spaces, ops, lifting, float(alpha))


@dataclass
class State:
    t: float
    v_tilde: np.ndarray
    p: np.ndarray
    multiplier: float = 0.0
    newton_iters: int = 0
    residual: float = 0.0

    def velocity(self, lifting, zeta):
        """Full velocity v = v_tilde + G0 zeta(t)."""
        return self.v_tilde + lifting.G0 * float(zeta.value(self.t))


@dataclass
class StepEnergy:
    """Terms of the per-step energy inequality lhs <= rhs."""

    kinetic: float
    dissipation: float
    lhs: float
    rhs: float

    def holds(self, rtol=1e-10):
        scale = max(abs(self.lhs), abs(self.rhs), self.kinetic, 1e-300)
        return self.lhs <= self.rhs + rtol * scale


@dataclass
class Trajectory:
    states: list
    scenario_hash: str
    thresholds: ThresholdField = None
    energy: list = field(default_factory=list)
    second_differences: list = field(default_factory=list)
    boundary_history: object = None

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def final(self):
        return self.states[-1]


def _zeta_terms(scenario, t):
    z = scenario.zeta
    return float(z.value(t)), float(z.derivative(t, 1))


def forcing_vector(disc, t):
    """(f, phi) - zeta a(G0, phi) - zeta' (G0, phi) on the full velocity space."""
    sc = disc.scenario
    ops = disc.ops
    z, dz = _zeta_terms(sc, t)
    out = load_vector(ops, sc.body_force, t)
    G0 = disc.lifting.G0
    if z != 0.0:
        out -= z * (ops.viscous @ G0)
    if dz != 0.0:
        out -= dz * (ops.mass @ G0)
    return out


class StepSolver:
    """Reduced matrices and the Newton loop for a fixed step size.

    Unknowns are the independent velocity dofs, the independent pressure
    dofs and the zero-mean multiplier.
    """

    def __init__(self, disc, dt):
        self.disc = disc
        self.dt = dt
        ops = disc.ops
        spaces = disc.spaces
        P = spaces.prolong
        self.P = P
        self.M = ops.free_block(ops.mass)
        self.A = ops.free_block(ops.viscous)
        self.K0 = (self.M / dt + self.A).tocsr()
        self.B = ops.reduced_divergence()
        self.T = (ops.trace @ P).tocsr()
        self.w = ops.boundary_weights
        self.k = spaces.dim - 1
        self.nu = P.shape[1]
        self.np = self.B.shape[0]
        self.m = spaces.pressure_prolong.T @ ops.mean
        self.gamma = np.unique(self.T.tocoo().col)
        self.Tg = self.T[:, self.gamma].toarray()
        self.saddle = SaddleSolver(self.K0, self.B, self.m, self.gamma)
        self._force_cache = {}

    def forcing(self, t):
        """Reduced forcing vector at time t (cached for the latest t)."""
        key = float(t)
        if key not in self._force_cache:
            self._force_cache = {key: self.P.T @ forcing_vector(self.disc, t)}
        return self._force_cache[key]

    def split(self, z):
        return z[: self.nu], z[self.nu : self.nu + self.np], z[-1]

    def residual(self, z, rhs, ell, eps):
        u, p, lam = self.split(z)
        vt = (self.T @ u).reshape(-1, self.k)
        fr = (self.w[:, None] * friction_force(vt, ell, eps)).ravel()
        ru = self.K0 @ u + self.T.T @ fr + self.B.T @ p - rhs
        rp = self.B @ u + self.m * lam
        rl = np.array([self.m @ p])
        return np.concatenate([ru, rp, rl])

    def tangent(self, z, ell, eps):
        """Friction tangent on the Gamma0 dofs as a dense block."""
        u = z[: self.nu]
        vt = (self.T @ u).reshape(-1, self.k)
        blocks = self.w[:, None, None] * friction_jacobian(vt, ell, eps)
        if self.k == 1:
            return self.Tg.T @ (blocks[:, 0, 0][:, None] * self.Tg)
        J = sla.block_diag(*blocks)
        return self.Tg.T @ J @ self.Tg

    def newton(self, z, rhs, ell, eps, tol, max_iter, step_index=None):
        r = self.residual(z, rhs, ell, eps)
        rn = np.linalg.norm(r)
        history = [rn]
        its = 0
        while rn > tol:
            if its >= max_iter:
                raise StepError(
                    f"Newton did not converge in {max_iter} iterations (eps={eps:g}, residual={rn:.3e})",
                    residuals=history,
                    step_index=step_index,
                )
            ru, rp, rl = self.split(r)
            try:
                du, dp, dl = self.saddle.solve(-ru, -rp, -rl, self.tangent(z, ell, eps))
            except np.linalg.LinAlgError as exc:
                raise StepError(f"singular Newton system: {exc}", history, step_index) from exc
            dz = np.concatenate([du, dp, [dl]])
            a = 1.0
            while True:
                zt = z + a * dz
                rt = self.residual(zt, rhs, ell, eps)
                rtn = np.linalg.norm(rt)
                if rtn < rn or a < 1e-10:
                    break
                a *= 0.5
            z, r, rn = zt, rt, rtn
            its += 1
            history.append(rn)
        return z, its, rn

    def pack(self, state):
        sp_ = self.disc.spaces
        return np.concatenate([sp_.reduce(state.v_tilde), sp_.reduce_pressure(state.p), [state.multiplier]])

    def solve(self, state, t_next, ell, eps_schedule, guess=None, step_index=None):
        sc = self.disc.scenario
        sp_ = self.disc.spaces
        u_old = sp_.reduce(state.v_tilde)
        rhs = self.forcing(t_next) + self.M @ u_old / self.dt
        tol = sc.newton_tol * (1.0 + np.linalg.norm(rhs))
        z = self.pack(state) if guess is None else np.array(guess, dtype=float)
        total = 0
        rn = 0.0
        for eps in eps_schedule:
            z, its, rn = self.newton(z, rhs, ell, eps, tol, sc.newton_max_iter, step_index)
            total += its
        u, p, lam = self.split(z)
        return State(
            t=float(t_next),
            v_tilde=sp_.expand(u),
            p=sp_.expand_pressure(p),
            multiplier=float(lam),
            newton_iters=total,
            residual=float(rn),
        )


def initial_state(scenario, spaces, ops, lifting):
    """State at t = 0 holding the interpolant of v0 - G0."""
    if scenario.v0 == "lifting":
        v = np.zeros(spaces.n_velocity)
    else:
        v = spaces.interpolate(scenario.v0) - lifting.G0
        if scenario.compatibility:
            _check_initial(scenario, spaces, ops, lifting, v)
        v = spaces.admissible(v)
    return State(t=0.0, v_tilde=v, p=np.zeros(spaces.n_pressure))


def _check_initial(scenario, spaces, ops, lifting, v):
    full = v + lifting.G0
    scale = max(np.abs(full).max(), 1e-300)
    div = np.abs(ops.divergence @ full).max() / np.abs(ops.divergence).sum(axis=1).max()
    if div > 1e-8 * scale:
        raise DataError(f"initial velocity is not divergence free (discrete divergence {div:.3e})")
    mismatch = np.abs(v[spaces.constrained]).max(initial=0.0)
    if mismatch > 1e-8 * scale:
        raise DataError(f"initial velocity does not match the wall data (mismatch {mismatch:.3e})")
    if scenario.regularity:
        d = spaces.dim
        h = 1e-6 * scenario.domain.h_min
        pts = spaces.gamma0.points.copy()
        up = pts.copy()
        up[:, -1] += h
        dv = (np.asarray(scenario.v0(up)) - np.asarray(scenario.v0(pts))) / h
        if np.abs(dv).max() > 1e-6 * max(1.0, scale):
            raise DataError("initial velocity must satisfy d v0 / d x_d = 0 on Gamma0")


def step(state, disc, ell_values, eps=None, dt=None, guess=None):
    """One backward Euler step from ``state``; ``eps`` is a value or schedule."""
    sc = disc.scenario
    dt = sc.dt if dt is None else dt
    if state.t + dt > sc.T + 1e-12:
        raise UsageError(f"step would pass the final time ({state.t} + {dt} > {sc.T})")
    schedule = sc.eps_schedule if eps is None else np.atleast_1d(eps)
    return disc.solver(dt).solve(state, state.t + dt, np.asarray(ell_values, dtype=float), schedule, guess)


def step_energy(disc, solver, old, new):
    ops = disc.ops
    u, uo = new.v_tilde, old.v_tilde
    kin_new = 0.5 * (u @ (ops.mass @ u))
    kin_old = 0.5 * (uo @ (ops.mass @ uo))
    diss = solver.dt * disc.alpha * ops.norm_h1(u) ** 2
    rhs = solver.dt * float(solver.forcing(new.t) @ disc.spaces.reduce(u))
    return StepEnergy(kinetic=kin_new, dissipation=diss, lhs=kin_new - kin_old + diss, rhs=rhs)


@dataclass
class RunConfig:
    """Options of a Tresca run.

    ``start`` resumes from a stored prefix of states; ``stop_step`` ends the
    run early; ``guess_noise`` perturbs every Newton initial guess.
    """

    start: list = None
    stop_step: int = None
    guess_noise: float = 0.0
    seed: int = 0
    log_every: int = 1


def run_tresca(scenario, ell=None, config=None, disc=None):
    """March [0, T] with threshold ``ell`` (defaults to the scenario threshold)."""
    config = RunConfig() if config is None else config
    disc = discretize(scenario) if disc is None else disc
    grid = scenario.time_grid()
    if ell is None:
        ell = ThresholdField.from_profile(scenario.threshold, disc.quadrature.xprime, grid)
    if ell.values.shape[0] != grid.size:
        raise UsageError(f"threshold covers {ell.values.shape[0]} times, run needs {grid.size}")
    solver = disc.solver(scenario.dt)
    rng = np.random.default_rng(config.seed) if config.guess_noise else None
    if config.start:
        states = list(config.start)
    else:
        states = [initial_state(scenario, disc.spaces, disc.ops, disc.lifting)]
    traj = Trajectory(states=states, scenario_hash=scenario.digest(), thresholds=ell)
    stop = scenario.n_steps if config.stop_step is None else config.stop_step
    for n in range(len(states) - 1, stop):
        old = states[-1]
        guess = None
        if rng is not None:
            base = solver.pack(old)
            guess = base + config.guess_noise * rng.standard_normal(base.size)
        try:
            new = solver.solve(old, grid[n + 1], ell.at_step(n + 1), scenario.eps_schedule, guess, n + 1)
        except StepError as exc:
            exc.step_index = n + 1
            raise
        states.append(new)
        e = step_energy(disc, solver, old, new)
        traj.energy.append(e)
        if len(states) >= 3:
            d2 = (states[-1].v_tilde - 2 * states[-2].v_tilde + states[-3].v_tilde) / scenario.dt**2
            traj.second_differences.append(disc.ops.norm_mass(d2))
        if config.log_every and (n + 1) % config.log_every == 0:
            log.info(progress_line(n + 1, new, e.kinetic))
    return traj


def progress_line(n, state, energy):
    return f"step={n} t={state.t:.17g} newton_iters={state.newton_iters} resid={state.residual:.6e} energy={energy:.17g}"


def march_to_steady(disc, dt, steady_tol=1e-8, max_steps=500, eps=None):
    """Time-march with frozen data at t = 0 until |v^{n+1} - v^n|_inf / dt < steady_tol.

    Used for the steady Couette limit; the threshold is the scenario profile
    at t = 0 and zeta is held at its initial value.
    """
    sc = disc.scenario
    solver = disc.solver(dt)
    ell = ThresholdField.from_profile(sc.threshold, disc.quadrature.xprime, [0.0]).at_step(0)
    state = initial_state(sc, disc.spaces, disc.ops, disc.lifting)
    schedule = sc.eps_schedule if eps is None else np.atleast_1d(eps)
    solver._force_cache = {}
    # frozen data: the forcing at t = 0 is used for every step
    frozen = solver.P.T @ forcing_vector(disc, 0.0)
    for n in range(max_steps):
        solver._force_cache = {float(state.t + dt): frozen}
        new = solver.solve(state, state.t + dt, ell, schedule)
        change = np.abs(new.v_tilde - state.v_tilde).max() / dt
        state = new
        if change < steady_tol:
            solver._force_cache = {}
            return state, n + 1
    solver._force_cache = {}
    raise StepError(f"no steady state within {max_steps} steps", step_index=max_steps)
