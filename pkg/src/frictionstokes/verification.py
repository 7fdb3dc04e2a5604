"""Executable checks: energy budget, friction law residuals, eps and dt studies, Couette oracle."""
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .functions import Builtin
from .friction import ThresholdField, complementarity_residual, friction_force
from .quadrature import barycentric, rule_for_degree
from .stepping import discretize, march_to_steady, run_tresca


@dataclass(frozen=True)
class CouetteSolution:
    regime: str
    wall_speed: float
    shear_stress: float


def couette_oracle(mu, h, s, ell):
    """Steady plane Couette flow under a Tresca wall: stick if mu|s|/h <= ell, else slip at |sigma_t| = ell."""
    shear = mu * abs(s) / h
    if shear <= ell:
        return CouetteSolution("stick", float(s), float(shear))
    return CouetteSolution("slip", float(math.copysign(ell * h / mu, s)), float(ell))


def couette_poiseuille_wall_speed(mu, h, s, ell):
    """Wall speed of the slipping flow in a closed channel whose ends carry the Couette profile.

    Mass conservation pins the flux at s h / 2, so a pressure gradient adds a
    parabolic part: u = u0 (1 - y/h) + c y (h - y) with u0 h / 2 + c h^3 / 6 = s h / 2
    and a wall stress mu (c h - u0 / h) of magnitude ell.
    """
    if mu * abs(s) / h <= ell:
        return float(s)
    sg = math.copysign(1.0, s)
    # mu (u0 / h - c h) = ell sg, u0 + c h^2 / 3 = s
    u0 = (s + ell * sg * h / (3.0 * mu)) / (1.0 + 1.0 / 3.0)
    return float(u0)


# ---------------------------------------------------------------- energy


def l2_squared(mesh, func, t, degree=6):
    """Integral of |func(x, t)|^2 over the mesh by cellwise quadrature."""
    qp, qw = rule_for_degree(mesh.dim, degree)
    lam = barycentric(qp)
    v = mesh.vertices[mesh.cells]
    x = np.einsum("qk,ckd->cqd", lam, v)
    vals = np.asarray(func(x.reshape(-1, mesh.dim), t), dtype=float).reshape(x.shape[0], x.shape[1], -1)
    vol = mesh.cell_volumes()
    fact = math.factorial(mesh.dim)
    return float(np.sum(vol[:, None] * fact * qw[None, :] * np.sum(vals * vals, axis=-1)))


def _time_integral(fn, T):
    if T <= 0:
        return 0.0
    return float(quad(fn, 0.0, T, limit=200, epsabs=1e-14, epsrel=1e-12)[0])


@dataclass
class EnergyBudget:
    alpha: float
    C1_prime: float
    terms: tuple  # the four contributions to C1'
    times: np.ndarray
    bound_curve: np.ndarray  # 2 C1' exp(2 t)
    measured_curve: np.ndarray  # ||v_tilde^n||^2 in L2
    step_ok: list  # per-step discrete energy inequality
    tol: float = 1e-10

    @property
    def bound(self):
        return float(self.bound_curve[-1]) if self.bound_curve.size else 0.0

    @property
    def holds(self):
        return bool(np.max(self.measured_curve, initial=0.0) <= self.bound * (1 + 1e-12) + 1e-300)

    @property
    def steps_hold(self):
        return all(self.step_ok)


def c1_prime(disc, trajectory):
    """The four terms of C1' and their sum."""
    sc = disc.scenario
    ops = disc.ops
    G0 = disc.lifting.G0
    v0 = trajectory.states[0].v_tilde
    T = sc.T
    t1 = 0.5 * ops.norm_mass(v0) ** 2
    if all(_zero_profile(fn) for fn in sc.f):
        t2 = 0.0
    else:
        t2 = 0.5 * _time_integral(lambda t: l2_squared(disc.mesh, sc.body_force, t), T)
    zeta2 = _time_integral(lambda t: float(sc.zeta.value(t)) ** 2, T)
    dzeta2 = _time_integral(lambda t: float(sc.zeta.derivative(t, 1)) ** 2, T)
    t3 = 2.0 * sc.mu**2 / disc.alpha * ops.norm_h1(G0) ** 2 * zeta2
    t4 = 0.5 * ops.norm_mass(G0) ** 2 * dzeta2
    terms = (t1, t2, t3, t4)
    return float(sum(terms)), terms


def _zero_profile(fn):
    return isinstance(fn, Builtin) and fn.kind == "constant" and fn.params["value"] == 0.0


def energy_budget(trajectory, disc, alpha=None, rtol=1e-10):
    """Compare ||v_tilde^n||^2 against 2 C1' exp(2 t_n) and check each step's energy inequality."""
    if alpha is not None:
        disc.alpha = alpha
    C1, terms = c1_prime(disc, trajectory)
    times = trajectory.times
    measured = np.array([disc.ops.norm_mass(s.v_tilde) ** 2 for s in trajectory.states])
    bound = 2.0 * C1 * np.exp(2.0 * times)
    ok = [e.holds(rtol) for e in trajectory.energy]
    return EnergyBudget(disc.alpha, C1, terms, times, bound, measured, ok, rtol)


# ---------------------------------------------------------------- friction law


def wall_fields(disc, state, ell, eps):
    """Slip, discrete traction (minus the friction force) and threshold at Gamma0 points."""
    k = disc.spaces.dim - 1
    slip = disc.spaces.trace_values(state.v_tilde)[:, :k]
    sigma_t = -friction_force(slip, ell, eps)
    return slip, sigma_t


def complementarity_series(trajectory, disc, eps=None):
    """(infeasibility, alignment) of every state after the first."""
    eps = disc.scenario.eps if eps is None else eps
    w = disc.quadrature.weights
    out = []
    for n, st in enumerate(trajectory.states[1:], start=1):
        ell = trajectory.thresholds.at_step(n)
        slip, sig = wall_fields(disc, st, ell, eps)
        out.append(complementarity_residual(sig, slip, ell, w))
    return out


def friction_gap(trajectory, disc, eps=None):
    """(j_eps - j_0, eps * int int ell) with rectangle rule in time on the step grid."""
    eps = disc.scenario.eps if eps is None else eps
    w = disc.quadrature.weights
    k = disc.spaces.dim - 1
    gap = 0.0
    ell_int = 0.0
    for n in range(1, len(trajectory.states)):
        dt = trajectory.states[n].t - trajectory.states[n - 1].t
        ell = trajectory.thresholds.at_step(n)
        r = np.linalg.norm(disc.spaces.trace_values(trajectory.states[n].v_tilde)[:, :k], axis=1)
        gap += dt * float(np.dot(w, ell * (np.hypot(eps, r) - r)))
        ell_int += dt * float(np.dot(w, ell))
    return gap, eps * ell_int


def stick_measure(state, disc, eps):
    k = disc.spaces.dim - 1
    r = np.linalg.norm(disc.spaces.trace_values(state.v_tilde)[:, :k], axis=1)
    return float(np.dot(disc.quadrature.weights, r < 10.0 * eps))


def divergence_residuals(trajectory, disc):
    """max |B v_tilde| / ||v_tilde||_M per step (0 for a zero field)."""
    ops = disc.ops
    Pp = disc.spaces.pressure_prolong
    out = []
    for st in trajectory.states:
        nrm = ops.norm_mass(st.v_tilde)
        res = float(np.abs(Pp.T @ (ops.divergence @ st.v_tilde)).max(initial=0.0))
        out.append(res / nrm if nrm > 0 else res)
    return out


def eps_schedule_to(eps, base=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)):
    """Continuation schedule ending at eps."""
    return tuple(e for e in base if e > eps * (1 + 1e-12)) + (float(eps),)


@dataclass
class EpsRow:
    eps: float
    gap: float
    bound: float
    stick_measure: float
    infeasibility: float
    alignment: float


def eps_convergence_study(scenario, eps_list, ell=None):
    """One run per eps (strictly decreasing): friction gap, its bound and the stick-zone measure."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly decreasing")
    rows = []
    for eps in eps_list:
        sc = scenario.with_changes(eps_schedule=eps_schedule_to(eps))
        disc = discretize(sc)
        traj = run_tresca(sc, ell, disc=disc)
        gap, bound = friction_gap(traj, disc, eps)
        infeas, align = complementarity_series(traj, disc, eps)[-1] if len(traj.states) > 1 else (0.0, 0.0)
        rows.append(EpsRow(eps, gap, bound, stick_measure(traj.final, disc, eps), infeas, align))
    return rows


def empirical_orders(xs, errors):
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return np.log(errors[:-1] / errors[1:]) / np.log(xs[:-1] / xs[1:])


# ---------------------------------------------------------------- time order


@dataclass
class OrderStudy:
    dts: list
    errors: list
    orders: list
    reference_dts: tuple


def order_study(scenario, dt_list, reference_dts=None):
    """Terminal L2 error against a Richardson reference built from two finer steps."""
    dt_list = [float(d) for d in dt_list]
    if reference_dts is None:
        reference_dts = (dt_list[-1] / 2.0, dt_list[-1] / 4.0)
    finals = {}
    disc = None
    for dt in list(dt_list) + list(reference_dts):
        sc = scenario.with_changes(dt=dt)
        disc = discretize(sc) if disc is None else _rebind(disc, sc)
        finals[dt] = run_tresca(sc, disc=disc).final.v_tilde
    a, b = reference_dts
    ratio = a / b
    ref = (ratio * finals[b] - finals[a]) / (ratio - 1.0)
    errors = [disc.ops.norm_mass(finals[dt] - ref) for dt in dt_list]
    return OrderStudy(dt_list, errors, list(empirical_orders(dt_list, errors)), tuple(reference_dts))


def _rebind(disc, scenario):
    """Same mesh and operators, new time step."""
    return dataclasses.replace(disc, scenario=scenario, _solvers={})


# ---------------------------------------------------------------- Couette


@dataclass
class CouetteCheck:
    ell: float
    oracle: CouetteSolution
    wall_speed: float
    shear_stress: float
    speed_error: float
    stress_error: float


def couette_check(scenario, dt=0.05, steady_tol=1e-9, max_steps=2000):
    """March the scenario's data to steady state and compare the wall against the oracle."""
    disc = discretize(scenario)
    state, _ = march_to_steady(disc, dt, steady_tol=steady_tol, max_steps=max_steps)
    ell = float(np.mean(ThresholdField.from_profile(scenario.threshold, disc.quadrature.xprime, [0.0]).at_step(0)))
    s = scenario.wall.bottom_speed()
    oracle = couette_oracle(scenario.mu, scenario.domain.h_min, s, ell)
    w = disc.quadrature.weights
    full = disc.spaces.trace_values(state.v_tilde + disc.lifting.G0)[:, 0]
    speed = float(np.dot(w, full) / w.sum())
    slip, sig = wall_fields(disc, state, np.full(w.size, ell), scenario.eps)
    stress = float(np.dot(w, np.linalg.norm(sig, axis=1)) / w.sum())
    return CouetteCheck(
        ell,
        oracle,
        speed,
        stress,
        float(np.max(np.abs(full - oracle.wall_speed))),
        float(np.max(np.abs(np.linalg.norm(sig, axis=1) - oracle.shear_stress))),
    )


# ---------------------------------------------------------------- report


@dataclass
class ReportEntry:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name} value={self.value:.6e} tol={self.tolerance:.6e} {self.detail}".rstrip()


@dataclass
class VerificationReport:
    """Append-only list of checks, each with the tolerance it was judged against."""

    entries: list = field(default_factory=list)

    def add(self, name, passed, value, tolerance, detail=""):
        entry = ReportEntry(name, bool(passed), float(value), float(tolerance), detail)
        self.entries.append(entry)
        return entry

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def to_text(self):
        return "\n".join(e.line() for e in self.entries) + "\n"


def verify_trajectory(trajectory, disc, report=None):
    """Energy budget, per-step energy inequality, divergence and complementarity checks of one run."""
    report = VerificationReport() if report is None else report
    eb = energy_budget(trajectory, disc)
    peak = float(np.max(eb.measured_curve, initial=0.0))
    report.add("energy_bound", eb.holds, peak, eb.bound, f"C1'={eb.C1_prime:.6e} alpha={eb.alpha:.6e}")
    worst = max((e.lhs - e.rhs) / max(abs(e.lhs), abs(e.rhs), e.kinetic, 1e-300) for e in trajectory.energy) if trajectory.energy else 0.0
    report.add("energy_steps", eb.steps_hold, worst, eb.tol)
    div = max(divergence_residuals(trajectory, disc))
    report.add("divergence", div <= 1e-10, div, 1e-10)
    if len(trajectory.states) > 1:
        infeas, align = complementarity_series(trajectory, disc)[-1]
        ell = float(np.max(trajectory.thresholds.at_step(len(trajectory.states) - 1)))
        report.add("infeasibility", infeas <= 1e-2 * max(ell, 1e-300), infeas, 1e-2 * ell)
        gap, bound = friction_gap(trajectory, disc)
        report.add("friction_gap", 0.0 <= gap <= bound * (1 + 1e-12), gap, bound)
    return report
