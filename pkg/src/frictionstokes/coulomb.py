"""Windowed successive approximation for the history-dependent Coulomb threshold.

The threshold is

    ell(x', t) = F0(x', t) + Fsigma(x', t) * int_0^t S(t - s) |R(sigma^d)(x', s)| ds,

and each iterate requires one Tresca solve.  Time is split into windows
short enough for the threshold map to contract; inside a window the
iteration restarts from the converged state at the window start.
"""
import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import NonContractionError, UsageError
from .friction import ThresholdField
from .functions import evaluate
from .stepping import RunConfig, Trajectory, discretize, initial_state, run_tresca
from .stress import BoundaryTraceHistory, boundary_history, trace_operator

log = logging.getLogger("frictionstokes.coulomb")


def history_integral(history_values, times, kernel, n):
    """Composite trapezoid of int_0^{t_n} S(t_n - s) |R|(s) ds at every point, shape (nq,)."""
    if n == 0:
        return np.zeros(history_values.shape[1])
    rows = history_values[: n + 1]
    missing = np.flatnonzero(np.any(np.isnan(rows), axis=1))
    if missing.size:
        raise UsageError(f"history has no record for step {int(missing[0])}")
    t = times[: n + 1]
    h = np.diff(t)
    w = np.zeros(n + 1)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    s = kernel.value(times[n] - t)
    return (w * s) @ rows


def update_threshold(history, spec, time_grid, xprime=None, steps=None):
    """New threshold F0 + Fsigma * (trapezoid history integral) on ``time_grid``.

    ``steps`` restricts the evaluation to those grid indices; the other rows
    are returned as F0.
    """
    time_grid = np.asarray(time_grid, dtype=float)
    xprime = history.xprime if xprime is None else xprime
    values = np.asarray(history.values, dtype=float)
    nq = values.shape[1]
    out = np.zeros((time_grid.size, nq))
    steps = range(time_grid.size) if steps is None else steps
    for n in range(time_grid.size):
        f0 = np.broadcast_to(evaluate(spec.F0, xprime, time_grid[n]), (nq,))
        out[n] = f0
    for n in steps:
        if n >= values.shape[0]:
            raise UsageError(f"history has no record for step {n}")
        fs = np.broadcast_to(evaluate(spec.Fsigma, xprime, time_grid[n]), (nq,))
        out[n] = out[n] + fs * history_integral(values, time_grid, spec.S, n)
    return ThresholdField(out, time_grid, xprime)


def admissible(dtau, C_prime, p):
    return np.sqrt(dtau) + dtau ** ((p - 2.0) / (2.0 * p)) <= 1.0 / (2.0 * C_prime) * (1 + 1e-12)


def window_length(C_prime, p_exponent, remaining=None):
    """Window length from the contraction estimate C' (fallback formulas)."""
    if not C_prime > 0 or not p_exponent > 2:
        raise UsageError("window length needs C' > 0 and p > 2")
    a = 1.0 / (4.0 * C_prime)
    dtau = a * a if a >= 1.0 else a ** (2.0 * p_exponent / (p_exponent - 2.0))
    if remaining is not None:
        dtau = min(dtau, remaining)
    return dtau


def w12_norm(values, times, weights):
    """Discrete W^{1,2}(0, t; L2(Gamma0)) norm of a threshold slab (rows = times)."""
    values = np.asarray(values, dtype=float)
    sq = (values * values) @ weights
    if values.shape[0] == 1:
        return float(np.sqrt(sq[0]))
    h = np.diff(times)
    val = np.sum(0.5 * h * (sq[:-1] + sq[1:]))
    der = np.diff(values, axis=0) / h[:, None]
    dsq = (der * der) @ weights
    return float(np.sqrt(val + np.sum(h * dsq)))


@dataclass
class WindowRecord:
    start: int
    end: int
    iterations: int
    converged: bool
    halvings: int


@dataclass
class IterationTrace:
    """Raw increments and ratios of the threshold iteration, window by window."""

    rows: list = field(default_factory=list)  # (window, iteration, increment, ratio)
    windows: list = field(default_factory=list)
    C_prime: float = None
    schedule: list = field(default_factory=list)  # window start/end times

    def record(self, window, iteration, increment):
        prev = [r for r in self.rows if r[0] == window]
        ratio = increment / prev[-1][2] if prev and prev[-1][2] > 0 else float("nan")
        self.rows.append((window, iteration, increment, ratio))
        return ratio

    def increments(self, window):
        return [r[2] for r in self.rows if r[0] == window]

    def ratios(self, window):
        return [r[3] for r in self.rows if r[0] == window][1:]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window", "iteration", "increment_norm", "ratio"])
            for win, it, inc, ratio in self.rows:
                w.writerow([win, it, f"{inc:.17g}", f"{ratio:.17g}"])

    def to_dict(self):
        return {
            "rows": [list(r) for r in self.rows],
            "windows": [[w.start, w.end, w.iterations, w.converged, w.halvings] for w in self.windows],
            "C_prime": self.C_prime,
            "schedule": [list(s) for s in self.schedule],
        }

    @classmethod
    def from_dict(cls, data):
        tr = cls(
            rows=[tuple(r) for r in data["rows"]],
            windows=[WindowRecord(*w) for w in data["windows"]],
            C_prime=data["C_prime"],
            schedule=[tuple(s) for s in data["schedule"]],
        )
        return tr


@dataclass
class CoulombConfig:
    """Driver options: checkpoint file, resume flag, threshold dumps, early stop."""

    checkpoint: str = None
    resume: bool = False
    dump_thresholds: str = None
    stop_after_windows: int = None
    stall_limit: int = 3


def _frozen_extension(spec, xprime, grid, history_values, a, base):
    """Threshold beyond t_a with the history integral frozen at t_a."""
    out = base.copy()
    nq = out.shape[1]
    q = history_integral(history_values, grid, spec.S, a)
    fs = np.broadcast_to(evaluate(spec.Fsigma, xprime, grid[a]), (nq,))
    for n in range(a + 1, grid.size):
        out[n] = np.broadcast_to(evaluate(spec.F0, xprime, grid[n]), (nq,)) + fs * q
    return out


def solve_coulomb(scenario, config=None, disc=None):
    """Windowed fixed point for the non-local threshold; returns (Trajectory, IterationTrace)."""
    spec = scenario.coulomb
    if spec is None:
        raise UsageError("scenario has no Coulomb friction section")
    config = CoulombConfig() if config is None else config
    disc = discretize(scenario) if disc is None else disc
    grid = scenario.time_grid()
    N = scenario.n_steps
    quad = disc.quadrature
    xprime = quad.xprime
    nq = quad.size
    spec.check(xprime, scenario.T)
    op = trace_operator(disc)
    digest = scenario.digest()

    if config.resume and config.checkpoint and os.path.exists(config.checkpoint):
        data = load_checkpoint(config.checkpoint, digest)
        states = data["states"]
        energy = data["energy"]
        hist = np.full((N + 1, nq), np.nan)
        hist[: len(data["history"])] = data["history"]
        ell_conv = np.zeros((N + 1, nq))
        ell_conv[: len(data["threshold"])] = data["threshold"]
        a = data["tau_step"]
        L = data["window_steps"]
        halvings = data["halvings"]
        trace = IterationTrace.from_dict(data["trace"])
        window = data["window"]
    else:
        states = [initial_state(scenario, disc.spaces, disc.ops, disc.lifting)]
        energy = []
        hist = np.full((N + 1, nq), np.nan)
        ell_conv = np.zeros((N + 1, nq))
        ell_conv[0] = np.broadcast_to(evaluate(spec.F0, xprime, 0.0), (nq,))
        a = 0
        if spec.window is not None:
            dtau = min(spec.window, scenario.T)
        else:
            dtau = window_length(spec.C_prime, spec.p_exponent, remaining=scenario.T)
        L = max(1, int(np.floor(dtau / scenario.dt + 1e-9)))
        halvings = 0
        trace = IterationTrace(C_prime=spec.C_prime)
        window = 0

    done_windows = 0
    while a < N:
        b = min(a + L, N)
        ell = _frozen_extension(spec, xprime, grid, hist, a, ell_conv) if a > 0 else _first_guess(spec, xprime, grid)
        ell[: a + 1] = ell_conv[: a + 1]
        converged = False
        stall = 0
        prev_inc = np.inf
        k = 0
        while k < spec.max_iter:
            field_k = ThresholdField(ell, grid, xprime)
            run = run_tresca(scenario, field_k, RunConfig(start=states[: a + 1], stop_step=b), disc)
            steps = list(range(a + 1, b + 1)) + ([0] if a == 0 else [])
            trial = boundary_history(disc, run.states, op, steps=steps, base=_as_history(hist, grid, xprime))
            upd = update_threshold(trial, spec, grid[: b + 1], xprime, steps=range(a + 1, b + 1))
            new = ell.copy()
            new[a + 1 : b + 1] = upd.values[a + 1 : b + 1]
            inc = w12_norm(new[: b + 1] - ell[: b + 1], grid[: b + 1], quad.weights)
            size = w12_norm(ell[: b + 1], grid[: b + 1], quad.weights)
            k += 1
            ratio = trace.record(window, k, inc)
            log.info(f"window={window} iteration={k} increment={inc:.6e} ratio={ratio:.6e}")
            if config.dump_thresholds:
                _dump(config.dump_thresholds, window, k, ThresholdField(new[: b + 1], grid[: b + 1], xprime))
            if inc <= spec.tol * (1.0 + size):
                converged = True
                break
            stall = stall + 1 if inc >= prev_inc else 0
            prev_inc = inc
            if stall >= config.stall_limit:
                break
            ell = new
        if not converged:
            trace.windows.append(WindowRecord(a, b, k, False, halvings))
            if halvings >= spec.max_halvings or L == 1:
                raise NonContractionError(
                    f"threshold iteration does not contract on window [{grid[a]}, {grid[b]}]", trace=trace
                )
            halvings += 1
            L = max(1, L // 2)
            window += 1
            continue
        states = run.states
        energy = energy[:a] + run.energy
        hist[: b + 1] = trial.values[: b + 1]
        ell_conv[: b + 1] = ell[: b + 1]
        trace.windows.append(WindowRecord(a, b, k, True, halvings))
        trace.schedule.append((float(grid[a]), float(grid[b])))
        a = b
        window += 1
        done_windows += 1
        if config.checkpoint:
            save_checkpoint(
                config.checkpoint,
                digest,
                {
                    "states": states,
                    "energy": energy,
                    "history": hist[: b + 1],
                    "threshold": ell_conv[: b + 1],
                    "tau_step": a,
                    "window_steps": L,
                    "halvings": halvings,
                    "window": window,
                    "trace": trace.to_dict(),
                },
            )
        if config.stop_after_windows is not None and done_windows >= config.stop_after_windows and a < N:
            break

    if N == 0:
        hist = np.zeros((1, nq))
    traj = Trajectory(
        states=states,
        scenario_hash=digest,
        thresholds=ThresholdField(ell_conv[: len(states)], grid[: len(states)], xprime),
        energy=energy,
    )
    traj.boundary_history = BoundaryTraceHistory(hist[: len(states)], grid[: len(states)], xprime.copy())
    return traj, trace


def _first_guess(spec, xprime, grid):
    nq = xprime.shape[0]
    return np.stack([np.broadcast_to(evaluate(spec.F0, xprime, t), (nq,)) for t in grid]).astype(float)


def _as_history(hist, grid, xprime):
    return BoundaryTraceHistory(hist.copy(), grid, xprime)


def _dump(directory, window, iteration, field_):
    os.makedirs(directory, exist_ok=True)
    field_.to_csv(os.path.join(directory, f"threshold_w{window:03d}_k{iteration:03d}.csv"))


def self_consistency_residual(traj, spec, disc):
    """W^{1,2} distance between the final threshold and the update of the final history."""
    grid = traj.thresholds.time_grid
    upd = update_threshold(traj.boundary_history, spec, grid, traj.thresholds.xprime)
    diff = traj.thresholds.values - upd.values
    w = disc.quadrature.weights
    return w12_norm(diff, grid, w), w12_norm(traj.thresholds.values, grid, w)
