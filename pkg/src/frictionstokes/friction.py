"""Regularized friction functional, its gradient and Hessian, and law diagnostics.

Boundary fields live at Gamma0 quadrature points: tangential vectors have
shape (nq, d - 1) (a plain (nq,) array is read as d = 2) and scalar fields
such as the threshold have shape (nq,).
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .functions import evaluate


def _tangential(vt):
    vt = np.asarray(vt, dtype=float)
    return vt[:, None] if vt.ndim == 1 else vt


def _check(vt, ell, weights=None):
    vt = _tangential(vt)
    ell = np.asarray(ell, dtype=float)
    if ell.ndim == 0:
        ell = np.full(vt.shape[0], float(ell))
    if ell.shape != (vt.shape[0],):
        raise UsageError(f"threshold layout {ell.shape} does not match {vt.shape[0]} quadrature points")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (vt.shape[0],):
            raise UsageError(f"weights layout {weights.shape} does not match {vt.shape[0]} quadrature points")
    return vt, ell, weights


def friction_energy(vt, ell, eps, weights):
    """Quadrature of ell * sqrt(eps^2 + |vt|^2) over Gamma0 (eps = 0 allowed)."""
    vt, ell, weights = _check(vt, ell, weights)
    if eps < 0:
        raise UsageError("eps must be nonnegative")
    mag = np.hypot(eps, np.linalg.norm(vt, axis=1))
    return float(np.dot(weights, ell * mag))


def friction_force(vt, ell, eps):
    """Pointwise gradient ell * vt / sqrt(eps^2 + |vt|^2)."""
    vt, ell, _ = _check(vt, ell)
    if not eps > 0:
        raise UsageError("friction force needs eps > 0")
    mag = np.sqrt(eps * eps + np.sum(vt * vt, axis=1))
    return (ell / mag)[:, None] * vt


def friction_jacobian(vt, ell, eps):
    """Pointwise (d-1)x(d-1) blocks ell (I / r - v v^T / r^3), r = sqrt(eps^2 + |v|^2)."""
    vt, ell, _ = _check(vt, ell)
    if not eps > 0:
        raise UsageError("friction jacobian needs eps > 0")
    r2 = eps * eps + np.sum(vt * vt, axis=1)
    r = np.sqrt(r2)
    k = vt.shape[1]
    eye = np.eye(k)[None, :, :]
    return ell[:, None, None] * (eye / r[:, None, None] - vt[:, :, None] * vt[:, None, :] / (r2 * r)[:, None, None])


def complementarity_residual(sigma_t, slip, ell, weights):
    """(infeasibility, alignment) of a traction / slip pair for the exact law.

    infeasibility = max(0, max(|sigma_t| - ell)),
    alignment = L1(Gamma0) norm of sigma_t . slip + ell |slip|.
    """
    sigma_t = _tangential(sigma_t)
    slip, ell, weights = _check(slip, ell, weights)
    if sigma_t.shape != slip.shape:
        raise UsageError("traction and slip layouts differ")
    infeas = max(0.0, float(np.max(np.linalg.norm(sigma_t, axis=1) - ell, initial=-np.inf)))
    align = np.abs(np.sum(sigma_t * slip, axis=1) + ell * np.linalg.norm(slip, axis=1))
    return infeas, float(np.dot(weights, align))


def default_eps(s):
    return 1e-4 * max(abs(s), 1.0)


@dataclass
class ThresholdField:
    """Friction bound at Gamma0 quadrature points (columns) on a time grid (rows)."""

    values: np.ndarray
    time_grid: np.ndarray
    xprime: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.time_grid.size:
            raise UsageError(f"threshold values {self.values.shape} do not match {self.time_grid.size} times")
        if self.time_grid.size > 1 and not np.all(np.diff(self.time_grid) > 0):
            raise UsageError("threshold time grid must be strictly increasing")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise UsageError("threshold values must be finite and nonnegative")

    @classmethod
    def from_profile(cls, fn, xprime, time_grid):
        xprime = np.asarray(xprime, dtype=float)
        time_grid = np.asarray(time_grid, dtype=float)
        vals = np.stack([np.broadcast_to(evaluate(fn, xprime, t), (xprime.shape[0],)) for t in time_grid])
        return cls(vals, time_grid, xprime)

    @classmethod
    def constant(cls, value, xprime, time_grid):
        return cls(np.full((len(time_grid), len(xprime)), float(value)), time_grid, xprime)

    @property
    def n_points(self):
        return self.values.shape[1]

    def at_step(self, n):
        return self.values[n]

    def scaled(self, factor):
        return ThresholdField(self.values * factor, self.time_grid, self.xprime)

    def integral(self, weights):
        """int_0^T int_Gamma0 ell by the boundary rule and the trapezoid rule in time."""
        per_time = self.values @ weights
        if per_time.size == 1:
            return 0.0
        return float(np.trapezoid(per_time, self.time_grid))

    def to_csv(self, path):
        d1 = 0 if self.xprime is None else self.xprime.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "quad_point_id"] + [f"x{k}" for k in range(d1)] + ["value"])
            for n, t in enumerate(self.time_grid):
                for q in range(self.n_points):
                    xs = [] if self.xprime is None else [f"{c:.17g}" for c in self.xprime[q]]
                    w.writerow([f"{t:.17g}", q] + xs + [f"{self.values[n, q]:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        nx = len(head) - 3
        times = sorted({float(r[0]) for r in body})
        tindex = {t: i for i, t in enumerate(times)}
        nq = max(int(r[1]) for r in body) + 1
        vals = np.zeros((len(times), nq))
        xprime = np.zeros((nq, nx)) if nx else None
        for r in body:
            vals[tindex[float(r[0])], int(r[1])] = float(r[-1])
            if nx:
                xprime[int(r[1])] = [float(c) for c in r[2:-1]]
        return cls(vals, np.array(times), xprime)
