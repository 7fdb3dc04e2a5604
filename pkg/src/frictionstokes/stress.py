"""Stress recovery and the mollified normal trace on Gamma0.

The mollified trace of a stress row s (the row sigma^d = (sigma_dj)_j) at a
boundary point x' is

    R(s)(x') = int_Omega div(s) f_x' dx + int_Omega s . grad f_x' dx,

with f_x' a smooth bump centred at (x', 0).  By Green's formula this is the
boundary pairing of s . n with f_x', and since n = (0, ..., -1) on Gamma0 it
approximates -sigma_dd, i.e. minus the normal stress.
"""
import csv
import itertools
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.special import roots_legendre

from .errors import UsageError
from .fem import barycentric_gradients, load_vector, p2_gradients, p2_values
from .functions import Builtin
from .quadrature import barycentric, composite_rule


@dataclass
class StressField:
    """Cellwise linear stress tensor, stored at the cell vertices.

    ``cell_values`` has shape (nc, d+1, d, d).  An analytic field may be
    given instead through ``row_fn(x) -> (n, d)`` (the row sigma^d) and
    ``div_fn(x) -> (n,)`` (its divergence); this is used for manufactured
    solutions.
    """

    cell_values: np.ndarray = None
    mesh: object = None
    row_fn: object = None
    div_fn: object = None

    @property
    def analytic(self):
        return self.row_fn is not None

    def row(self, k=None):
        """Values of row k (default the last) at cell vertices, (nc, d+1, d)."""
        d = self.cell_values.shape[-1]
        k = d - 1 if k is None else k
        return self.cell_values[:, :, k, :]

    def evaluate(self, cells, lam):
        """Full tensors at points given by owning cell and barycentrics."""
        return np.einsum("qk,qkij->qij", lam, self.cell_values[cells])

    def scaled(self, a):
        if self.analytic:
            return StressField(
                row_fn=lambda x, f=self.row_fn: a * f(x), div_fn=lambda x, g=self.div_fn: a * g(x), mesh=self.mesh
            )
        return StressField(cell_values=a * self.cell_values, mesh=self.mesh)


def _strain_at_vertices(spaces, v):
    mesh = spaces.mesh
    d = mesh.dim
    grads, _ = barycentric_gradients(mesh.vertices, mesh.cells)
    lam = np.eye(d + 1)
    dN = p2_gradients(lam, grads)  # (nc, d+1 points, nb, d)
    nodal = spaces.as_nodal(v)[spaces.cell_nodes]  # (nc, nb, d)
    grad_v = np.einsum("cqbj,cbi->cqij", dN, nodal)  # d v_i / d x_j
    return 0.5 * (grad_v + np.swapaxes(grad_v, -1, -2))


def compute_stress(state, spaces, lifting, zeta_t, mu):
    """sigma = -p Id + 2 mu D(v_tilde + G0 zeta(t)) as a cellwise linear field."""
    v = state.v_tilde + lifting.G0 * float(zeta_t)
    D = _strain_at_vertices(spaces, v)
    p = np.asarray(state.p)[spaces.mesh.cells]  # (nc, d+1)
    d = spaces.dim
    sigma = 2.0 * mu * D
    sigma -= p[:, :, None, None] * np.eye(d)[None, None]
    return StressField(cell_values=sigma, mesh=spaces.mesh)


def momentum_residual_div_stress(state_prev, state_next, disc):
    """div sigma = (v_tilde^{n+1} - v_tilde^n) / dt - f + G0 zeta' as P2 coefficients (n_nodes, d).

    Body force and zeta' are taken at the later time; f is L2-projected.
    """
    sc = disc.scenario
    dt = state_next.t - state_prev.t
    if not dt > 0 or abs(dt - sc.dt) > 1e-9 * sc.dt:
        raise UsageError(f"states at t={state_prev.t} and t={state_next.t} are not consecutive")
    return _div_stress(disc, state_prev.v_tilde, state_next.v_tilde, dt, state_next.t)


def _div_stress(disc, v_prev, v_next, dt, t):
    sc = disc.scenario
    ops = disc.ops
    out = (v_next - v_prev) / dt
    out = out + disc.lifting.G0 * float(sc.zeta.derivative(t, 1))
    if any(not _is_zero(fn) for fn in sc.f):
        out = out - ops.project(load_vector(ops, sc.body_force, t))
    return disc.spaces.as_nodal(out)


def _is_zero(fn):
    return isinstance(fn, Builtin) and fn.kind == "constant" and fn.params["value"] == 0.0


@lru_cache(maxsize=None)
def _bump_integrals(dim):
    """Boundary-slice integral of exp(-1/(1-|r|^2)) over the unit ball of R^{dim-1}."""
    g = lambda t: np.exp(-1.0 / (1.0 - t * t)) if abs(t) < 1 else 0.0  # noqa: E731
    if dim == 2:
        return 2.0 * quad(g, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return 2.0 * np.pi * quad(lambda t: g(t) * t, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)[0]


class Mollifier:
    """Radial bump c exp(-1 / (1 - |r / rho|^2)) centred on a boundary point.

    The constant c makes the restriction to the boundary hyperplane integrate
    to one, so pairing with it averages a boundary trace.
    """

    def __init__(self, rho, dim=2):
        if not rho > 0:
            raise UsageError("mollifier radius must be positive")
        self.rho = float(rho)
        self.dim = dim
        self.c = 1.0 / (_bump_integrals(dim) * self.rho ** (dim - 1))

    def profile(self, r):
        q2 = (np.asarray(r, dtype=float) / self.rho) ** 2
        out = np.zeros_like(q2)
        inside = q2 < 1.0
        out[inside] = self.c * np.exp(-1.0 / (1.0 - q2[inside]))
        return out

    def value(self, x, center):
        r = np.linalg.norm(np.asarray(x) - center, axis=-1)
        return self.profile(r)

    def gradient(self, x, center):
        dx = np.asarray(x, dtype=float) - center
        q2 = np.sum(dx * dx, axis=-1) / self.rho**2
        out = np.zeros_like(dx)
        inside = q2 < 1.0
        f = self.c * np.exp(-1.0 / (1.0 - q2[inside]))
        out[inside] = (-2.0 * f / (self.rho**2 * (1.0 - q2[inside]) ** 2))[:, None] * dx[inside]
        return out

    def hessian(self, x, center):
        dx = np.asarray(x, dtype=float) - center
        d = dx.shape[-1]
        rho2 = self.rho**2
        q2 = np.sum(dx * dx, axis=-1) / rho2
        out = np.zeros(dx.shape + (d,))
        inside = q2 < 1.0
        u = 1.0 - q2[inside]
        f = self.c * np.exp(-1.0 / u)
        a = -2.0 * f / (rho2 * u**2)  # grad f = a dx
        # grad a = a' dx with a' = d a / d(q2) * 2 / rho2
        dadq = -2.0 / rho2 * (f * (-1.0 / u**2) / u**2 + f * 2.0 / u**3)
        da = (dadq * 2.0 / rho2)[:, None] * dx[inside]
        xi = dx[inside]
        out[inside] = a[:, None, None] * np.eye(d)[None] + xi[:, :, None] * da[:, None, :]
        return out

    def continuity_constant(self):
        """C_R with |R(s)| <= C_R (||s||_L2 + ||div s||_L2) for supports inside the channel."""
        center = np.zeros(self.dim)
        x, w = _half_ball_rule(self, center, self.dim)
        f2 = np.sum(w * self.value(x, center) ** 2)
        g2 = np.sum(w * np.sum(self.gradient(x, center) ** 2, axis=-1))
        return float(np.sqrt(max(f2, g2)))

    def lipschitz(self):
        """max |grad f|, by dense radial sampling."""
        r = np.linspace(0.0, self.rho, 20001)
        x = np.zeros((r.size, self.dim))
        x[:, 0] = r
        return float(np.max(np.linalg.norm(self.gradient(x, np.zeros(self.dim)), axis=1)))


# resolution of the bump quadrature: subcells per mollifier radius, capped
SUBCELLS_PER_RADIUS = 8
SUBDIVISIONS = 16
POINTS_PER_SUBCELL = 6


def _cell_box_distance(mesh, center):
    v = mesh.vertices[mesh.cells]
    lo, hi = v.min(axis=1), v.max(axis=1)
    gap = np.maximum(0.0, np.maximum(lo - center, center - hi))
    return np.linalg.norm(gap, axis=1)


def _support_rule(mesh, mollifier, center):
    """Cells meeting the support and a quadrature resolving the bump there."""
    d = mesh.dim
    cells = np.flatnonzero(_cell_box_distance(mesh, center) < mollifier.rho)
    if cells.size == 0:
        return cells, np.zeros((0, d + 1)), np.zeros(0), np.zeros((0, d))
    v = mesh.vertices[mesh.cells[cells]]
    size = float(np.max(np.linalg.norm(v[:, 1:, :] - v[:, :1, :], axis=2)))
    nsub = int(min(SUBDIVISIONS, max(1, np.ceil(SUBCELLS_PER_RADIUS * size / mollifier.rho))))
    qp, qw = composite_rule(d, nsub, POINTS_PER_SUBCELL)
    lam = barycentric(qp)
    _, vol = barycentric_gradients(mesh.vertices, mesh.cells[cells])
    fact = float(np.prod(np.arange(1, d + 1)))
    x = np.einsum("qk,ckd->cqd", lam, v)
    w = vol[:, None] * qw[None, :] * fact
    return cells, lam, w, x


def _periodic_images(mesh):
    """Translations by whole periods along the periodic axes (zero shift first)."""
    d = mesh.dim
    box = mesh.box()
    lists = []
    for k in range(d):
        if k in mesh.periodic:
            lo, hi = box[k]
            lists.append((0.0, hi - lo, lo - hi))
        else:
            lists.append((0.0,))
    return [np.array(s) for s in itertools.product(*lists)]


class NormalTraceOperator:
    """Precomputed linear maps from stress data to R(sigma^d) at Gamma0 quadrature points.

    R = L_div @ (div sigma)_d nodal coefficients + L_row @ row values at cell vertices.
    """

    def __init__(self, disc, mollifier):
        spaces = disc.spaces
        mesh = spaces.mesh
        d = mesh.dim
        self.mollifier = mollifier
        self.spaces = spaces
        centers = spaces.gamma0.points
        self.points = centers
        nb = spaces.cell_nodes.shape[1]
        rows_div, cols_div, vals_div = [], [], []
        rows_sig, cols_sig, vals_sig = [], [], []
        self.f_l2 = np.zeros(len(centers))
        self.grad_l2 = np.zeros(len(centers))
        self._check_support(disc, mollifier)
        shifts = _periodic_images(mesh)
        for q, c0 in enumerate(centers):
            for shift in shifts:
                # periodic axes: the bump wraps around, seen through its images
                x0 = c0 + shift
                cells, lam, w, x = _support_rule(mesh, mollifier, x0)
                if cells.size == 0:
                    continue
                f = mollifier.value(x, x0)  # (nc, nq)
                gf = mollifier.gradient(x, x0)  # (nc, nq, d)
                self.f_l2[q] += np.sum(w * f * f)
                self.grad_l2[q] += np.sum(w * np.sum(gf * gf, axis=-1))
                N = p2_values(lam)
                ld = np.einsum("cq,cq,qa->ca", w, f, N)
                rows_div.append(np.full(ld.size, q))
                cols_div.append(spaces.cell_nodes[cells].ravel())
                vals_div.append(ld.ravel())
                ls = np.einsum("cq,cqj,qk->ckj", w, gf, lam)  # (nc, d+1, d)
                idx = (cells[:, None, None] * (d + 1) + np.arange(d + 1)[None, :, None]) * d + np.arange(d)[None, None, :]
                rows_sig.append(np.full(ls.size, q))
                cols_sig.append(idx.ravel())
                vals_sig.append(ls.ravel())
        self.f_l2 = np.sqrt(self.f_l2)
        self.grad_l2 = np.sqrt(self.grad_l2)
        nq = len(centers)
        cat = lambda parts, dtype=float: np.concatenate(parts) if parts else np.zeros(0, dtype)  # noqa: E731
        self.L_div = sp.csr_matrix(
            (cat(vals_div), (cat(rows_div, int), cat(cols_div, int))), shape=(nq, spaces.n_nodes)
        )
        self.L_row = sp.csr_matrix(
            (cat(vals_sig), (cat(rows_sig, int), cat(cols_sig, int))), shape=(nq, mesh.num_cells * (d + 1) * d)
        )
        self.nb = nb

    @staticmethod
    def _check_support(disc, mollifier):
        spec = disc.scenario.domain
        if mollifier.rho >= spec.h_min:
            warnings.warn(f"mollifier radius {mollifier.rho} exceeds the channel height; support clipped to Omega")

    @property
    def continuity_constant(self):
        """C_R per point: |R(s)| <= C_R (||s||_L2 + ||div s||_L2)."""
        return np.maximum(self.f_l2, self.grad_l2)

    def apply(self, stress, div_nodal):
        """R(sigma^d) at every Gamma0 quadrature point."""
        d = self.spaces.dim
        row = stress.row().reshape(-1)
        return self.L_div @ np.asarray(div_nodal)[:, d - 1] + self.L_row @ row


def default_rho(mesh):
    return 2.0 * mesh.mean_spacing()


def _half_ball_rule(mollifier, center, dim, nr=48, nt=48):
    """Polar/spherical Gauss rule on the part of the support above x_d = 0."""
    r, wr = roots_legendre(nr)
    r = 0.5 * mollifier.rho * (r + 1.0)
    wr = 0.5 * mollifier.rho * wr
    if dim == 2:
        t, wt = roots_legendre(nt)
        th = 0.5 * np.pi * (t + 1.0)
        wt = 0.5 * np.pi * wt
        R, TH = np.meshgrid(r, th, indexing="ij")
        W = np.outer(wr, wt) * R
        pts = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
        return center + pts, W.ravel()
    t, wt = roots_legendre(nt)
    ph = 0.5 * np.pi * (t + 1.0)  # polar angle from +x_d axis, upper hemisphere
    wph = 0.5 * np.pi * wt
    az, waz = roots_legendre(2 * nt)
    az = np.pi * (az + 1.0)
    waz = np.pi * waz
    R, PH, AZ = np.meshgrid(r, ph, az, indexing="ij")
    W = wr[:, None, None] * wph[None, :, None] * waz[None, None, :] * R**2 * np.sin(PH)
    pts = np.stack([R * np.sin(PH) * np.cos(AZ), R * np.sin(PH) * np.sin(AZ), R * np.cos(PH)], axis=-1)
    return center + pts.reshape(-1, 3), W.ravel()


def regularized_normal_trace(stress, div_stress, mollifier, x_prime, disc=None, domain=None):
    """R(sigma^d)(x') for one boundary point.

    ``stress`` is a StressField; for a cellwise field ``div_stress`` holds the
    P2 coefficients of div sigma (n_nodes, d) and ``disc`` supplies the mesh.
    For an analytic field ``div_stress`` may be None (``stress.div_fn`` is
    used) and the integral is done by a polar rule on the half ball, clipped
    to ``domain`` when given.
    """
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    dim = x_prime.size + 1
    center = np.append(x_prime, 0.0)
    if stress.analytic:
        x, w = _half_ball_rule(mollifier, center, dim)
        if domain is not None:
            inside = _inside(domain, x)
            if not np.all(inside):
                warnings.warn("mollifier support leaves the channel; integral clipped to Omega")
            w = w * inside
        div = stress.div_fn(x) if div_stress is None else div_stress(x)
        f = mollifier.value(x, center)
        gf = mollifier.gradient(x, center)
        row = stress.row_fn(x)
        return float(np.sum(w * (div * f + np.sum(row * gf, axis=-1))))
    if disc is None:
        raise UsageError("a cellwise stress field needs the discretization")
    mesh = disc.mesh
    total = 0.0
    for shift in _periodic_images(mesh):
        c = center + shift
        cells, lam, w, x = _support_rule(mesh, mollifier, c)
        if cells.size == 0:
            continue
        f = mollifier.value(x, c)
        gf = mollifier.gradient(x, c)
        N = p2_values(lam)
        divd = np.asarray(div_stress)[:, dim - 1][disc.spaces.cell_nodes[cells]]  # (nc, nb)
        div_q = divd @ N.T
        row = np.einsum("qk,ckj->cqj", lam, stress.row()[cells])
        total += float(np.sum(w * (div_q * f + np.sum(row * gf, axis=-1))))
    return total


def _inside(domain, x):
    xp = x[:, :-1]
    ok = x[:, -1] >= 0.0
    for k, (lo, hi) in enumerate(domain.omega_extent):
        ok &= (xp[:, k] >= lo) & (xp[:, k] <= hi)
    ok &= x[:, -1] <= domain.h(xp)
    return ok


def analytic_norms(row_fn, div_fn, domain, n=64):
    """||s||_L2 and ||div s||_L2 over a box channel by tensor Gauss quadrature."""
    d = domain.dimension
    axes = []
    for lo, hi in domain.omega_extent:
        t, w = roots_legendre(n)
        axes.append((0.5 * (hi - lo) * (t + 1.0) + lo, 0.5 * (hi - lo) * w))
    t, w = roots_legendre(n)
    grids = np.meshgrid(*[a[0] for a in axes], 0.5 * (t + 1.0), indexing="ij")
    wgrid = np.meshgrid(*[a[1] for a in axes], 0.5 * w, indexing="ij")
    x = np.stack([g.ravel() for g in grids], axis=1)
    wt = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    hv = domain.h(x[:, :-1])
    x[:, -1] *= hv
    wt = wt * hv
    row = row_fn(x)
    div = div_fn(x)
    return float(np.sqrt(np.sum(wt * np.sum(row * row, axis=1)))), float(np.sqrt(np.sum(wt * div * div)))


@dataclass
class BoundaryTraceHistory:
    """|R(sigma^d)| at Gamma0 quadrature points (columns) for steps (rows)."""

    values: np.ndarray
    times: np.ndarray
    xprime: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[0] != self.times.size:
            raise UsageError("history rows must match its times")

    @property
    def n_steps(self):
        return self.values.shape[0]

    def prefix(self, n):
        return BoundaryTraceHistory(self.values[: n + 1].copy(), self.times[: n + 1].copy(), self.xprime)

    def to_csv(self, path):
        d1 = 0 if self.xprime is None else self.xprime.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "time", "quad_point_id"] + [f"x{k}" for k in range(d1)] + ["value"])
            for n, t in enumerate(self.times):
                for q in range(self.values.shape[1]):
                    xs = [] if self.xprime is None else [f"{c:.17g}" for c in self.xprime[q]]
                    w.writerow([n, f"{t:.17g}", q] + xs + [f"{self.values[n, q]:.17g}"])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        nx = len(head) - 4
        ns = max(int(r[0]) for r in body) + 1
        nq = max(int(r[2]) for r in body) + 1
        vals = np.zeros((ns, nq))
        times = np.zeros(ns)
        xprime = np.zeros((nq, nx)) if nx else None
        for r in body:
            n, q = int(r[0]), int(r[2])
            times[n] = float(r[1])
            vals[n, q] = float(r[-1])
            if nx:
                xprime[q] = [float(c) for c in r[3:-1]]
        return cls(vals, times, xprime)


def trace_operator(disc, rho=None):
    """Cached NormalTraceOperator for a discretization."""
    rho = disc.scenario.rho if rho is None else rho
    rho = default_rho(disc.mesh) if rho is None else rho
    key = ("trace", float(rho))
    cache = disc._solvers
    if key not in cache:
        cache[key] = NormalTraceOperator(disc, Mollifier(rho, disc.spaces.dim))
    return cache[key]


def trace_at_step(disc, states, n, op):
    """Signed R(sigma^d) at step n of a state list (step 0 uses the first difference)."""
    sc = disc.scenario
    st = states[n]
    stress = compute_stress(st, disc.spaces, disc.lifting, sc.zeta.value(st.t), sc.mu)
    if n == 0:
        if len(states) < 2:
            raise UsageError("the trace at t = 0 needs the first step")
        div = _div_stress(disc, states[0].v_tilde, states[1].v_tilde, states[1].t - states[0].t, st.t)
    else:
        div = _div_stress(disc, states[n - 1].v_tilde, st.v_tilde, st.t - states[n - 1].t, st.t)
    return op.apply(stress, div)


def boundary_history(disc, states, op=None, steps=None, base=None):
    """|R(sigma^d)| for the given steps, optionally on top of an existing history."""
    op = trace_operator(disc) if op is None else op
    n_all = len(states)
    steps = range(n_all) if steps is None else steps
    nq = disc.quadrature.size
    if base is None:
        vals = np.full((n_all, nq), np.nan)
    else:
        vals = np.full((n_all, nq), np.nan)
        k = min(base.n_steps, n_all)
        vals[:k] = base.values[:k]
    for n in steps:
        vals[n] = np.abs(trace_at_step(disc, states, n, op))
    times = np.array([s.t for s in states])
    return BoundaryTraceHistory(vals, times, disc.quadrature.xprime.copy())
