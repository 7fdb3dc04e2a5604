"""Quadratic-velocity / linear-pressure spaces and the assembled Stokes operators.

Velocity coefficients are node-interleaved: dof ``node * d + c`` is component
``c`` at P2 node ``node`` (vertices first, then edge midpoints).  Constraints
are handled by restricting to the ``free`` dof list:

* every component vanishes at nodes on Gamma1 and GammaL facets,
* the x_d component vanishes at nodes on Gamma0 facets.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, FrictionStokesError, IncompatibleDataError, UsageError
from .mesh import BoundaryTag, facet_normals
from .quadrature import barycentric, facet_rule, simplex_rule


def local_edges(dim):
    return list(itertools.combinations(range(dim + 1), 2))


def p2_values(lam):
    """P2 shape functions at barycentric points, shape (nq, nb)."""
    d1 = lam.shape[1]
    cols = [lam[:, i] * (2.0 * lam[:, i] - 1.0) for i in range(d1)]
    cols += [4.0 * lam[:, i] * lam[:, j] for i, j in local_edges(d1 - 1)]
    return np.stack(cols, axis=1)


def p2_gradients(lam, grad_lam):
    """P2 gradients; lam (nq, d+1), grad_lam (nc, d+1, d) -> (nc, nq, nb, d)."""
    d1 = lam.shape[1]
    parts = [(4.0 * lam[:, i] - 1.0)[None, :, None] * grad_lam[:, None, i, :] for i in range(d1)]
    for i, j in local_edges(d1 - 1):
        parts.append(4.0 * (lam[None, :, j, None] * grad_lam[:, None, i, :] + lam[None, :, i, None] * grad_lam[:, None, j, :]))
    return np.stack(parts, axis=2)


def barycentric_gradients(vertices, cells):
    """Constant gradients of the barycentric coordinates and the cell volumes."""
    v = vertices[cells]
    jac = np.transpose(v[:, 1:, :] - v[:, :1, :], (0, 2, 1))  # columns are edge vectors
    inv = np.linalg.inv(jac)
    grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    vol = np.abs(np.linalg.det(jac))
    fact = 1.0
    for k in range(2, vertices.shape[1] + 1):
        fact *= k
    return grads, vol / fact


@dataclass
class BoundaryQuadrature:
    """Quadrature points on Gamma0 with everything needed to evaluate traces there."""

    points: np.ndarray  # (nq, d)
    weights: np.ndarray  # (nq,)
    facets: np.ndarray  # facet id per point
    cells: np.ndarray  # owning cell per point
    basis: np.ndarray  # (nq, nb) P2 values in the owning cell
    lam: np.ndarray  # (nq, d+1) cell barycentrics

    @property
    def xprime(self):
        return self.points[:, :-1]

    @property
    def size(self):
        return self.weights.size

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@dataclass
class FunctionSpacePair:
    mesh: object
    nodes: np.ndarray  # P2 node coordinates
    cell_nodes: np.ndarray  # (nc, nb)
    edges: np.ndarray  # global edge list (vertex pairs)
    free: np.ndarray  # free velocity dofs
    constrained: np.ndarray
    bottom_nodes: np.ndarray  # P2 nodes on Gamma0
    dirichlet_nodes: np.ndarray  # P2 nodes on Gamma1 or non-periodic GammaL
    gamma0: BoundaryQuadrature
    prolong: sp.csr_matrix = None  # independent velocity dofs -> all dofs
    pressure_free: np.ndarray = None
    pressure_prolong: sp.csr_matrix = None
    node_master: np.ndarray = None

    def reduce(self, u):
        return np.asarray(u)[self.free]

    def expand(self, ur):
        return self.prolong @ ur

    def reduce_pressure(self, p):
        return np.asarray(p)[self.pressure_free]

    def expand_pressure(self, pr):
        return self.pressure_prolong @ pr

    def admissible(self, u):
        """Project a full coefficient vector onto the constrained space."""
        return self.expand(self.reduce(u))

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_velocity(self):
        return self.n_nodes * self.dim

    @property
    def n_pressure(self):
        return self.mesh.vertices.shape[0]

    def velocity_dof(self, node, comp):
        return np.asarray(node) * self.dim + comp

    def as_nodal(self, u):
        return np.asarray(u).reshape(self.n_nodes, self.dim)

    def interpolate(self, func):
        """Nodal interpolant of ``func(points) -> (n, d)`` as a flat coefficient vector."""
        vals = np.asarray(func(self.nodes), dtype=float).reshape(self.n_nodes, self.dim)
        return vals.ravel().copy()

    def interpolate_scalar_p1(self, func):
        return np.asarray(func(self.mesh.vertices), dtype=float).reshape(-1).copy()

    def evaluate(self, u, cells, lam):
        """Velocity values at points given by owning cell and barycentrics."""
        vals = p2_values(lam)
        nodal = self.as_nodal(u)
        return np.einsum("qb,qbc->qc", vals, nodal[self.cell_nodes[cells]])

    def trace_values(self, u):
        """Full velocity vectors at the Gamma0 quadrature points, (nq, d)."""
        g = self.gamma0
        return np.einsum("qb,qbc->qc", g.basis, self.as_nodal(u)[self.cell_nodes[g.cells]])


def _p2_nodes(mesh):
    cells = mesh.cells
    d = mesh.dim
    pairs = local_edges(d)
    all_edges = np.concatenate([np.sort(cells[:, [i, j]], axis=1) for i, j in pairs], axis=0)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(len(pairs), -1).T
    nv = mesh.vertices.shape[0]
    nodes = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    cell_nodes = np.hstack([cells, nv + inverse])
    return nodes, cell_nodes, edges


def _facet_nodes(mesh, edges, facet_ids):
    nv = mesh.vertices.shape[0]
    lookup = {tuple(e): nv + k for k, e in enumerate(edges)}
    out = set()
    for f in mesh.facets[facet_ids]:
        out.update(int(v) for v in f)
        for i, j in itertools.combinations(sorted(int(v) for v in f), 2):
            out.add(lookup[(i, j)])
    return np.array(sorted(out), dtype=int)


def _gamma0_quadrature(mesh, cell_nodes, facet_ids):
    d = mesh.dim
    ref_pts, ref_w = facet_rule(d)
    fbary = barycentric(ref_pts)  # (nqf, d) barycentrics on the facet
    # order Gamma0 facets by the lexicographic position of their centroid
    cent = mesh.vertices[mesh.facets[facet_ids]].mean(axis=1)
    order = np.lexsort(cent[:, :-1][:, ::-1].T) if d > 1 else np.arange(len(facet_ids))
    facet_ids = facet_ids[order]
    pts, wts, fids, cids, lams = [], [], [], [], []
    meas = mesh.facet_measures(facet_ids)
    fact = 1.0 if d == 2 else 2.0
    for fid, m in zip(facet_ids, meas):
        c = mesh.facet_cells[fid]
        opp = mesh.facet_local[fid]
        local = [k for k in range(d + 1) if k != opp]
        # facet vertex order follows the cell's local order
        lam = np.zeros((len(ref_w), d + 1))
        lam[:, local] = fbary
        x = lam @ mesh.vertices[mesh.cells[c]]
        if d == 2:
            # sort points along x so the layout is monotone in x'
            idx = np.argsort(x[:, 0], kind="stable")
            lam, x = lam[idx], x[idx]
            w = ref_w[idx] * m * fact
        else:
            w = ref_w * m * fact
        pts.append(x)
        wts.append(w)
        lams.append(lam)
        fids.append(np.full(len(w), fid))
        cids.append(np.full(len(w), c))
    lam = np.vstack(lams)
    points = np.vstack(pts)
    points[:, -1] = 0.0
    return BoundaryQuadrature(
        points=points,
        weights=np.concatenate(wts),
        facets=np.concatenate(fids),
        cells=np.concatenate(cids),
        basis=p2_values(lam),
        lam=lam,
    )


def periodic_masters(mesh, points):
    """Index of the representative of every point under the periodic identification."""
    master = np.arange(points.shape[0])
    if not mesh.periodic:
        return master
    scale = 1e-9 * max(1.0, float(np.abs(points).max()))
    keys = {tuple(np.round(x / scale).astype(np.int64)): i for i, x in enumerate(points)}
    box = mesh.box()
    for k in mesh.periodic:
        lo, hi = box[k]
        on_hi = np.flatnonzero(np.abs(points[:, k] - hi) <= 1e-12 * (hi - lo))
        for i in on_hi:
            y = points[i].copy()
            y[k] = lo
            j = keys.get(tuple(np.round(y / scale).astype(np.int64)))
            if j is None:
                raise ConfigurationError(f"no periodic partner for point {points[i].tolist()}")
            master[i] = j
    # resolve chains created by several periodic axes
    while True:
        nxt = master[master]
        if np.array_equal(nxt, master):
            return master
        master = nxt


def prolongation(master, fixed, d=1):
    """Sparse map from independent dofs to all dofs.

    ``master`` identifies nodes, ``fixed`` flags dofs held at zero; returns
    ``(P, free)`` with ``free`` the independent dofs in full numbering.
    """
    n = master.size * d
    dof_master = (master[:, None] * d + np.arange(d)[None, :]).ravel()
    keep = (dof_master == np.arange(n)) & ~fixed
    free = np.flatnonzero(keep)
    col = np.full(n, -1)
    col[free] = np.arange(free.size)
    target = col[dof_master]
    rows = np.flatnonzero((target >= 0) & ~fixed)
    P = sp.csr_matrix((np.ones(rows.size), (rows, target[rows])), shape=(n, free.size))
    return P, free


def build_spaces(mesh):
    """Velocity/pressure spaces with the friction-wall constraint pattern."""
    bottom = mesh.facets_with(BoundaryTag.Gamma0)
    if bottom.size == 0:
        raise ConfigurationError("mesh has no Gamma0 facet: the friction surface is absent")
    nodes, cell_nodes, edges = _p2_nodes(mesh)
    periodic = mesh.periodic_facet_mask()
    walls = np.array(
        [
            i
            for i, t in enumerate(mesh.facet_tags)
            if t in (BoundaryTag.Gamma1, BoundaryTag.GammaL) and not periodic[i]
        ],
        dtype=int,
    )
    dir_nodes = _facet_nodes(mesh, edges, walls) if walls.size else np.zeros(0, dtype=int)
    bot_nodes = _facet_nodes(mesh, edges, bottom)
    d = mesh.dim
    constrained = np.zeros(nodes.shape[0] * d, dtype=bool)
    for c in range(d):
        constrained[dir_nodes * d + c] = True
    constrained[bot_nodes * d + (d - 1)] = True
    node_master = periodic_masters(mesh, nodes)
    P, free = prolongation(node_master, constrained, d)
    vert_master = node_master[: mesh.vertices.shape[0]]
    Pp, pfree = prolongation(vert_master, np.zeros(vert_master.size, dtype=bool), 1)
    gamma0 = _gamma0_quadrature(mesh, cell_nodes, bottom)
    return FunctionSpacePair(
        mesh=mesh,
        nodes=nodes,
        cell_nodes=cell_nodes,
        edges=edges,
        free=free,
        constrained=np.flatnonzero(constrained),
        bottom_nodes=bot_nodes,
        dirichlet_nodes=dir_nodes,
        gamma0=gamma0,
        prolong=P,
        pressure_free=pfree,
        pressure_prolong=Pp,
        node_master=node_master,
    )


@dataclass
class DiscreteOperators:
    """Assembled matrices on the full (unconstrained) velocity space.

    ``divergence`` is B with B[k, j] = -(q_k, div phi_j), so ``B.T @ p`` pairs
    with the momentum equation as -(p, div phi).  ``trace`` maps velocity
    coefficients to tangential values at the Gamma0 quadrature points, laid out
    as row ``q * (d - 1) + c``.
    """

    spaces: FunctionSpacePair
    mu: float
    mass: sp.csr_matrix
    viscous: sp.csr_matrix
    stiffness: sp.csr_matrix
    divergence: sp.csr_matrix
    mean: np.ndarray
    pressure_mass: sp.csr_matrix
    trace: sp.csr_matrix
    boundary_weights: np.ndarray
    boundary_mass: sp.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    def free_block(self, mat):
        P = self.spaces.prolong
        return (P.T @ mat @ P).tocsr()

    def reduced_divergence(self):
        sp_ = self.spaces
        return (sp_.pressure_prolong.T @ self.divergence @ sp_.prolong).tocsr()

    def h1_matrix(self):
        return self.mass + self.stiffness

    def norm_mass(self, u):
        return float(np.sqrt(max(u @ (self.mass @ u), 0.0)))

    def norm_h1(self, u):
        return float(np.sqrt(max(u @ (self.mass @ u) + u @ (self.stiffness @ u), 0.0)))

    def tangential(self, u):
        d = self.spaces.dim
        return (self.trace @ u).reshape(-1, d - 1)

    def mass_solver(self):
        if "mass" not in self._cache:
            self._cache["mass"] = spla.splu(self.mass.tocsc())
        return self._cache["mass"]

    def project(self, load):
        """L2 projection onto the full velocity space from a load vector."""
        return self.mass_solver().solve(load)


def assemble_operators(spaces, mu):
    if not mu > 0:
        raise UsageError(f"viscosity must be positive, got {mu}")
    mesh = spaces.mesh
    d = mesh.dim
    grads, vol = barycentric_gradients(mesh.vertices, mesh.cells)
    qp, qw = simplex_rule(d, 3)
    lam = barycentric(qp)
    N = p2_values(lam)  # (nq, nb)
    dN = p2_gradients(lam, grads)  # (nc, nq, nb, d)
    nb = N.shape[1]
    fact = float(np.prod(np.arange(1, d + 1)))
    w = vol[:, None] * qw[None, :] * fact  # (nc, nq)

    scal_mass = np.einsum("cq,qa,qb->cab", w, N, N)
    lap = np.einsum("cq,cqai,cqbi->cab", w, dN, dN)
    # row (a, c), column (b, e): int d_e N_a d_c N_b
    cross_blk = np.einsum("kq,kqae,kqbc->kacbe", w, dN, dN)

    cn = spaces.cell_nodes
    nvel = spaces.n_velocity
    eye = np.eye(d)
    rows = (cn[:, :, None] * d + np.arange(d)[None, None, :])  # (nc, nb, d)
    R = np.broadcast_to(rows[:, :, :, None, None], (len(cn), nb, d, nb, d))
    C = np.broadcast_to(rows[:, None, None, :, :], (len(cn), nb, d, nb, d))

    def blockify(block):
        return sp.coo_matrix((block.ravel(), (R.ravel(), C.ravel())), shape=(nvel, nvel)).tocsr()

    mass_blk = scal_mass[:, :, None, :, None] * eye[None, None, :, None, :]
    lap_blk = lap[:, :, None, :, None] * eye[None, None, :, None, :]
    mass = blockify(mass_blk)
    stiffness = blockify(lap_blk)
    viscous = blockify(mu * (lap_blk + cross_blk))
    viscous = (0.5 * (viscous + viscous.T)).tocsr()

    # pressure: P1 on vertices, q_k = lam_k
    Q = lam  # (nq, d+1)
    div_loc = -np.einsum("cq,qk,cqai->ckai", w, Q, dN)  # [k, a, c]
    pr = np.broadcast_to(mesh.cells[:, :, None, None], div_loc.shape)
    pc = np.broadcast_to(rows[:, None, :, :], div_loc.shape)
    B = sp.coo_matrix((div_loc.ravel(), (pr.ravel(), pc.ravel())), shape=(spaces.n_pressure, nvel)).tocsr()
    pm_loc = np.einsum("cq,qk,ql->ckl", w, Q, Q)
    pmr = np.broadcast_to(mesh.cells[:, :, None], pm_loc.shape)
    pmc = np.broadcast_to(mesh.cells[:, None, :], pm_loc.shape)
    Mp = sp.coo_matrix((pm_loc.ravel(), (pmr.ravel(), pmc.ravel())), shape=(spaces.n_pressure,) * 2).tocsr()
    mean = np.asarray(Mp.sum(axis=1)).ravel()

    g = spaces.gamma0
    nq = g.size
    tr_rows, tr_cols, tr_vals = [], [], []
    for c in range(d - 1):
        tr_rows.append(np.repeat(np.arange(nq) * (d - 1) + c, nb))
        tr_cols.append((cn[g.cells] * d + c).ravel())
        tr_vals.append(g.basis.ravel())
    trace = sp.coo_matrix(
        (np.concatenate(tr_vals), (np.concatenate(tr_rows), np.concatenate(tr_cols))), shape=(nq * (d - 1), nvel)
    ).tocsr()
    scal_rows = np.repeat(np.arange(nq), nb)
    scal_trace = sp.coo_matrix((g.basis.ravel(), (scal_rows, cn[g.cells].ravel())), shape=(nq, spaces.n_nodes)).tocsr()
    bmass = (scal_trace.T @ sp.diags(g.weights) @ scal_trace).tocsr()

    return DiscreteOperators(
        spaces=spaces,
        mu=float(mu),
        mass=mass,
        viscous=viscous,
        stiffness=stiffness,
        divergence=B,
        mean=mean,
        pressure_mass=Mp,
        trace=trace,
        boundary_weights=g.weights.copy(),
        boundary_mass=bmass,
    )


def load_vector(ops, func, t=None, degree_pts=4):
    """(func, phi) for a vector field ``func(x, t) -> (n, d)``."""
    spaces = ops.spaces
    mesh = spaces.mesh
    d = mesh.dim
    _, vol = barycentric_gradients(mesh.vertices, mesh.cells)
    qp, qw = simplex_rule(d, degree_pts)
    lam = barycentric(qp)
    N = p2_values(lam)
    x = np.einsum("qk,ckd->cqd", lam, mesh.vertices[mesh.cells])
    vals = np.asarray(func(x.reshape(-1, d), t), dtype=float).reshape(x.shape[0], x.shape[1], d)
    fact = float(np.prod(np.arange(1, d + 1)))
    w = vol[:, None] * qw[None, :] * fact
    loc = np.einsum("cq,qa,cqi->cai", w, N, vals)
    out = np.zeros(spaces.n_velocity)
    idx = spaces.cell_nodes[:, :, None] * d + np.arange(d)[None, None, :]
    np.add.at(out, idx.ravel(), loc.ravel())
    return out


def divergence_residual(ops, u):
    """max |B u| normalized by nothing: the raw discrete divergence."""
    return float(np.max(np.abs(ops.divergence @ u), initial=0.0))


# --------------------------------------------------------------------------
# Wall data and lifting


@dataclass(frozen=True)
class WallData:
    """Boundary velocity g.

    ``kind`` is ``couette`` (tangential s on Gamma0, zero on Gamma1, the
    linear shear profile s (1 - x_d / h) on GammaL), ``zero``, or ``flux``
    (a parabolic inflow of unit net flux through the left lateral side; kept
    only to exercise the compatibility check).  ``field`` overrides the
    lateral profile with a callable ``x -> (n, d)``.
    """

    kind: str = "couette"
    s: float = 1.0
    field: object = None

    def __post_init__(self):
        if self.kind not in ("couette", "zero", "flux"):
            raise UsageError(f"unknown wall kind {self.kind!r}")

    def lateral(self, x, spec):
        x = np.atleast_2d(x)
        d = x.shape[1]
        out = np.zeros_like(x)
        if self.field is not None:
            return np.asarray(self.field(x), dtype=float).reshape(x.shape)
        if self.kind == "couette":
            hv = spec.h(x[:, :-1])
            out[:, 0] = self.s * (1.0 - x[:, -1] / hv)
        elif self.kind == "flux":
            lo = spec.omega_extent[0][0]
            left = np.abs(x[:, 0] - lo) <= 1e-12 * (1 + abs(lo))
            hv = spec.h(x[:, :-1])
            eta = x[:, -1] / hv
            prof = 6.0 * eta * (1.0 - eta) / hv
            if d == 3:
                (a, b) = spec.omega_extent[1]
                prof = prof / (b - a)
            out[left, 0] = prof[left]
        return out

    def bottom_speed(self):
        return self.s if self.kind == "couette" else 0.0

    def to_dict(self):
        return {"kind": self.kind, "s": self.s}


@dataclass
class LiftingField:
    G0: np.ndarray
    pressure: np.ndarray
    norm_l2: float
    norm_h1: float
    divergence: float
    flux: float

    @property
    def is_zero(self):
        return not np.any(self.G0)


def boundary_values(spaces, wall, spec):
    """Nodal values of g on every boundary node (NaN elsewhere)."""
    d = spaces.dim
    vals = np.full((spaces.n_nodes, d), np.nan)
    lat = spaces.dirichlet_nodes
    if lat.size:
        vals[lat] = wall.lateral(spaces.nodes[lat], spec)
        top = _top_nodes(spaces, spec)
        vals[top] = 0.0
    bot = spaces.bottom_nodes
    only_bottom = np.setdiff1d(bot, lat)
    vals[only_bottom] = 0.0
    vals[only_bottom, 0] = wall.bottom_speed()
    return vals


def _top_nodes(spaces, spec):
    mesh = spaces.mesh
    ids = mesh.facets_with(BoundaryTag.Gamma1)
    if ids.size == 0:
        return np.zeros(0, dtype=int)
    return _facet_nodes(mesh, spaces.edges, ids)


def boundary_flux(spaces, values):
    """Net outward flux of the interpolated boundary field, by facet quadrature."""
    mesh = spaces.mesh
    d = mesh.dim
    ids = np.flatnonzero(~mesh.periodic_facet_mask())
    normals = facet_normals(mesh, ids)
    ref_pts, ref_w = facet_rule(d)
    fbary = barycentric(ref_pts)
    meas = mesh.facet_measures(ids)
    fact = 1.0 if d == 2 else 2.0
    nodal = np.nan_to_num(values)
    total = 0.0
    norm2 = 0.0
    for k, fid in enumerate(ids):
        c = mesh.facet_cells[fid]
        opp = mesh.facet_local[fid]
        local = [k for k in range(d + 1) if k != opp]
        lam = np.zeros((len(ref_w), d + 1))
        lam[:, local] = fbary
        u = p2_values(lam) @ nodal[spaces.cell_nodes[c]]
        w = ref_w * meas[k] * fact
        total += float(np.dot(w, u @ normals[k]))
        norm2 += float(np.dot(w, np.sum(u * u, axis=1)))
    return total, np.sqrt(norm2)


class SaddleSolver:
    """Factorized system [[K + E F E^T, B^T, 0], [B, 0, m], [0, m^T, 0]].

    The constants span the kernel of B^T on the constrained space
    (1^T B = 0), so the multiplier row is eliminated exactly: the
    multiplier follows from the summed continuity rows, one pressure
    dof is pinned for the factorization, and the zero-mean shift is
    restored afterwards.  This avoids the dense border in the LU factors.

    ``gamma`` lists the velocity dofs touched by low-rank updates ``F``
    (the friction tangent); those are applied by a capacitance solve on
    top of the single factorization of the base matrix.
    """

    def __init__(self, K, B, m, gamma=None):
        self.nu = K.shape[0]
        self.np = B.shape[0]
        self.m = np.asarray(m, dtype=float)
        self.msum = float(self.m.sum())
        Bp = B[1:]
        S = sp.bmat([[K, Bp.T], [Bp, None]], format="csc")
        try:
            self.lu = spla.splu(S, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise FrictionStokesError(f"singular saddle-point system: {exc}") from exc
        self.gamma = None if gamma is None else np.asarray(gamma)
        if self.gamma is not None and self.gamma.size:
            E = np.zeros((S.shape[0], self.gamma.size))
            E[self.gamma, np.arange(self.gamma.size)] = 1.0
            self.W = self.lu.solve(E)  # S^{-1} E
            self.G = self.W[self.gamma]

    def _core(self, rhs, F):
        y = self.lu.solve(rhs)
        if F is None or self.gamma is None or not self.gamma.size:
            return y
        k = self.gamma.size
        z = np.linalg.solve(np.eye(k) + F @ self.G, F @ y[self.gamma])
        return y - self.W @ z

    def solve(self, ru, rp, rl, F=None):
        lam = float(np.sum(rp)) / self.msum
        rp = rp - self.m * lam
        x = self._core(np.concatenate([ru, rp[1:]]), F)
        u = x[: self.nu]
        p = np.concatenate([[0.0], x[self.nu :]])
        p += (rl - self.m @ p) / self.msum
        return u, p, lam


def build_lifting(spaces, wall, ops, spec):
    """Divergence-free extension of the wall data by a steady Stokes solve."""
    d = spaces.dim
    vals = boundary_values(spaces, wall, spec)
    flux, gnorm = boundary_flux(spaces, vals)
    if abs(flux) > 1e-10 * max(gnorm, np.finfo(float).tiny) and abs(flux) > 0:
        raise IncompatibleDataError(f"boundary data has net flux {flux:.6e} (must vanish)", flux=flux)
    if gnorm == 0.0:
        z = np.zeros(spaces.n_velocity)
        return LiftingField(z, np.zeros(spaces.n_pressure), 0.0, 0.0, 0.0, flux)
    bnodes = np.flatnonzero(~np.isnan(vals[:, 0]))
    fixed = np.zeros(spaces.n_velocity, dtype=bool)
    fixed[(bnodes[:, None] * d + np.arange(d)[None, :]).ravel()] = True
    ub = np.zeros(spaces.n_velocity)
    ub[fixed] = vals[bnodes].ravel()
    P, _ = prolongation(spaces.node_master, fixed, d)
    Pp = spaces.pressure_prolong
    A = ops.viscous
    B = ops.divergence
    K = (P.T @ A @ P).tocsc()
    Br = (Pp.T @ B @ P).tocsr()
    solver = SaddleSolver(K, Br, Pp.T @ ops.mean)
    u, p, _ = solver.solve(-(P.T @ (A @ ub)), -(Pp.T @ (B @ ub)), 0.0)
    G0 = ub + P @ u
    div = float(np.linalg.norm(B @ G0))
    return LiftingField(G0, Pp @ p, ops.norm_mass(G0), ops.norm_h1(G0), div, flux)


# --------------------------------------------------------------------------
# Constants


def korn_coercivity_estimate(ops):
    """Smallest generalized eigenvalue of (A, M + K) on the free dofs."""
    A = ops.free_block(ops.viscous).tocsc()
    H = ops.free_block(ops.h1_matrix()).tocsc()
    n = A.shape[0]
    try:
        if n <= 400:
            vals = sla.eigh(A.toarray(), H.toarray(), eigvals_only=True, subset_by_index=[0, 0])
            alpha = float(vals[0])
        else:
            # fixed start vector: ARPACK otherwise seeds randomly and the digits drift between runs
            vals = spla.eigsh(
                A, k=1, M=H, sigma=0.0, which="LM", return_eigenvectors=False, tol=1e-12, v0=np.ones(n)
            )
            alpha = float(vals[0])
    except (np.linalg.LinAlgError, spla.ArpackError, RuntimeError) as exc:
        raise FrictionStokesError(f"Korn eigenvalue computation failed: {exc}") from exc
    if not alpha > 0:
        raise FrictionStokesError(f"Korn eigenvalue is not positive: {alpha}")
    return alpha


def inf_sup_constant(ops):
    """Discrete inf-sup constant in the H1 x L2 norms on zero-mean pressures."""
    Pp = ops.spaces.pressure_prolong
    H = ops.free_block(ops.h1_matrix()).tocsc()
    Bf = ops.reduced_divergence().toarray()
    lu = spla.splu(H)
    S = Bf @ lu.solve(Bf.T)
    S = 0.5 * (S + S.T)
    Mp = (Pp.T @ ops.pressure_mass @ Pp).toarray()
    mean = Pp.T @ ops.mean
    # project out constants (the kernel of B^T on this constrained space)
    m = mean / np.sqrt(mean @ np.linalg.solve(Mp, mean))
    basis = sla.null_space(m[None, :])
    vals = sla.eigh(basis.T @ S @ basis, basis.T @ Mp @ basis, eigvals_only=True, subset_by_index=[0, 0])
    return float(np.sqrt(max(vals[0], 0.0)))


def trace_norm_estimate(ops):
    """Largest singular value of the Gamma0 trace in the L2(Gamma0) / H1 norms."""
    T = ops.trace @ ops.spaces.prolong
    W = sp.diags(np.repeat(ops.boundary_weights, ops.spaces.dim - 1))
    G = (T.T @ W @ T).tocsc()
    H = ops.free_block(ops.h1_matrix()).tocsc()
    vals = spla.eigsh(G, k=1, M=H, which="LA", return_eigenvectors=False, tol=1e-8, v0=np.ones(G.shape[0]))
    return float(np.sqrt(max(vals[0], 0.0)))


def export_coo(mat, path=None, name="matrix"):
    """Coordinate triplets with a one-line header; floats use 17 significant digits."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# {name} rows={coo.shape[0]} cols={coo.shape[1]} nnz={coo.nnz}"]
    lines += [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def import_coo(text):
    lines = text.splitlines()
    head = dict(tok.split("=") for tok in lines[0].split()[2:])
    rows, cols, vals = [], [], []
    for line in lines[1:]:
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    return sp.coo_matrix((vals, (rows, cols)), shape=(int(head["rows"]), int(head["cols"]))).tocsr()
