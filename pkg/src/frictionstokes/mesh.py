"""Structured simplicial meshes of the channel {x' in omega, 0 < x_d < h(x')}.

The channel is meshed on the reference box omega x [0, 1] and mapped
vertically by ``x_d = eta * h(x')``.  Boundary facets are classified by
geometric predicates into the bottom friction wall, the top wall and the
lateral part.
"""
import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, UsageError
from .functions import Builtin, as_builtin


class BoundaryTag(enum.Enum):
    Gamma0 = "Gamma0"
    Gamma1 = "Gamma1"
    GammaL = "GammaL"


@dataclass(frozen=True)
class DomainSpec:
    """Channel geometry.

    ``omega_extent`` holds one ``(lo, hi)`` pair per tangential axis and
    ``height`` maps tangential coordinates ``x'`` (last axis) to h(x').
    Tangential axes listed in ``periodic`` are closed up periodically; their
    lateral facets stay in the mesh (tagged GammaL) but carry no wall data.
    """

    dimension: int = 2
    omega_extent: tuple = ((0.0, 1.0),)
    height: object = 1.0
    lipschitz: float = None
    h_min: float = None
    h_max: float = None
    periodic: tuple = ()

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise GeometryError(f"dimension must be 2 or 3, got {self.dimension}")
        extent = tuple((float(lo), float(hi)) for lo, hi in self.omega_extent)
        if len(extent) != self.dimension - 1:
            raise GeometryError(f"omega needs {self.dimension - 1} extent pairs, got {len(extent)}")
        for lo, hi in extent:
            if not hi > lo:
                raise GeometryError(f"empty omega interval ({lo}, {hi})")
        object.__setattr__(self, "omega_extent", extent)
        if not callable(self.height) or isinstance(self.height, (int, float)):
            object.__setattr__(self, "height", as_builtin(self.height, arg="x0"))
        periodic = tuple(sorted(int(k) for k in self.periodic))
        if any(k < 0 or k >= self.dimension - 1 for k in periodic):
            raise GeometryError(f"periodic axes must be tangential, got {periodic}")
        object.__setattr__(self, "periodic", periodic)
        lo_s, hi_s = self._sample_heights()
        for k in periodic:
            pts = self.sample_points(33)
            a, b = pts.copy(), pts.copy()
            a[:, k], b[:, k] = extent[k]
            if np.max(np.abs(self.h(a) - self.h(b))) > 1e-12 * hi_s:
                raise GeometryError(f"height is not periodic along axis {k}")
        if self.h_min is None:
            object.__setattr__(self, "h_min", float(lo_s))
        if self.h_max is None:
            object.__setattr__(self, "h_max", float(hi_s))
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", self._lipschitz())

    def h(self, xprime):
        xprime = np.asarray(xprime, dtype=float)
        if isinstance(self.height, Builtin):
            return np.asarray(self.height(x=xprime), dtype=float)
        return np.asarray(self.height(xprime), dtype=float)

    def sample_points(self, n=201):
        axes = [np.linspace(lo, hi, n) for lo, hi in self.omega_extent]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def _sample_heights(self):
        pts = self.sample_points(201 if self.dimension == 2 else 41)
        hv = self.h(pts)
        bad = np.flatnonzero(~(hv > 0))
        if bad.size:
            raise GeometryError(
                f"height must be positive; h({pts[bad[0]].tolist()}) = {hv[bad[0]]}", point=pts[bad[0]]
            )
        return hv.min(), hv.max()

    def _lipschitz(self):
        if isinstance(self.height, Builtin) and self.dimension == 2:
            lo, hi = self.omega_extent[0]
            return self.height.lipschitz(lo, hi)
        pts = self.sample_points(201 if self.dimension == 2 else 41)
        step = [(hi - lo) / 200.0 for lo, hi in self.omega_extent]
        worst = 0.0
        for k, dx in enumerate(step):
            shifted = pts.copy()
            shifted[:, k] = np.minimum(shifted[:, k] + dx, self.omega_extent[k][1])
            moved = shifted[:, k] - pts[:, k]
            ok = moved > 0
            diff = np.abs(self.h(shifted[ok]) - self.h(pts[ok])) / moved[ok]
            worst = max(worst, float(diff.max(initial=0.0)))
        return worst

    def to_dict(self):
        out = {"dimension": self.dimension, "omega": [list(p) for p in self.omega_extent]}
        if self.periodic:
            out["periodic"] = list(self.periodic)
        if isinstance(self.height, Builtin):
            out["height"] = self.height.to_dict()
        return out


@dataclass(frozen=True, eq=False)
class Mesh:
    """Vertices, simplex connectivity and tagged boundary facets.

    ``facet_cells`` / ``facet_local`` record the owning cell of each boundary
    facet and the local index of the vertex opposite to it.
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: tuple
    facet_cells: np.ndarray = None
    facet_local: np.ndarray = None
    extent: tuple = None
    periodic: tuple = ()

    def __post_init__(self):
        if self.facet_cells is None:
            fc, fl = _locate_facets(self.cells, self.facets)
            object.__setattr__(self, "facet_cells", fc)
            object.__setattr__(self, "facet_local", fl)
        for name in ("vertices", "cells", "facets", "facet_cells", "facet_local"):
            getattr(self, name).setflags(write=False)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    def facets_with(self, tag):
        tag = BoundaryTag(tag)
        return np.array([i for i, t in enumerate(self.facet_tags) if t is tag], dtype=int)

    def box(self):
        """(lo, hi) per tangential axis, from the vertices when not recorded."""
        if self.extent is not None:
            return self.extent
        x = self.vertices[:, :-1]
        return tuple((float(a), float(b)) for a, b in zip(x.min(axis=0), x.max(axis=0)))

    def periodic_facet_mask(self):
        """True for lateral facets lying on a periodic side."""
        mask = np.zeros(len(self.facets), dtype=bool)
        box = self.box()
        for k in self.periodic:
            lo, hi = box[k]
            tol = 1e-12 * (hi - lo)
            xs = self.vertices[self.facets][:, :, k]
            mask |= np.all(np.abs(xs - lo) <= tol, axis=1) | np.all(np.abs(xs - hi) <= tol, axis=1)
        return mask

    def cell_volumes(self):
        return np.abs(self.signed_volumes())

    def signed_volumes(self):
        v = self.vertices[self.cells]
        jac = v[:, 1:, :] - v[:, :1, :]
        return np.linalg.det(jac) / _factorial(self.dim)

    def facet_measures(self, ids=None):
        ids = np.arange(len(self.facets)) if ids is None else np.asarray(ids)
        return _simplex_measure(self.vertices[self.facets[ids]])

    def mean_spacing(self):
        return float(np.mean(self.cell_volumes()) ** (1.0 / self.dim) * (_factorial(self.dim)) ** (1.0 / self.dim))


def _factorial(n):
    out = 1
    for k in range(2, n + 1):
        out *= k
    return out


def _simplex_measure(pts):
    """Measure of (k-1)-simplices embedded in R^d, pts of shape (n, k, d)."""
    e = pts[:, 1:, :] - pts[:, :1, :]
    gram = np.einsum("nid,njd->nij", e, e)
    k = e.shape[1]
    return np.sqrt(np.maximum(np.linalg.det(gram), 0.0)) / _factorial(k)


def _all_facets(cells):
    d1 = cells.shape[1]
    faces = []
    for j in range(d1):
        keep = [i for i in range(d1) if i != j]
        faces.append(cells[:, keep])
    faces = np.stack(faces, axis=1)  # (nc, d+1, d)
    return faces


def _locate_facets(cells, facets):
    faces = np.sort(_all_facets(cells), axis=2)
    nc, d1, d = faces.shape
    lookup = {tuple(row): (c, j) for c, j, row in zip(np.repeat(np.arange(nc), d1), np.tile(np.arange(d1), nc), faces.reshape(-1, d))}
    fc = np.empty(len(facets), dtype=int)
    fl = np.empty(len(facets), dtype=int)
    for i, f in enumerate(np.sort(facets, axis=1)):
        try:
            fc[i], fl[i] = lookup[tuple(f)]
        except KeyError:
            raise UsageError(f"facet {f.tolist()} is not a face of any cell") from None
    return fc, fl


def _as_resolution(resolution, dim):
    if np.isscalar(resolution):
        res = (int(resolution),) * dim
    else:
        res = tuple(int(r) for r in resolution)
    if len(res) != dim:
        raise UsageError(f"resolution needs {dim} entries, got {len(res)}")
    if min(res) < 2:
        raise UsageError(f"resolution must be >= 2 per axis, got {res}")
    return res


def _kuhn_tets():
    corners = []
    for perm in itertools.permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for ax in perm:
            nxt = path[-1].copy()
            nxt[ax] = 1
            path.append(nxt)
        corners.append(path)
    return np.array(corners)  # (6, 4, 3) corner offsets


def build_mesh(spec, resolution=8):
    """Structured mesh of the channel.

    ``resolution`` is an int or one int per axis; the last entry counts the
    cells across the height.  In 2D every quad is split along the same
    diagonal, in 3D every hexahedron is split into six Kuhn tetrahedra.
    """
    d = spec.dimension
    res = _as_resolution(resolution, d)
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(spec.omega_extent, res[:-1])]
    eta = np.linspace(0.0, 1.0, res[-1] + 1)
    grids = np.meshgrid(*axes, eta, indexing="ij")
    ref = np.stack([g.ravel() for g in grids], axis=1)
    xprime = ref[:, :-1]
    hv = spec.h(xprime)
    bad = np.flatnonzero(~(hv > 0))
    if bad.size:
        raise GeometryError(
            f"height must be positive; h({xprime[bad[0]].tolist()}) = {hv[bad[0]]}", point=xprime[bad[0]]
        )
    vertices = ref.copy()
    vertices[:, -1] = ref[:, -1] * hv
    # the top row is placed exactly on h so that tagging is robust
    shape = tuple(n + 1 for n in res)
    index = np.arange(vertices.shape[0]).reshape(shape)

    if d == 2:
        v00 = index[:-1, :-1].ravel()
        v10 = index[1:, :-1].ravel()
        v01 = index[:-1, 1:].ravel()
        v11 = index[1:, 1:].ravel()
        cells = np.concatenate(
            [np.stack([v00, v10, v11], axis=1), np.stack([v00, v11, v01], axis=1)], axis=0
        )
        order = np.argsort(np.concatenate([np.arange(v00.size) * 2, np.arange(v00.size) * 2 + 1]), kind="stable")
        cells = cells[order]
    else:
        base = index[:-1, :-1, :-1].ravel()
        strides = np.array([shape[1] * shape[2], shape[2], 1])
        tets = []
        for path in _kuhn_tets():
            offs = path @ strides
            tets.append(base[:, None] + offs[None, :])
        cells = np.stack(tets, axis=1).reshape(-1, 4)
    cells = _orient(vertices, cells)
    facets, tags = _boundary_facets(vertices, cells, spec)
    return Mesh(vertices=vertices, cells=cells, facets=facets, facet_tags=tags, extent=spec.omega_extent, periodic=spec.periodic)


def _orient(vertices, cells):
    v = vertices[cells]
    det = np.linalg.det(v[:, 1:, :] - v[:, :1, :])
    cells = cells.copy()
    flip = det < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
    return cells


def _boundary_facets(vertices, cells, spec):
    faces = _all_facets(cells)
    nc, d1, d = faces.shape
    flat = np.sort(faces.reshape(-1, d), axis=1)
    uniq, first, counts = np.unique(flat, axis=0, return_index=True, return_counts=True)
    boundary = np.sort(first[counts == 1])
    facets = faces.reshape(-1, d)[boundary]
    tol = 1e-10 * spec.h_max
    tags = []
    for f in facets:
        pts = vertices[f]
        xp, xd = pts[:, :-1], pts[:, -1]
        if np.all(np.abs(xd) <= tol):
            tags.append(BoundaryTag.Gamma0)
        elif np.all(np.abs(xd - spec.h(xp)) <= tol):
            tags.append(BoundaryTag.Gamma1)
        else:
            on_side = False
            for k, (lo, hi) in enumerate(spec.omega_extent):
                span = hi - lo
                if np.all(np.abs(xp[:, k] - lo) <= 1e-12 * span) or np.all(np.abs(xp[:, k] - hi) <= 1e-12 * span):
                    on_side = True
            if not on_side:
                raise GeometryError(f"boundary facet {f.tolist()} could not be classified")
            tags.append(BoundaryTag.GammaL)
    return facets, tuple(tags)


def boundary_normal(mesh, facet):
    """Unit outward normal of a boundary facet.

    ``facet`` is an index into ``mesh.facets`` or a tuple of vertex ids; on
    Gamma0 the exact vector (0, ..., 0, -1) is returned.
    """
    if isinstance(facet, (int, np.integer)):
        if not 0 <= facet < len(mesh.facets):
            raise UsageError(f"facet id {facet} is not a boundary facet")
        idx = int(facet)
    else:
        key = tuple(sorted(int(v) for v in facet))
        matches = np.flatnonzero(np.all(np.sort(mesh.facets, axis=1) == np.array(key), axis=1))
        if matches.size == 0:
            raise UsageError(f"facet {list(key)} is not a boundary facet")
        idx = int(matches[0])
    d = mesh.dim
    if mesh.facet_tags[idx] is BoundaryTag.Gamma0:
        n = np.zeros(d)
        n[-1] = -1.0
        return n
    return _facet_normals(mesh, [idx])[0]


def _facet_normals(mesh, ids):
    ids = np.asarray(ids, dtype=int)
    pts = mesh.vertices[mesh.facets[ids]]
    d = mesh.dim
    if d == 2:
        t = pts[:, 1] - pts[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        n = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    opposite = mesh.vertices[mesh.cells[mesh.facet_cells[ids], mesh.facet_local[ids]]]
    inward = np.einsum("nd,nd->n", opposite - pts[:, 0], n) > 0
    n[inward] *= -1.0
    return n


def facet_normals(mesh, ids=None):
    """Outward normals of several boundary facets (exact on Gamma0)."""
    ids = np.arange(len(mesh.facets)) if ids is None else np.asarray(ids, dtype=int)
    n = _facet_normals(mesh, ids)
    bottom = np.array([mesh.facet_tags[i] is BoundaryTag.Gamma0 for i in ids], dtype=bool)
    n[bottom] = 0.0
    n[bottom, -1] = -1.0
    return n


def dump_mesh(mesh, path=None):
    """ASCII mesh dump; returns the text and writes it when ``path`` is given."""
    head = f"MESH v1 dim={mesh.dim}"
    if mesh.periodic:
        head += " periodic=" + ",".join(str(k) for k in mesh.periodic)
    lines = [head, str(len(mesh.vertices))]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines.append(str(len(mesh.cells)))
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.cells]
    lines.append(str(len(mesh.facets)))
    lines += [" ".join(str(int(i)) for i in row) + " " + tag.value for row, tag in zip(mesh.facets, mesh.facet_tags)]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_mesh(source):
    """Parse a mesh dump from a path or from the dump text itself."""
    if "\n" in source:
        text = source
    else:
        with open(source) as fh:
            text = fh.read()
    lines = text.splitlines()
    header = lines[0].split()
    if header[:2] != ["MESH", "v1"] or not header[2].startswith("dim="):
        raise UsageError(f"not a mesh dump: {lines[0]!r}")
    d = int(header[2][4:])
    pos = 1
    nv = int(lines[pos]); pos += 1
    vertices = np.array([[float(c) for c in lines[pos + i].split()] for i in range(nv)]).reshape(nv, d)
    pos += nv
    nc = int(lines[pos]); pos += 1
    cells = np.array([[int(c) for c in lines[pos + i].split()] for i in range(nc)], dtype=int).reshape(nc, d + 1)
    pos += nc
    nf = int(lines[pos]); pos += 1
    facets, tags = [], []
    for i in range(nf):
        parts = lines[pos + i].split()
        facets.append([int(c) for c in parts[:-1]])
        tags.append(BoundaryTag(parts[-1]))
    facets = np.array(facets, dtype=int).reshape(nf, d)
    periodic = ()
    for tok in header[3:]:
        if tok.startswith("periodic="):
            periodic = tuple(int(k) for k in tok[9:].split(","))
    return Mesh(vertices=vertices, cells=cells, facets=facets, facet_tags=tuple(tags), periodic=periodic)
