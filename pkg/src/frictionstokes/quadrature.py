"""Quadrature rules on the reference simplex and on flat facets."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def _jacobi01(n, alpha):
    # Gauss-Jacobi on [0, 1] for the weight (1 - t)**alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim, npts):
    """Conical-product rule on the unit simplex {x_i >= 0, sum x_i <= 1}.

    ``npts`` points per direction, exact for polynomials of degree ``2*npts - 1``.
    Returns ``(points, weights)`` with ``points`` of shape (nq, dim).
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    if dim == 1:
        x, w = roots_legendre(npts)
        return (0.5 * (x + 1.0))[:, None], 0.5 * w
    rules = [_jacobi01(npts, dim - k - 1) for k in range(dim)]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    t = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    pts = np.empty_like(t)
    scale = np.ones(t.shape[0])
    for k in range(dim):
        pts[:, k] = t[:, k] * scale
        scale = scale * (1.0 - t[:, k])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


def rule_for_degree(dim, degree):
    return simplex_rule(dim, max(1, (degree + 2) // 2))


def barycentric(points):
    """Barycentric coordinates (lambda_0, ..., lambda_d) of reference points."""
    points = np.atleast_2d(points)
    return np.hstack([1.0 - points.sum(axis=1, keepdims=True), points])


def facet_rule(dim):
    """Default rule on a boundary facet: 3-point Gauss on edges, degree-5 on triangles."""
    if dim == 2:
        return simplex_rule(1, 3)
    return simplex_rule(2, 3)


@lru_cache(maxsize=None)
def composite_rule(dim, nsub, npts):
    """``simplex_rule`` repeated on a regular split of the unit simplex.

    In 2D the triangle is cut into nsub**2 congruent triangles; in 3D the
    plain rule is returned with ``nsub * npts`` points per direction.
    """
    if dim != 2 or nsub == 1:
        return simplex_rule(dim, npts * nsub if dim != 2 else npts)
    qp, qw = simplex_rule(2, npts)
    h = 1.0 / nsub
    pts, wts = [], []
    for i in range(nsub):
        for j in range(nsub - i):
            base = np.array([i * h, j * h])
            pts.append(base + h * qp)
            wts.append(qw * h * h)
            if i + j < nsub - 1:
                # the flipped triangle of the same lattice square
                corner = np.array([(i + 1) * h, (j + 1) * h])
                pts.append(corner - h * qp)
                wts.append(qw * h * h)
    pts = np.vstack(pts)
    w = np.concatenate(wts)
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w
