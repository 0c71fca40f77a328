"""Quadrature rules: collapsed Gauss rules on triangles, Gauss-Legendre on edges."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Points/weights on the reference triangle {(x,y): x,y>=0, x+y<=1}.

    Tensor Gauss-Legendre on the unit square collapsed with the Duffy map
    (x, y) = (u, v(1-u)); with n >= (degree+2)/2 points per direction the
    rule integrates all polynomials of total degree <= `degree` exactly.
    """
    n = max(1, -(-(degree + 2) // 2))
    x1, w1 = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x1 + 1.0)
    wu = 0.5 * w1
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = (WU * WV * (1.0 - U)).ravel()
    points = np.column_stack([x, y])
    points.setflags(write=False)
    w.setflags(write=False)
    return points, w


def physical_points(ref_points, ref_weights, p0, p1, p2):
    """Map a reference-triangle rule to the physical triangle (p0, p1, p2).

    Vertex arrays may be batched with shape (nt, 2); returns points of shape
    (nt, nq, 2) and weights (nt, nq).
    """
    p0 = np.atleast_2d(p0)
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    e1 = p1 - p0
    e2 = p2 - p0
    jac = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (
        p0[:, None, :]
        + ref_points[None, :, 0, None] * e1[:, None, :]
        + ref_points[None, :, 1, None] * e2[:, None, :]
    )
    w = jac[:, None] * ref_weights[None, :]
    return pts, w


@lru_cache(maxsize=None)
def edge_rule(degree):
    """Gauss-Legendre points/weights on [0, 1], exact to the given degree."""
    n = max(1, -(-(degree + 1) // 2))
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    t.setflags(write=False)
    wt.setflags(write=False)
    return t, wt
