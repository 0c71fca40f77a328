"""Hot per-triangle assembly kernels.

Two interchangeable backends compute the same element matrices for the
P2 velocity / P1dg pressure pair: a numba @njit path and a vectorized
pure-numpy path.  Set STOKESLOD_NO_NUMBA=1 (or lack numba) to force the
numpy path; `backend_name()` reports which one is active.
"""

import os

import numpy as np

from stokeslod.quadrature import triangle_rule

_USE_NUMBA = os.environ.get("STOKESLOD_NO_NUMBA", "0") != "1"
if _USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        _USE_NUMBA = False


def backend_name():
    return "numba" if _USE_NUMBA else "numpy"


# reference P2 shape functions on the unit triangle, node order
# (v0, v1, v2, m01, m12, m20)
def _p2_shape(x, y):
    l0 = 1.0 - x - y
    l1 = x
    l2 = y
    return np.array([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ])


def _p2_grad(x, y):
    l0 = 1.0 - x - y
    d0 = np.array([-1.0, -1.0])
    d1 = np.array([1.0, 0.0])
    d2 = np.array([0.0, 1.0])
    return np.array([
        (4 * l0 - 1) * d0, (4 * x - 1) * d1, (4 * y - 1) * d2,
        4 * (x * d0 + l0 * d1), 4 * (y * d1 + x * d2), 4 * (l0 * d2 + y * d0),
    ])


def _tables():
    pts2, w2 = triangle_rule(2)
    pts4, w4 = triangle_rule(4)
    grad2 = np.stack([_p2_grad(x, y) for x, y in pts2])        # (nq2, 6, 2)
    lam2 = np.stack([[1 - x - y, x, y] for x, y in pts2])      # (nq2, 3)
    shape4 = np.stack([_p2_shape(x, y) for x, y in pts4])      # (nq4, 6)
    mass_ref = np.einsum("q,qi,qj->ij", 2.0 * w4, shape4, shape4)
    return pts2, np.asarray(w2), grad2, lam2, mass_ref


_PTS2, _W2, _GRAD2, _LAM2, _MASS_REF = _tables()


def _geometry(vertices, triangles):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = np.empty((triangles.shape[0], 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    return det, inv


def _element_matrices_numpy(vertices, triangles, nu, sigma):
    det, jinv = _geometry(vertices, triangles)
    # physical gradients: g[t,q,i,d] = grad_ref[q,i,k] * jinv[t,k,d]
    g = np.einsum("qik,tkd->tqid", _GRAD2, jinv)
    stiff = np.einsum("q,t,tqid,tqjd->tij", 2.0 * _W2, det, g, g)
    amat = nu[:, None, None] * stiff + (sigma * det)[:, None, None] * _MASS_REF
    bmat = -np.einsum("q,t,qa,tqid->taid", 2.0 * _W2, det, _LAM2, g)
    return amat, bmat.reshape(triangles.shape[0], 3, 12)


if _USE_NUMBA:

    @numba.njit(cache=True, parallel=True)
    def _element_matrices_njit(vertices, triangles, nu, sigma,
                               w2, grad2, lam2, mass_ref):
        nt = triangles.shape[0]
        nq = w2.shape[0]
        amat = np.zeros((nt, 6, 6))
        bmat = np.zeros((nt, 3, 12))
        for t in numba.prange(nt):
            i0, i1, i2 = triangles[t, 0], triangles[t, 1], triangles[t, 2]
            e1x = vertices[i1, 0] - vertices[i0, 0]
            e1y = vertices[i1, 1] - vertices[i0, 1]
            e2x = vertices[i2, 0] - vertices[i0, 0]
            e2y = vertices[i2, 1] - vertices[i0, 1]
            det = e1x * e2y - e1y * e2x
            j00, j01 = e2y / det, -e2x / det
            j10, j11 = -e1y / det, e1x / det
            for q in range(nq):
                wq = 2.0 * w2[q] * det
                gx = np.empty(6)
                gy = np.empty(6)
                for i in range(6):
                    rx = grad2[q, i, 0]
                    ry = grad2[q, i, 1]
                    gx[i] = rx * j00 + ry * j10
                    gy[i] = rx * j01 + ry * j11
                for i in range(6):
                    for j in range(6):
                        amat[t, i, j] += nu[t] * wq * (gx[i] * gx[j] + gy[i] * gy[j])
                for a in range(3):
                    for i in range(6):
                        bmat[t, a, 2 * i] -= wq * lam2[q, a] * gx[i]
                        bmat[t, a, 2 * i + 1] -= wq * lam2[q, a] * gy[i]
            for i in range(6):
                for j in range(6):
                    amat[t, i, j] += sigma[t] * det * mass_ref[i, j]
        return amat, bmat


def element_matrices(vertices, triangles, nu, sigma):
    """Per-triangle scalar P2 matrices of (nu grad u, grad v) + (sigma u, v),
    and the 3x12 pressure-divergence coupling blocks b(v, q) = -(q, div v).

    The scalar 6x6 matrix acts identically on both velocity components.
    """
    nu = np.ascontiguousarray(nu, dtype=float)
    sigma = np.ascontiguousarray(sigma, dtype=float)
    if _USE_NUMBA:
        return _element_matrices_njit(
            np.ascontiguousarray(vertices), np.ascontiguousarray(triangles),
            nu, sigma, np.ascontiguousarray(_W2),
            np.ascontiguousarray(_GRAD2), np.ascontiguousarray(_LAM2),
            np.ascontiguousarray(_MASS_REF))
    return _element_matrices_numpy(vertices, triangles, nu, sigma)


def p2_shape_table(points):
    """P2 shape values at reference points, shape (npts, 6)."""
    return np.stack([_p2_shape(x, y) for x, y in np.atleast_2d(points)])
