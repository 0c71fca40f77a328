"""Per-element polynomial spaces and their gradient/complement splitting.

Scalar polynomials are stored as dense coefficient arrays c of shape
(d+1, d+1), where c[r, s] multiplies X^r Y^s with X = x - x_T, Y = y - y_T
centered at the element barycenter.  Vector polynomials are pairs of such
arrays.  The splitting of degree-m vector polynomials into gradients of
degree-(m+1) scalars and the chosen complement is computed exactly, one
homogeneous degree at a time.
"""

from dataclasses import dataclass
from math import factorial

import numpy as np

from stokeslod.errors import MeshStructureError
from stokeslod.quadrature import physical_points, triangle_rule


# ---------------------------------------------------------------------------
# coefficient-array helpers

def zero_poly(degree):
    return np.zeros((degree + 1, degree + 1))


def poly_eval(c, X, Y):
    """Evaluate sum c[r,s] X^r Y^s (X, Y already centered)."""
    d = c.shape[0] - 1
    Xp = np.stack([np.power(X, r) for r in range(d + 1)])
    Yp = np.stack([np.power(Y, s) for s in range(d + 1)])
    return np.einsum("rs,r...,s...->...", c, Xp, Yp)


def poly_grad(c):
    d = c.shape[0] - 1
    cx = zero_poly(max(d - 1, 0))
    cy = zero_poly(max(d - 1, 0))
    for r in range(d + 1):
        for s in range(d + 1):
            if c[r, s] == 0.0:
                continue
            if r >= 1:
                cx[r - 1, s] += r * c[r, s]
            if s >= 1:
                cy[r, s - 1] += s * c[r, s]
    return cx, cy


def poly_degree_pad(c, degree):
    out = zero_poly(degree)
    out[: c.shape[0], : c.shape[1]] = c
    return out


def seminorm_Pm(c, m):
    """Seminorm |f|_{P^m}: l2 norm of all order-m partial derivatives of f.

    For a polynomial of degree <= m these derivatives are the constants
    D^(i,j) f = c[i, j] * i! * j! with i + j = m.
    """
    total = 0.0
    for i in range(min(m, c.shape[0] - 1) + 1):
        j = m - i
        if j < c.shape[1]:
            total += (c[i, j] * factorial(i) * factorial(j)) ** 2
    return np.sqrt(total)


def seminorm_Pm_vec(p, m):
    return np.sqrt(seminorm_Pm(p[0], m) ** 2 + seminorm_Pm(p[1], m) ** 2)


# ---------------------------------------------------------------------------
# bases of G^m and Q^m

@dataclass
class ElementPolyBasis:
    """Bases of the gradient space and its complement on one element.

    G basis functions are gradients of the centered monomials X^r Y^s with
    1 <= r+s <= m+1 (potentials kept alongside); Q basis functions are the
    rotational combinations (-r X^(r-1) Y^s, s X^r Y^(s-1)) for r, s >= 1.
    """

    element: int
    degree: int
    barycenter: np.ndarray
    G_basis: list          # list of (cx, cy) coefficient pairs
    G_potentials: list     # scalar coefficient arrays, grad(potential) = basis fn
    Q_basis: list
    Q_pairs: list          # the (r, s) exponent pair of each Q basis function

    @property
    def dim_G(self):
        return len(self.G_basis)

    @property
    def dim_Q(self):
        return len(self.Q_basis)


def build_element_basis(element, m, barycenter=(0.0, 0.0)):
    """Construct the G^m / Q^m bases for one element of order m >= 0."""
    G_basis, G_pot, Q_basis, Q_pairs = [], [], [], []
    for d in range(1, m + 2):
        for r in range(d + 1):
            s = d - r
            pot = zero_poly(d)
            pot[r, s] = 1.0
            G_pot.append(pot)
            G_basis.append(poly_grad(pot))
            if r >= 1 and s >= 1:
                qx = zero_poly(d - 1)
                qy = zero_poly(d - 1)
                qx[r - 1, s] = -r
                qy[r, s - 1] = s
                Q_basis.append((qx, qy))
                Q_pairs.append((r, s))
    return ElementPolyBasis(
        element=element,
        degree=m,
        barycenter=np.asarray(barycenter, dtype=float),
        G_basis=G_basis,
        G_potentials=G_pot,
        Q_basis=Q_basis,
        Q_pairs=Q_pairs,
    )


def decompose(p, m):
    """Split a degree-<=m vector polynomial as p = grad(phi) + q.

    Works down homogeneous degree by degree; each centered monomial block is
    resolved by the 2x2 relation between the gradient and rotational basis
    functions of that block, so the split is exact (no linear solve).

    Returns (g, q, phi) with g = poly_grad(phi).
    """
    c1 = poly_degree_pad(p[0], m)
    c2 = poly_degree_pad(p[1], m)
    phi = zero_poly(m + 1)
    qx = zero_poly(m)
    qy = zero_poly(m)
    for d in range(1, m + 2):
        for r in range(d + 1):
            s = d - r
            alpha = c1[r - 1, s] if r >= 1 else 0.0
            beta = c2[r, s - 1] if s >= 1 else 0.0
            if r >= 1 and s >= 1:
                cg = 0.5 * (alpha / r + beta / s)
                cq = 0.5 * (beta / s - alpha / r)
                phi[r, s] += cg
                qx[r - 1, s] += -r * cq
                qy[r, s - 1] += s * cq
            elif s == 0:
                phi[r, 0] += alpha / r
            else:
                phi[0, s] += beta / s
    g = poly_grad(phi)
    g = (poly_degree_pad(g[0], m), poly_degree_pad(g[1], m))
    return g, (qx, qy), phi


# ---------------------------------------------------------------------------
# piecewise polynomial fields and the element L2 projection

@dataclass
class PiecewisePolyField:
    """Discontinuous piecewise polynomial on the coarse mesh.

    coeffs has shape (nt, d+1, d+1) for scalar fields or (nt, 2, d+1, d+1)
    for vector fields; coordinates are centered at each element barycenter.
    """

    degree: int
    coeffs: np.ndarray
    barycenters: np.ndarray
    vector: bool

    def eval(self, element, points):
        X = points[..., 0] - self.barycenters[element, 0]
        Y = points[..., 1] - self.barycenters[element, 1]
        if self.vector:
            return np.stack(
                [poly_eval(self.coeffs[element, 0], X, Y),
                 poly_eval(self.coeffs[element, 1], X, Y)],
                axis=-1,
            )
        return poly_eval(self.coeffs[element], X, Y)


def _monomial_table(m, Xs, Ys):
    """Rows: quadrature points, cols: centered scaled monomials up to degree m."""
    cols = []
    for d in range(m + 1):
        for r in range(d + 1):
            cols.append(Xs ** r * Ys ** (d - r))
    return np.stack(cols, axis=-1)


def project_PiHm(f, m, mesh, vector=True, extra_degree=6):
    """Elementwise L2 projection of a sampled function onto P^m(T_H).

    f maps an array of points (..., 2) to values (...,) or (..., 2).
    Quadrature is exact for degree 2m + extra_degree integrands.
    """
    ref_pts, ref_w = triangle_rule(2 * m + extra_degree)
    verts = mesh.vertices[mesh.triangles]
    pts, w = physical_points(ref_pts, ref_w, verts[:, 0], verts[:, 1], verts[:, 2])
    bary = mesh.barycenters()
    diam = np.maximum(mesh.areas ** 0.5, 1e-300)  # length scale per element
    Xs = (pts[..., 0] - bary[:, None, 0]) / diam[:, None]
    Ys = (pts[..., 1] - bary[:, None, 1]) / diam[:, None]
    basis = _monomial_table(m, Xs, Ys)  # (nt, nq, nb)
    nb = basis.shape[-1]
    mass = np.einsum("tq,tqi,tqj->tij", w, basis, basis)
    fvals = np.asarray(f(pts))
    if vector:
        rhs = np.einsum("tq,tqi,tqc->tic", w, basis, fvals)
    else:
        rhs = np.einsum("tq,tqi,tq->ti", w, basis, fvals)[..., None]
    try:
        sol = np.linalg.solve(mass, rhs)
    except np.linalg.LinAlgError as exc:
        raise MeshStructureError("singular element mass matrix") from exc

    # unscale: coefficient of X^r Y^s is a / diam^(r+s)
    ncomp = rhs.shape[-1]
    coeffs = np.zeros((mesh.num_triangles, ncomp, m + 1, m + 1))
    idx = 0
    for d in range(m + 1):
        for r in range(d + 1):
            s = d - r
            coeffs[:, :, r, s] = sol[:, idx, :] / diam[:, None] ** d
            idx += 1
    assert idx == nb
    if vector:
        return PiecewisePolyField(m, coeffs, bary, vector=True)
    return PiecewisePolyField(m, coeffs[:, 0], bary, vector=False)


def poly_mean_over_triangle(c, verts, barycenter):
    """Integral mean of a centered polynomial over the triangle `verts`."""
    d = c.shape[0] - 1
    ref_pts, ref_w = triangle_rule(d)
    pts, w = physical_points(ref_pts, ref_w, verts[0], verts[1], verts[2])
    vals = poly_eval(c, pts[0, :, 0] - barycenter[0], pts[0, :, 1] - barycenter[1])
    area = w[0].sum()
    return float((w[0] * vals).sum() / area)


def local_pressure_lift(fT, m, verts, barycenter):
    """Split an element polynomial fT = grad(p_loc) + q with mean-zero p_loc.

    fT is a centered vector polynomial of degree <= m on the triangle with
    the given vertices/barycenter; returns (p_loc, q).
    """
    _, q, phi = decompose(fT, m)
    phi = phi.copy()
    phi[0, 0] -= poly_mean_over_triangle(phi, verts, barycenter)
    return phi, q


# ---------------------------------------------------------------------------
# face polynomial bases (shifted Legendre in arclength)

@dataclass
class FacePolyBasis:
    """Degree-m polynomial basis on one face: shifted Legendre in arclength.

    p_{F,1} is identically 1; p_{F,j} for j > 1 integrates to zero over the
    face and the basis is L2(F)-orthogonal.
    """

    face: int
    degree: int
    length: float

    @property
    def dim(self):
        return self.degree + 1

    def eval(self, j, t):
        """Evaluate p_{F,j} (1-based j) at arclength positions t in [0, length]."""
        x = 2.0 * np.asarray(t) / self.length - 1.0
        coef = np.zeros(j)
        coef[j - 1] = 1.0
        return np.polynomial.legendre.legval(x, coef)

    def gram(self):
        """Exact Gram matrix on the face (diagonal for Legendre)."""
        return np.diag([self.length / (2 * j + 1) for j in range(self.dim)])
