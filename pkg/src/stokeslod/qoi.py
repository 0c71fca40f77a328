"""Quantities of interest: multiplier space, the c-form, quasi-interpolation.

The multiplier space pairs each interior coarse face with a degree-m
Legendre basis (weighted normal flux functionals, scaled by H) and each
coarse element with the rotational complement basis (weighted moments).
The quasi-interpolation onto coarse P1 vector fields reads, per interior
node, the average normal fluxes of two well-conditioned incident faces.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from stokeslod.errors import ValidationError
from stokeslod.fem import _edges_on_segment
from stokeslod.polyspaces import FacePolyBasis, build_element_basis, poly_eval
from stokeslod.quadrature import edge_rule, physical_points, triangle_rule

MIN_NORMAL_DET = 0.1


def _edge_quadratic_shapes(s):
    """Lagrange quadratic on [0,1] through nodes at 0, 1/2, 1."""
    return np.stack([2 * s * s - 3 * s + 1, 4 * s - 4 * s * s, 2 * s * s - s], axis=-1)


@dataclass
class MultiplierSpace:
    """Face and element multiplier blocks on the coarse mesh.

    Global multiplier numbering: face dofs first, (F, j) -> J*pos(F) + j
    with pos the position of F among the interior faces, then element dofs
    (T, k) -> J*#interior + K*T + k.
    """

    hier: object
    vspace: object
    m: int
    interior_faces: np.ndarray
    face_pos: dict               # coarse face id -> position in interior list
    face_bases: list             # FacePolyBasis per interior face
    elem_bases: list             # ElementPolyBasis per coarse element
    fine_edges: list             # fine edge ids per interior face
    C: sparse.csr_matrix = field(default=None, repr=False)
    flux: sparse.csr_matrix = field(default=None, repr=False)

    @property
    def J(self):
        return self.m + 1

    @property
    def K(self):
        return len(self.elem_bases[0].Q_basis) if self.elem_bases else 0

    @property
    def num_faces(self):
        return self.interior_faces.size

    @property
    def dim(self):
        return self.J * self.num_faces + self.K * self.hier.coarse.num_triangles

    def face_dof(self, face, j):
        """Global index of the face multiplier (F, j), j is 1-based."""
        return self.J * self.face_pos[int(face)] + (j - 1)

    def elem_dof(self, element, k):
        """Global index of the element multiplier (T, k), k is 1-based."""
        return self.J * self.num_faces + self.K * element + (k - 1)

    def dofs_for_patch(self, patch):
        """Multiplier indices supported inside the patch (faces in Sigma_T^ell)."""
        idx = []
        for f in patch.interior_faces:
            base = self.J * self.face_pos[int(f)]
            idx.extend(range(base, base + self.J))
        for t in patch.members:
            base = self.J * self.num_faces + self.K * int(t)
            idx.extend(range(base, base + self.K))
        return np.asarray(idx, dtype=np.int64)


def build_multiplier_space(hier, vspace, m):
    coarse = hier.coarse
    ft = coarse.face_table
    interior = ft.interior
    face_pos = {int(f): i for i, f in enumerate(interior)}
    lengths = ft.lengths(coarse.vertices)
    face_bases = [FacePolyBasis(int(f), m, float(lengths[f])) for f in interior]
    bary = coarse.barycenters()
    elem_bases = [build_element_basis(t, m, bary[t])
                  for t in range(coarse.num_triangles)]
    fine_edges = []
    for f in interior:
        a = coarse.vertices[ft.faces[f, 0]]
        b = coarse.vertices[ft.faces[f, 1]]
        fine_edges.append(_edges_on_segment(hier.fine, a, b))
    ms = MultiplierSpace(hier, vspace, m, interior, face_pos, face_bases,
                         elem_bases, fine_edges)
    ms.C = _assemble_c_matrix(ms)
    ms.flux = _assemble_flux_matrix(ms)
    return ms


def _face_row_triplets(ms, pos, j, scale):
    """COO triplets of scale * int_F (v.n) p_{F,j} dsigma for one face."""
    hier, vspace = ms.hier, ms.vspace
    coarse_ft = hier.coarse.face_table
    fine_ft = hier.fine.face_table
    f = int(ms.interior_faces[pos])
    fb = ms.face_bases[pos]
    n = coarse_ft.normals[f]
    origin = hier.coarse.vertices[coarse_ft.faces[f, 0]]
    s, ws = edge_rule(ms.m + 2)
    shapes = _edge_quadratic_shapes(s)          # (nq, 3)
    rows, cols, data = [], [], []
    for e in ms.fine_edges[pos]:
        va, vb = fine_ft.faces[e]
        pa, pb = hier.fine.vertices[va], hier.fine.vertices[vb]
        length = np.linalg.norm(pb - pa)
        pts = pa[None, :] + s[:, None] * (pb - pa)[None, :]
        t_arc = np.linalg.norm(pts - origin[None, :], axis=1)
        leg = fb.eval(j, t_arc)
        nodes = (va, ms.vspace.edge_node[e], vb)
        w = ws * length * leg * scale
        for i, node in enumerate(nodes):
            coefs = w * shapes[:, i]
            val = coefs.sum()
            for c in (0, 1):
                rows.append(0)
                cols.append(2 * node + c)
                data.append(val * n[c])
    return rows, cols, data


def _element_row_triplets(ms, element, k, scale=1.0):
    """COO triplets of scale * int_T v . p_{T,k} dx for one coarse element."""
    hier, vspace = ms.hier, ms.vspace
    eb = ms.elem_bases[element]
    qx, qy = eb.Q_basis[k - 1]
    tris = hier.fine_triangles_of(element)
    ref_pts, ref_w = triangle_rule(ms.m + 2)
    verts = hier.fine.vertices[hier.fine.triangles[tris]]
    pts, w = physical_points(ref_pts, ref_w, verts[:, 0], verts[:, 1], verts[:, 2])
    X = pts[..., 0] - eb.barycenter[0]
    Y = pts[..., 1] - eb.barycenter[1]
    px = poly_eval(qx, X, Y)
    py = poly_eval(qy, X, Y)
    from stokeslod.kernels import p2_shape_table
    shapes = p2_shape_table(ref_pts)            # (nq, 6)
    cx = scale * np.einsum("tq,tq,qi->ti", w, px, shapes)
    cy = scale * np.einsum("tq,tq,qi->ti", w, py, shapes)
    nodes = vspace.tri_nodes[tris]
    rows = np.zeros(2 * nodes.size, dtype=np.int64)
    cols = np.concatenate([(2 * nodes).ravel(), (2 * nodes + 1).ravel()])
    data = np.concatenate([cx.ravel(), cy.ravel()])
    return rows, cols, data


def _assemble_c_matrix(ms):
    """c(v, mu) = H int_Sigma (v.n) mu + int_Omega v . bmu, all multiplier rows."""
    H = ms.hier.coarse.mesh_size
    rows, cols, data = [], [], []
    for pos in range(ms.num_faces):
        for j in range(1, ms.J + 1):
            r, c, d = _face_row_triplets(ms, pos, j, H)
            rows.extend([ms.J * pos + (j - 1)] * len(r))
            cols.extend(c)
            data.extend(d)
    for t in range(ms.hier.coarse.num_triangles):
        for k in range(1, ms.K + 1):
            r, c, d = _element_row_triplets(ms, t, k)
            rows.extend([ms.elem_dof(t, k)] * len(r))
            cols.extend(c)
            data.extend(d)
    mat = sparse.coo_matrix((data, (rows, cols)),
                            shape=(ms.dim, ms.vspace.ndof)).tocsr()
    mat.sum_duplicates()
    return mat


def _assemble_flux_matrix(ms):
    """Average normal flux rows |F|^-1 int_F v.n per interior coarse face."""
    rows, cols, data = [], [], []
    for pos in range(ms.num_faces):
        fb = ms.face_bases[pos]
        r, c, d = _face_row_triplets(ms, pos, 1, 1.0 / fb.length)
        rows.extend([pos] * len(r))
        cols.extend(c)
        data.extend(d)
    mat = sparse.coo_matrix((data, (rows, cols)),
                            shape=(ms.num_faces, ms.vspace.ndof)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_c(ms):
    from stokeslod.fem import SparseOperator
    return SparseOperator(ms.C, "multiplier", "velocity")


def assemble_cT(ms, element, kappa=None):
    """Weighted one-element variant c_T of the c-form.

    kappa maps interior coarse face id -> weight of this element's side;
    defaults to 1/2 on every face of the element.  Weights must sum to 1
    over the (two) elements sharing each face, which cannot be checked from
    one element alone; nonnegativity and support on the element boundary
    are enforced here.
    """
    coarse = ms.hier.coarse
    ft = coarse.face_table
    elem_faces = [f for f in range(ft.faces.shape[0])
                  if not ft.is_boundary[f] and element in ft.face_tris[f]]
    if kappa is None:
        kappa = {f: 0.5 for f in elem_faces}
    for f, k in kappa.items():
        if k < 0.0:
            raise ValidationError("kappa weights must be nonnegative")
        if f not in elem_faces:
            raise ValidationError("kappa supported outside the element boundary")
    H = coarse.mesh_size
    rows, cols, data = [], [], []
    for f in elem_faces:
        pos = ms.face_pos[int(f)]
        for j in range(1, ms.J + 1):
            r, c, d = _face_row_triplets(ms, pos, j, H * kappa.get(f, 0.0))
            rows.extend([ms.J * pos + (j - 1)] * len(r))
            cols.extend(c)
            data.extend(d)
    for k in range(1, ms.K + 1):
        r, c, d = _element_row_triplets(ms, element, k)
        rows.extend([ms.elem_dof(element, k)] * len(r))
        cols.extend(c)
        data.extend(d)
    from stokeslod.fem import SparseOperator
    mat = sparse.coo_matrix((data, (rows, cols)),
                            shape=(ms.dim, ms.vspace.ndof)).tocsr()
    mat.sum_duplicates()
    return SparseOperator(mat, "multiplier", "velocity")


def qoi_of(ms, v):
    """All QOI values of a fine velocity field (face then element blocks)."""
    return ms.C @ np.asarray(v)


# ---------------------------------------------------------------------------
# quasi-interpolation onto coarse P1 vector fields

@dataclass
class QuasiInterpolant:
    """Nodal quasi-interpolation from average normal face fluxes.

    Per interior coarse node: the two selected incident faces (positions in
    the interior-face list) and the inverse of their stacked normals.
    Boundary nodes map to zero.
    """

    ms: object
    node_faces: np.ndarray   # (n_coarse_vertices, 2), -1 at boundary nodes
    inv_normals: np.ndarray  # (n_coarse_vertices, 2, 2)

    def __call__(self, v):
        """Coarse P1 nodal values (n_coarse_vertices, 2) of I_H v."""
        flux = self.ms.flux @ np.asarray(v)
        out = np.zeros((self.node_faces.shape[0], 2))
        sel = np.flatnonzero(self.node_faces[:, 0] >= 0)
        rhs = flux[self.node_faces[sel]]
        out[sel] = np.einsum("zab,zb->za", self.inv_normals[sel], rhs)
        return out


def build_quasi_interpolant(ms):
    coarse = ms.hier.coarse
    ft = coarse.face_table
    boundary = coarse.boundary_vertices
    n_nodes = coarse.num_vertices
    node_faces = -np.ones((n_nodes, 2), dtype=np.int64)
    inv_normals = np.zeros((n_nodes, 2, 2))
    incident = [[] for _ in range(n_nodes)]
    for pos, f in enumerate(ms.interior_faces):
        for vtx in ft.faces[f]:
            incident[vtx].append(pos)
    for z in range(n_nodes):
        if boundary[z]:
            continue
        cands = incident[z]
        best, best_det = None, 0.0
        for ia in range(len(cands)):
            for ib in range(ia + 1, len(cands)):
                n1 = ft.normals[ms.interior_faces[cands[ia]]]
                n2 = ft.normals[ms.interior_faces[cands[ib]]]
                det = abs(n1[0] * n2[1] - n1[1] * n2[0])
                if det > best_det + 1e-14:
                    best, best_det = (cands[ia], cands[ib]), det
        if best is None or best_det < MIN_NORMAL_DET:
            raise ValidationError(f"no well-conditioned face pair at node {z}")
        node_faces[z] = best
        N = np.stack([ft.normals[ms.interior_faces[best[0]]],
                      ft.normals[ms.interior_faces[best[1]]]])
        inv_normals[z] = np.linalg.inv(N)
    return QuasiInterpolant(ms, node_faces, inv_normals)


def coarse_nodal_lift(iH, face, j):
    """Nodal coefficients theta_z of I_H applied to the (F, j) target fluxes.

    The target prescribes average normal fluxes delta_EF * delta_j1 on all
    interior faces, so theta vanishes identically for j > 1 and, for j = 1,
    at every node whose selected face pair does not contain F.
    """
    ms = iH.ms
    n_nodes = iH.node_faces.shape[0]
    theta = np.zeros((n_nodes, 2))
    if j != 1:
        return theta
    pos = ms.face_pos[int(face)]
    for z in range(n_nodes):
        fa, fb = iH.node_faces[z]
        if fa < 0:
            continue
        rhs = np.array([1.0 if fa == pos else 0.0, 1.0 if fb == pos else 0.0])
        if rhs.any():
            theta[z] = iH.inv_normals[z] @ rhs
    return theta


# ---------------------------------------------------------------------------
# coarse P1 fields on the fine P2 space

def p1_nodal_to_fine(hier, vspace, nodal):
    """Interpolate a coarse P1 vector field (nodal values) into fine P2 dofs."""
    coarse = hier.coarse
    fine = hier.fine
    out = np.zeros(vspace.ndof)
    # barycentric coordinates of each fine P2 node w.r.t. its coarse parent
    tri_pts = coarse.vertices[coarse.triangles]
    node_vals = np.zeros((vspace.n_nodes, 2))
    seen = np.zeros(vspace.n_nodes, dtype=bool)
    for t in range(fine.num_triangles):
        parent = hier.fine_parent[t]
        p = tri_pts[parent]
        T = np.column_stack([p[1] - p[0], p[2] - p[0]])
        Tinv = np.linalg.inv(T)
        for node in vspace.tri_nodes[t]:
            if seen[node]:
                continue
            lam12 = Tinv @ (vspace.node_coords[node] - p[0])
            lam = np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])
            node_vals[node] = lam @ nodal[coarse.triangles[parent]]
            seen[node] = True
    out[0::2] = node_vals[:, 0]
    out[1::2] = node_vals[:, 1]
    return out


def interp_IH_fine(iH, hier, vspace, v):
    """I_H v as a fine P2 dof vector (for residual checks and norms)."""
    return p1_nodal_to_fine(hier, vspace, iH(v))
