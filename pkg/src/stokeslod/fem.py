"""Fine-scale Scott-Vogelius discretization (P2 velocity / P1dg pressure).

The velocity space lives on the barycentric-refined fine mesh with zero
boundary values; its divergence lies pointwise in the discontinuous P1
pressure space, so the discrete solutions are exactly divergence-free.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from stokeslod import kernels
from stokeslod.errors import SolverError, ValidationError
from stokeslod.kernels import p2_shape_table
from stokeslod.quadrature import triangle_rule, physical_points

GEOM_TOL = 1e-12


@dataclass
class CoefficientField:
    """Viscosity/damping values per fine triangle, with generation metadata."""

    nu: np.ndarray
    sigma: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(self.nu <= 0.0):
            raise ValidationError("viscosity must be strictly positive")
        if np.any(self.sigma < 0.0):
            raise ValidationError("damping must be nonnegative")

    @staticmethod
    def constant(num_triangles, nu=1.0, sigma=0.0):
        return CoefficientField(
            np.full(num_triangles, float(nu)), np.full(num_triangles, float(sigma)))


@dataclass
class SparseOperator:
    """CSR matrix with its dof interpretation and a symmetry flag."""

    matrix: sparse.csr_matrix
    row_space: str
    col_space: str
    symmetric: bool = False

    def __matmul__(self, other):
        return self.matrix @ other


@dataclass
class VelocitySpace:
    """Continuous vector P2 on the fine mesh, zero on the domain boundary.

    Scalar nodes are the mesh vertices followed by the edge midpoints; each
    node carries an x and a y dof, interleaved (dof = 2*node + component).
    """

    mesh: object
    node_coords: np.ndarray   # (n_nodes, 2)
    tri_nodes: np.ndarray     # (nt, 6): v0 v1 v2 m01 m12 m20
    edge_node: np.ndarray     # midpoint node index per fine edge
    free_node: np.ndarray     # (n_nodes,) bool

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def ndof(self):
        return 2 * self.n_nodes

    @property
    def free_dofs(self):
        return np.flatnonzero(np.repeat(self.free_node, 2))

    def tri_vdofs(self):
        """(nt, 12) velocity dof table, local order (2*i + comp)."""
        nodes = self.tri_nodes
        out = np.empty((nodes.shape[0], 12), dtype=np.int64)
        out[:, 0::2] = 2 * nodes
        out[:, 1::2] = 2 * nodes + 1
        return out


def build_velocity_space(mesh):
    ft = mesh.face_table
    nv = mesh.num_vertices
    edge_node = nv + np.arange(ft.faces.shape[0])
    node_coords = np.vstack([
        mesh.vertices,
        0.5 * (mesh.vertices[ft.faces[:, 0]] + mesh.vertices[ft.faces[:, 1]]),
    ])
    tris = mesh.triangles
    tri_nodes = np.empty((mesh.num_triangles, 6), dtype=np.int64)
    tri_nodes[:, :3] = tris
    for t in range(mesh.num_triangles):
        i, j, k = tris[t]
        tri_nodes[t, 3] = edge_node[ft.edge_index[(int(min(i, j)), int(max(i, j)))]]
        tri_nodes[t, 4] = edge_node[ft.edge_index[(int(min(j, k)), int(max(j, k)))]]
        tri_nodes[t, 5] = edge_node[ft.edge_index[(int(min(k, i)), int(max(k, i)))]]
    free = np.ones(node_coords.shape[0], dtype=bool)
    free[: nv] = ~mesh.boundary_vertices
    free[edge_node[ft.is_boundary]] = False
    return VelocitySpace(mesh, node_coords, tri_nodes, edge_node, free)


@dataclass
class PressureSpace:
    """Discontinuous P1 scalars on the fine mesh; dof = 3*triangle + vertex."""

    mesh: object

    @property
    def ndof(self):
        return 3 * self.mesh.num_triangles

    def integral_weights(self):
        """Vector w with w.q = integral of q over the domain."""
        return np.repeat(self.mesh.areas / 3.0, 3)


@dataclass
class FineSolution:
    u: np.ndarray  # full velocity dof vector (zeros on boundary dofs)
    p: np.ndarray  # pressure dofs, global mean zero


# ---------------------------------------------------------------------------
# assembly

def _expand_scalar_blocks(amat, vspace):
    """Scatter per-triangle scalar 6x6 blocks into the 2-component CSR."""
    nodes = vspace.tri_nodes
    nt = nodes.shape[0]
    rows = np.empty((nt, 6, 6, 2), dtype=np.int64)
    cols = np.empty_like(rows)
    for c in (0, 1):
        rows[..., c] = (2 * nodes + c)[:, :, None]
        cols[..., c] = (2 * nodes + c)[:, None, :]
    data = np.repeat(amat[..., None], 2, axis=-1)
    mat = sparse.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(vspace.ndof, vspace.ndof)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_a(coeff, vspace, triangles=None):
    """Assemble (nu grad u, grad v) + (sigma u, v) on the full dof set.

    `triangles` restricts the integration domain to a subset of fine
    triangles (used for the element-restricted form a_T).
    """
    mesh = vspace.mesh
    nu, sigma = coeff.nu, coeff.sigma
    tris = mesh.triangles
    vsub = vspace
    if triangles is not None:
        sel = np.asarray(triangles)
        amat, _ = kernels.element_matrices(mesh.vertices, tris[sel], nu[sel], sigma[sel])
        nodes = vspace.tri_nodes[sel]
        vsub = VelocitySpace(mesh, vspace.node_coords, nodes, vspace.edge_node,
                             vspace.free_node)
    else:
        amat, _ = kernels.element_matrices(mesh.vertices, tris, nu, sigma)
    mat = _expand_scalar_blocks(amat, vsub)
    return SparseOperator(mat, "velocity", "velocity", symmetric=True)


def velocity_stiffness(vspace):
    c = CoefficientField.constant(vspace.mesh.num_triangles, nu=1.0, sigma=0.0)
    return assemble_a(c, vspace)


def velocity_mass(vspace):
    mesh = vspace.mesh
    amat_stiff, _ = kernels.element_matrices(mesh.vertices, mesh.triangles,
                                             np.ones(mesh.num_triangles),
                                             np.zeros(mesh.num_triangles))
    amat_full, _ = kernels.element_matrices(mesh.vertices, mesh.triangles,
                                            np.ones(mesh.num_triangles),
                                            np.ones(mesh.num_triangles))
    mass = amat_full - amat_stiff
    return SparseOperator(_expand_scalar_blocks(mass, vspace),
                          "velocity", "velocity", symmetric=True)


def assemble_b(vspace, pspace, triangles=None):
    """Assemble b(v, q) = -(q, div v) coupling velocity to P1dg pressure."""
    mesh = vspace.mesh
    sel = np.arange(mesh.num_triangles) if triangles is None else np.asarray(triangles)
    _, bmat = kernels.element_matrices(
        mesh.vertices, mesh.triangles[sel],
        np.ones(sel.size), np.zeros(sel.size))
    vdofs = vspace.tri_vdofs()[sel]                      # (ns, 12)
    prow = (3 * sel[:, None] + np.arange(3)[None, :])    # (ns, 3)
    rows = np.broadcast_to(prow[:, :, None], bmat.shape)
    cols = np.broadcast_to(vdofs[:, None, :], bmat.shape)
    mat = sparse.coo_matrix(
        (bmat.ravel(), (rows.ravel(), cols.ravel())),
        shape=(pspace.ndof, vspace.ndof)).tocsr()
    return SparseOperator(mat, "pressure", "velocity")


def pressure_mass(pspace):
    areas = pspace.mesh.areas
    block = (np.eye(3) + np.ones((3, 3))) / 12.0
    data = areas[:, None, None] * block
    idx = 3 * np.arange(pspace.ndof // 3)[:, None] + np.arange(3)[None, :]
    rows = np.broadcast_to(idx[:, :, None], data.shape)
    cols = np.broadcast_to(idx[:, None, :], data.shape)
    mat = sparse.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                            shape=(pspace.ndof, pspace.ndof)).tocsr()
    return SparseOperator(mat, "pressure", "pressure", symmetric=True)


def load_vector(vspace, f, degree=8):
    """Assemble (f, v) for all P2 velocity basis functions."""
    mesh = vspace.mesh
    ref_pts, ref_w = triangle_rule(degree)
    verts = mesh.vertices[mesh.triangles]
    pts, w = physical_points(ref_pts, ref_w, verts[:, 0], verts[:, 1], verts[:, 2])
    fv = np.asarray(f(pts))                            # (nt, nq, 2)
    shapes = p2_shape_table(ref_pts)                   # (nq, 6)
    contrib = np.einsum("tq,tqc,qi->tic", w, fv, shapes)
    out = np.zeros(vspace.ndof)
    for c in (0, 1):
        np.add.at(out, 2 * vspace.tri_nodes + c, contrib[..., c])
    return out


def coarse_mean_rows(pspace, fine_parent, num_coarse):
    """Matrix D with (D q)_K = integral of q over coarse element K."""
    areas = pspace.mesh.areas
    rows = np.repeat(fine_parent, 3)
    cols = np.arange(pspace.ndof)
    data = np.repeat(areas / 3.0, 3)
    return sparse.coo_matrix((data, (rows, cols)),
                             shape=(num_coarse, pspace.ndof)).tocsr()


# ---------------------------------------------------------------------------
# reference solve and error norms

def solve_reference(vspace, pspace, coeff, f, degree=8):
    """Solve the fine Scott-Vogelius Stokes system with mean-zero pressure."""
    A = assemble_a(coeff, vspace).matrix
    B = assemble_b(vspace, pspace).matrix
    free = vspace.free_dofs
    Af = A[free][:, free]
    Bf = B[:, free]
    w = pspace.integral_weights()
    K = sparse.bmat(
        [[Af, Bf.T, None],
         [Bf, None, w[:, None]],
         [None, w[None, :], None]], format="csc")
    rhs = np.concatenate([load_vector(vspace, f, degree)[free],
                          np.zeros(pspace.ndof + 1)])
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError(f"fine saddle factorization failed: {exc}") from exc
    sol = lu.solve(rhs)
    u = np.zeros(vspace.ndof)
    u[free] = sol[: free.size]
    p = sol[free.size: free.size + pspace.ndof]
    return FineSolution(u=u, p=p)


def error_norms(vspace, u_ref, u_other, stiffness=None, mass=None):
    """(H1-seminorm, L2) distance between two fine velocity dof vectors."""
    u_ref = np.asarray(u_ref)
    u_other = np.asarray(u_other)
    if u_ref.shape != (vspace.ndof,) or u_other.shape != (vspace.ndof,):
        raise ValidationError("velocity dof vectors do not match the space")
    S = (stiffness if stiffness is not None else velocity_stiffness(vspace)).matrix
    M = (mass if mass is not None else velocity_mass(vspace)).matrix
    e = u_ref - u_other
    return float(np.sqrt(max(e @ (S @ e), 0.0))), float(np.sqrt(max(e @ (M @ e), 0.0)))


def pressure_error(pspace, p_ref, p_other, mass=None):
    M = (mass if mass is not None else pressure_mass(pspace)).matrix
    e = np.asarray(p_ref) - np.asarray(p_other)
    return float(np.sqrt(max(e @ (M @ e), 0.0)))


def divergence_norm(vspace, pspace, u):
    """L2 norm of div(u): exact because div V_h lies in the pressure space."""
    B = assemble_b(vspace, pspace).matrix
    Mp = pressure_mass(pspace).matrix
    # div u in nodal P1dg coordinates: solve Mp d = -B u
    d = spla.spsolve(Mp.tocsc(), -(B @ u))
    return float(np.sqrt(max(d @ (Mp @ d), 0.0)))


# ---------------------------------------------------------------------------
# diagnostic constants (inf-sup witness, local Poincare)

def _edges_on_segment(mesh, a, b, tol=GEOM_TOL):
    """Fine-mesh edge indices whose endpoints both lie on segment [a, b]."""
    ft = mesh.face_table
    p = mesh.vertices
    ab = b - a
    L2 = float(ab @ ab)
    d0 = p[ft.faces[:, 0]] - a
    d1 = p[ft.faces[:, 1]] - a
    on0 = (np.abs(np.cross(d0, ab)) <= tol) & (d0 @ ab >= -tol) & (d0 @ ab <= L2 + tol)
    on1 = (np.abs(np.cross(d1, ab)) <= tol) & (d1 @ ab >= -tol) & (d1 @ ab <= L2 + tol)
    return np.flatnonzero(on0 & on1)


def normal_flux_rows(vspace, segments, tol=GEOM_TOL):
    """Rows of int_F (v . n) d_sigma for straight segments F = (a, b, n).

    Each segment is a tuple (a, b, normal); the integral is assembled from
    the fine edges lying on the segment (P2 trace is quadratic per edge,
    Simpson weights are exact).
    """
    mesh = vspace.mesh
    ft = mesh.face_table
    rows, cols, data = [], [], []
    for k, (a, b, n) in enumerate(segments):
        edges = _edges_on_segment(mesh, np.asarray(a), np.asarray(b), tol)
        for e in edges:
            va, vb = ft.faces[e]
            mid = vspace.edge_node[e]
            length = np.linalg.norm(mesh.vertices[vb] - mesh.vertices[va])
            for node, wgt in ((va, length / 6.0), (vb, length / 6.0),
                              (mid, 4.0 * length / 6.0)):
                for c in (0, 1):
                    rows.append(k)
                    cols.append(2 * node + c)
                    data.append(wgt * n[c])
    return sparse.coo_matrix((data, (rows, cols)),
                             shape=(len(segments), vspace.ndof)).tocsr()


def infsup_witness(hier):
    """Smallest eigenvalue of the mass-preconditioned pressure Schur complement.

    Computed on the mean-zero pressure subspace; a mesh-independent lower
    bound witnesses the discrete inf-sup stability of the pair.
    """
    vspace = build_velocity_space(hier.fine)
    pspace = PressureSpace(hier.fine)
    coeff = CoefficientField.constant(hier.fine.num_triangles)
    A = assemble_a(coeff, vspace).matrix
    B = assemble_b(vspace, pspace).matrix
    free = vspace.free_dofs
    lu = spla.splu(A[free][:, free].tocsc())
    Bf = B[:, free].toarray()
    S = Bf @ lu.solve(Bf.T)
    # exact inverse-sqrt of the block-diagonal P1dg mass matrix
    areas = hier.fine.areas
    scale = np.repeat(np.sqrt(12.0 / areas), 3)
    Shat = S * scale[:, None] * scale[None, :]
    J = np.ones((3, 3)) / 6.0
    nt = hier.fine.num_triangles
    Shat = Shat.reshape(nt, 3, nt, 3)
    blk = np.eye(3) - J
    Shat = np.einsum("ab,ibjc,cd->iajd", blk, Shat, blk).reshape(3 * nt, 3 * nt)
    # deflate the constant-pressure null mode
    m = np.repeat(np.sqrt(areas / 12.0), 3) * 2.0  # Mp^(1/2) applied to ones
    m /= np.linalg.norm(m)
    Shat += np.outer(m, m)
    import scipy.linalg as sla
    vals = sla.eigh(0.5 * (Shat + Shat.T), eigvals_only=True,
                    subset_by_index=[0, 0])
    return float(vals[0])


def local_poincare_constant(hier, coarse_element=0):
    """Empirical constant C in ||v||_T <= sqrt(C) H ||grad v||_T for fine
    velocity fields with zero normal face integrals on all faces of T."""
    import scipy.linalg as sla

    mesh = hier.fine
    vspace = build_velocity_space(mesh)
    tris = hier.fine_triangles_of(coarse_element)
    nodes = np.unique(vspace.tri_nodes[tris].ravel())
    loc = -np.ones(vspace.n_nodes, dtype=np.int64)
    loc[nodes] = np.arange(nodes.size)

    cK = CoefficientField.constant(mesh.num_triangles, nu=1.0, sigma=0.0)
    S = assemble_a(cK, vspace, triangles=tris).matrix
    amat_full, _ = kernels.element_matrices(mesh.vertices, mesh.triangles[tris],
                                            np.ones(tris.size), np.ones(tris.size))
    amat_stiff, _ = kernels.element_matrices(mesh.vertices, mesh.triangles[tris],
                                             np.ones(tris.size), np.zeros(tris.size))
    sub = VelocitySpace(mesh, vspace.node_coords, vspace.tri_nodes[tris],
                        vspace.edge_node, vspace.free_node)
    Mloc = _expand_scalar_blocks(amat_full - amat_stiff, sub)

    dofs = np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()
    Sd = S[dofs][:, dofs].toarray()
    Md = Mloc[dofs][:, dofs].toarray()

    coarse = hier.coarse
    i, j, k = coarse.triangles[coarse_element]
    corners = coarse.vertices[[i, j, k]]
    segs = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        t = corners[b] - corners[a]
        n = np.array([t[1], -t[0]])
        n /= np.linalg.norm(n)
        segs.append((corners[a], corners[b], n))
    C = normal_flux_rows(vspace, segs)[:, dofs].toarray()
    Z = sla.null_space(C)
    vals = sla.eigh(Z.T @ Md @ Z, Z.T @ Sd @ Z, eigvals_only=True)
    lam_max = float(vals[-1])
    H = hier.coarse.mesh_size
    return lam_max / H ** 2
