"""Localized orthogonal decomposition for heterogeneous Stokes flow.

Builds the multiscale velocity basis by solving, per coarse element, a
constrained fine-scale saddle problem on an ell-layer patch: minimize the
energy of the correction subject to (i) divergence piecewise constant on
the coarse mesh and (ii) prescribed weighted face-flux and element-moment
functionals.  When every patch covers the whole domain the per-element
solves share one factorization and collapse to a single batched solve per
basis function.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from stokeslod.errors import SolverError, ValidationError
from stokeslod.fem import (PressureSpace, assemble_a, assemble_b,
                           build_velocity_space, coarse_mean_rows,
                           load_vector, velocity_stiffness, velocity_mass)
from stokeslod.mesh import patch as make_patch
from stokeslod.polyspaces import (PiecewisePolyField, local_pressure_lift,
                                  poly_eval, project_PiHm)
from stokeslod.qoi import (assemble_cT, build_multiplier_space,
                           build_quasi_interpolant, coarse_nodal_lift,
                           p1_nodal_to_fine)
from stokeslod.quadrature import physical_points, triangle_rule

RESIDUAL_TOL = 1e-9


@dataclass
class LodOperator:
    """Precomputed fine-scale operators and patch structure for one (H, h, m, ell)."""

    hier: object
    coeff: object
    m: int
    ell: int
    vspace: object
    pspace: object
    ms: object
    iH: object
    A: sparse.csr_matrix = field(repr=False)
    B: sparse.csr_matrix = field(repr=False)
    D: sparse.csr_matrix = field(repr=False)
    patches: list = field(repr=False)
    covers_domain: bool = False
    _stiff: object = field(default=None, repr=False)
    _mass: object = field(default=None, repr=False)
    _patch_lu: dict = field(default_factory=dict, repr=False)
    _global_lu: object = field(default=None, repr=False)

    @property
    def velocity_seminorm_matrix(self):
        if self._stiff is None:
            self._stiff = velocity_stiffness(self.vspace).matrix
        return self._stiff

    @property
    def velocity_mass_matrix(self):
        if self._mass is None:
            self._mass = velocity_mass(self.vspace).matrix
        return self._mass


def build_lod(hier, coeff, m, ell):
    if ell < 1:
        raise ValidationError("need at least one patch layer")
    vspace = build_velocity_space(hier.fine)
    pspace = PressureSpace(hier.fine)
    ms = build_multiplier_space(hier, vspace, m)
    iH = build_quasi_interpolant(ms)
    A = assemble_a(coeff, vspace).matrix
    B = assemble_b(vspace, pspace).matrix
    D = coarse_mean_rows(pspace, hier.fine_parent, hier.coarse.num_triangles)
    patches = [make_patch(hier.coarse, t, ell)
               for t in range(hier.coarse.num_triangles)]
    covers = all(p.covers_domain for p in patches)
    return LodOperator(hier, coeff, m, ell, vspace, pspace, ms, iH,
                       A, B, D, patches, covers)


# ---------------------------------------------------------------------------
# saddle systems

def _patch_index_sets(lod, patch):
    hier, vspace = lod.hier, lod.vspace
    tris = np.concatenate([hier.fine_triangles_of(t) for t in patch.members])
    total = np.zeros(vspace.n_nodes, dtype=np.int64)
    np.add.at(total, vspace.tri_nodes.ravel(), 1)
    inside = np.zeros(vspace.n_nodes, dtype=np.int64)
    np.add.at(inside, vspace.tri_nodes[tris].ravel(), 1)
    free = np.flatnonzero((inside == total) & vspace.free_node)
    vidx = np.empty(2 * free.size, dtype=np.int64)
    vidx[0::2] = 2 * free
    vidx[1::2] = 2 * free + 1
    pidx = (3 * tris[:, None] + np.arange(3)[None, :]).ravel()
    midx = lod.ms.dofs_for_patch(patch)
    cidx = patch.members
    return vidx, pidx, midx, cidx


def _saddle_lu(lod, vidx, pidx, midx, cidx):
    Af = lod.A[vidx][:, vidx]
    Bf = lod.B[pidx][:, vidx]
    Cf = lod.ms.C[midx][:, vidx]
    Df = lod.D[cidx][:, pidx]
    K = sparse.bmat([
        [Af, Bf.T, Cf.T, None],
        [Bf, None, None, Df.T],
        [Cf, None, None, None],
        [None, Df, None, None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError(f"corrector saddle factorization failed: {exc}")
    return lu, K


def _get_patch_lu(lod, element):
    if element not in lod._patch_lu:
        idx = _patch_index_sets(lod, lod.patches[element])
        lu, K = _saddle_lu(lod, *idx)
        lod._patch_lu[element] = (lu, K, idx)
    return lod._patch_lu[element]


def _get_global_lu(lod):
    if lod._global_lu is None:
        vidx = lod.vspace.free_dofs
        pidx = np.arange(lod.pspace.ndof)
        midx = np.arange(lod.ms.dim)
        cidx = np.arange(lod.hier.coarse.num_triangles)
        lu, K = _saddle_lu(lod, vidx, pidx, midx, cidx)
        lod._global_lu = (lu, K, (vidx, pidx, midx, cidx))
    return lod._global_lu


def _check_residual(K, x, rhs):
    res = np.abs(K @ x - rhs).max()
    scale = max(1.0, np.abs(rhs).max())
    if not res <= RESIDUAL_TOL * scale:
        raise SolverError(f"corrector residual {res:.3e} exceeds tolerance")


# ---------------------------------------------------------------------------
# right-hand sides

def _face_target(lod, face, j, weight):
    """Multiplier-space target of the (F, j) basis with the given face weight."""
    tgt = np.zeros(lod.ms.dim)
    H = lod.hier.coarse.mesh_size
    length = lod.ms.face_bases[lod.ms.face_pos[int(face)]].length
    tgt[lod.ms.face_dof(face, j)] = weight * H * length / (2 * j - 1)
    return tgt


def _element_target(lod, element, k):
    """Moments of the Q-basis function k against the whole block on one element."""
    eb = lod.ms.elem_bases[element]
    verts = lod.hier.coarse.vertices[lod.hier.coarse.triangles[element]]
    ref_pts, ref_w = triangle_rule(2 * lod.m + 2)
    pts, w = physical_points(ref_pts, ref_w, verts[0], verts[1], verts[2])
    X = pts[0, :, 0] - eb.barycenter[0]
    Y = pts[0, :, 1] - eb.barycenter[1]
    vals = np.stack([[poly_eval(qx, X, Y), poly_eval(qy, X, Y)]
                     for qx, qy in eb.Q_basis])          # (K, 2, nq)
    gram = np.einsum("q,acq,bcq->ab", w[0], vals, vals)
    tgt = np.zeros(lod.ms.dim)
    for kk in range(1, lod.ms.K + 1):
        tgt[lod.ms.elem_dof(element, kk)] = gram[k - 1, kk - 1]
    return tgt


def _face_support(lod, face, j):
    """Coarse elements whose correctors contribute to the (F, j) basis."""
    coarse = lod.hier.coarse
    ft = coarse.face_table
    if j > 1:
        return [int(t) for t in ft.face_tris[face] if t >= 0]
    v2t = coarse.vertex_to_triangles()
    supp = set()
    for vtx in ft.faces[face]:
        supp.update(int(t) for t in v2t[vtx])
    return sorted(supp)


def _element_rhs(lod, element, v0, target):
    """Full-space corrector right-hand side restricted to one coarse element."""
    tris = lod.hier.fine_triangles_of(element)
    r3 = target - assemble_cT(lod.ms, element).matrix @ v0
    if np.any(v0):
        r1 = -(assemble_a(lod.coeff, lod.vspace, tris).matrix @ v0)
        r2 = -(assemble_b(lod.vspace, lod.pspace, tris).matrix @ v0)
    else:
        r1 = np.zeros(lod.vspace.ndof)
        r2 = np.zeros(lod.pspace.ndof)
    return r1, r2, r3


def _solve_corrector(lod, element, r1, r2, r3):
    """One patch saddle solve; returns (psi, xi) embedded in the full spaces."""
    lu, K, (vidx, pidx, midx, cidx) = _get_patch_lu(lod, element)
    nv, npr, nm = vidx.size, pidx.size, midx.size
    rhs = np.concatenate([r1[vidx], r2[pidx], r3[midx],
                          np.zeros(cidx.size)])
    x = lu.solve(rhs)
    _check_residual(K, x, rhs)
    psi = np.zeros(lod.vspace.ndof)
    psi[vidx] = x[:nv]
    xi = np.zeros(lod.pspace.ndof)
    xi[pidx] = x[nv:nv + npr]
    return psi, xi


# ---------------------------------------------------------------------------
# basis construction

@dataclass
class MultiscaleBasis:
    """Multiscale velocity basis and the attached fine pressure components.

    Columns of Phi are fine P2 dof vectors; columns of Xi are the fine P1dg
    pressure fields carried along by the correctors.  `targets` lists, per
    column, ("face", F, j) or ("element", T, k) in the multiplier numbering.
    """

    lod: object
    Phi: sparse.csc_matrix
    Xi: sparse.csc_matrix
    targets: list
    wall_s: float


def default_targets(lod):
    ms = lod.ms
    targets = [("face", int(ms.interior_faces[pos]), j)
               for pos in range(ms.num_faces)
               for j in range(1, ms.J + 1)]
    targets += [("element", t, k)
                for t in range(lod.hier.coarse.num_triangles)
                for k in range(1, ms.K + 1)]
    return targets


def build_basis(lod, targets=None):
    if targets is None:
        targets = default_targets(lod)
    for kind, _, idx in targets:
        if kind == "element" and lod.ms.K == 0:
            raise ValidationError(
                "element basis functions need order m >= 1")
    t0 = time.perf_counter()
    if lod.covers_domain:
        cols = _build_columns_global(lod, targets)
    else:
        cols = _build_columns_local(lod, targets)
    phi_cols, xi_cols = zip(*cols)
    Phi = sparse.csc_matrix(np.column_stack(phi_cols))
    Xi = sparse.csc_matrix(np.column_stack(xi_cols))
    Phi.eliminate_zeros()
    Xi.eliminate_zeros()
    return MultiscaleBasis(lod, Phi, Xi, list(targets),
                           time.perf_counter() - t0)


def _target_seed(lod, target):
    """The coarse nodal lift v0 and full support/target data of one column."""
    kind, idx, sub = target
    if kind == "face":
        theta = coarse_nodal_lift(lod.iH, idx, sub)
        v0 = p1_nodal_to_fine(lod.hier, lod.vspace, theta)
        supp = _face_support(lod, idx, sub)
        full_target = _face_target(lod, idx, sub, 1.0)
    elif kind == "element":
        v0 = np.zeros(lod.vspace.ndof)
        supp = [idx]
        full_target = _element_target(lod, idx, sub)
    else:
        raise ValidationError(f"unknown basis target kind {kind!r}")
    return v0, supp, full_target


def _build_columns_global(lod, targets):
    """All patches cover the domain: per-element solves share one operator,
    so the corrector sum of each basis function needs a single right-hand
    side (the element restrictions telescope back to global operators)."""
    lu, K, (vidx, pidx, midx, cidx) = _get_global_lu(lod)
    nv, npr = vidx.size, pidx.size
    rhs_cols, seeds = [], []
    for target in targets:
        v0, _, full_target = _target_seed(lod, target)
        r1 = -(lod.A @ v0)
        r2 = -(lod.B @ v0)
        r3 = full_target - lod.ms.C @ v0
        rhs_cols.append(np.concatenate(
            [r1[vidx], r2, r3, np.zeros(cidx.size)]))
        seeds.append(v0)
    R = np.column_stack(rhs_cols)
    X = lu.solve(R)
    cols = []
    for i, v0 in enumerate(seeds):
        _check_residual(K, X[:, i], R[:, i])
        phi = v0.copy()
        phi[vidx] += X[:nv, i]
        cols.append((phi, X[nv:nv + npr, i].copy()))
    return cols


def _build_columns_local(lod, targets):
    cols = []
    for target in targets:
        v0, supp, full_target = _target_seed(lod, target)
        kind, idx, sub = target
        phi = v0.copy()
        xi = np.zeros(lod.pspace.ndof)
        ft = lod.hier.coarse.face_table
        for t in supp:
            if kind == "face":
                weight = 0.5 if t in ft.face_tris[idx] else 0.0
                tgt = _face_target(lod, idx, sub, weight)
            else:
                tgt = full_target
            r1, r2, r3 = _element_rhs(lod, t, v0, tgt)
            psi, xi_t = _solve_corrector(lod, t, r1, r2, r3)
            phi += psi
            xi += xi_t
        cols.append((phi, xi))
    return cols


# ---------------------------------------------------------------------------
# coarse solve and reconstruction

@dataclass
class MultiscaleSolution:
    """Galerkin solution in the multiscale basis with postprocessed pressure.

    u is a fine P2 dof vector, p_H the coarse piecewise constant pressure,
    p_osc the fine P1dg oscillatory pressure carried by the correctors and
    p_loc the local polynomial pressure lift of the projected forcing.
    """

    basis: object
    u: np.ndarray
    p_H: np.ndarray
    p_osc: np.ndarray
    p_loc: object
    coeffs: np.ndarray
    wall_s: float


def _coarse_sum_rows(lod):
    """0/1 matrix summing fine P1dg load entries over each coarse element."""
    parent = lod.hier.fine_parent
    rows = np.repeat(parent, 3)
    cols = np.arange(lod.pspace.ndof)
    return sparse.coo_matrix(
        (np.ones(cols.size), (rows, cols)),
        shape=(lod.hier.coarse.num_triangles, lod.pspace.ndof)).tocsr()


def solve_multiscale(lod, basis, f):
    t0 = time.perf_counter()
    Phi = basis.Phi
    n = Phi.shape[1]
    A_ms = (Phi.T @ (lod.A @ Phi)).toarray()
    G = (_coarse_sum_rows(lod) @ (lod.B @ Phi)).toarray()
    nT = G.shape[0]
    w = lod.hier.coarse.areas
    K = np.zeros((n + nT + 1, n + nT + 1))
    K[:n, :n] = A_ms
    K[:n, n:n + nT] = G.T
    K[n:n + nT, :n] = G
    K[n:n + nT, -1] = w
    K[-1, n:n + nT] = w
    load = load_vector(lod.vspace, f)
    rhs = np.zeros(n + nT + 1)
    rhs[:n] = Phi.T @ load
    try:
        x = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"coarse Galerkin system singular: {exc}")
    coeffs = x[:n]
    p_H = x[n:n + nT]
    u = Phi @ coeffs
    p_osc = basis.Xi @ coeffs
    p_loc = pressure_lift_field(lod, f)
    return MultiscaleSolution(basis, u, p_H, p_osc, p_loc, coeffs,
                              time.perf_counter() - t0)


def pressure_lift_field(lod, f):
    """Local polynomial pressure lift of the elementwise projected forcing."""
    coarse = lod.hier.coarse
    proj = project_PiHm(f, lod.m, coarse, vector=True)
    d = lod.m + 2
    coeffs = np.zeros((coarse.num_triangles, d, d))
    bary = coarse.barycenters()
    for t in range(coarse.num_triangles):
        verts = coarse.vertices[coarse.triangles[t]]
        phi, _ = local_pressure_lift(proj.coeffs[t], lod.m, verts, bary[t])
        coeffs[t, :phi.shape[0], :phi.shape[1]] = phi
    return PiecewisePolyField(lod.m + 1, coeffs, bary, vector=False)


# ---------------------------------------------------------------------------
# error measures

def velocity_errors(lod, u_ref, u_ms):
    """(H1-seminorm, L2) errors between fine-dof velocity fields."""
    du = np.asarray(u_ref) - np.asarray(u_ms)
    h1 = float(np.sqrt(du @ (lod.velocity_seminorm_matrix @ du)))
    l2 = float(np.sqrt(du @ (lod.velocity_mass_matrix @ du)))
    return h1, l2


def pp_pressure_error(lod, sol, p_ref):
    """L2 distance between a fine P1dg pressure and the postprocessed one.

    The postprocessed pressure p_H + p_osc + p_loc contains a genuine
    polynomial piece of degree m + 1, so the norm is taken by quadrature
    rather than through the P1dg mass matrix.
    """
    hier = lod.hier
    fine = hier.fine
    ref_pts, ref_w = triangle_rule(2 * lod.m + 4)
    lam = np.column_stack([1.0 - ref_pts.sum(axis=1),
                           ref_pts[:, 0], ref_pts[:, 1]])   # (nq, 3)
    verts = fine.vertices[fine.triangles]
    pts, w = physical_points(ref_pts, ref_w, verts[:, 0], verts[:, 1],
                             verts[:, 2])
    p_ref = np.asarray(p_ref).reshape(-1, 3)
    p_osc = np.asarray(sol.p_osc).reshape(-1, 3)
    vals = (p_ref - p_osc) @ lam.T                          # (nt, nq)
    parent = hier.fine_parent
    vals -= sol.p_H[parent][:, None]
    bary = sol.p_loc.barycenters
    X = pts[..., 0] - bary[parent, 0][:, None]
    Y = pts[..., 1] - bary[parent, 1][:, None]
    for t in range(hier.coarse.num_triangles):
        sel = np.flatnonzero(parent == t)
        vals[sel] -= poly_eval(sol.p_loc.coeffs[t], X[sel], Y[sel])
    return float(np.sqrt(np.einsum("tq,tq->", w, vals ** 2)))


def coarse_pressure_error(lod, sol, p_ref):
    """Weighted l2 distance between coarse means of p_ref and p_H."""
    means = (lod.D @ np.asarray(p_ref)) / lod.hier.coarse.areas
    diff = means - sol.p_H
    return float(np.sqrt(np.sum(lod.hier.coarse.areas * diff ** 2)))


# ---------------------------------------------------------------------------
# basis container i/o

def dump_basis(basis, path):
    """Write a basis to a .npz container.

    Keys: H, h, m, ell, covers_domain; Phi/Xi as CSC triples
    (phi_data, phi_indices, phi_indptr, phi_shape and xi_*); targets as a
    (n, 3) int array with kind 0 = face, 1 = element; fine node_coords and
    tri_nodes to interpret velocity dofs (dof 2*node + component); coarse
    vertices and triangles.
    """
    lod = basis.lod
    kind_code = {"face": 0, "element": 1}
    targets = np.array([[kind_code[k], i, s] for k, i, s in basis.targets],
                       dtype=np.int64)
    np.savez_compressed(
        path,
        H=lod.hier.coarse.mesh_size, h=lod.hier.fine.mesh_size,
        m=lod.m, ell=lod.ell, covers_domain=lod.covers_domain,
        phi_data=basis.Phi.data, phi_indices=basis.Phi.indices,
        phi_indptr=basis.Phi.indptr, phi_shape=basis.Phi.shape,
        xi_data=basis.Xi.data, xi_indices=basis.Xi.indices,
        xi_indptr=basis.Xi.indptr, xi_shape=basis.Xi.shape,
        targets=targets,
        node_coords=lod.vspace.node_coords, tri_nodes=lod.vspace.tri_nodes,
        coarse_vertices=lod.hier.coarse.vertices,
        coarse_triangles=lod.hier.coarse.triangles,
    )


def load_basis_arrays(path):
    """Read back a dumped basis container as a dict of arrays."""
    with np.load(path) as data:
        out = {k: data[k] for k in data.files}
    out["Phi"] = sparse.csc_matrix(
        (out["phi_data"], out["phi_indices"], out["phi_indptr"]),
        shape=tuple(out["phi_shape"]))
    out["Xi"] = sparse.csc_matrix(
        (out["xi_data"], out["xi_indices"], out["xi_indptr"]),
        shape=tuple(out["xi_shape"]))
    return out
