"""Simplicial meshes on the unit square: refinement, faces, patches.

The coarse/fine hierarchy starts from the unit square split into two
triangles by the diagonal from (0,0) to (1,1).  All meshes derive from it
by uniform red refinement; the fine level additionally gets one uniform
barycentric refinement so the Scott--Vogelius pair is inf-sup stable.
"""

from dataclasses import dataclass, field

import numpy as np

from stokeslod.errors import MeshStructureError, ValidationError

GEOM_TOL = 1e-12


def signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * np.cross(p1 - p0, p2 - p0)


def triangle_diameters(vertices, triangles):
    p = vertices[triangles]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    return np.maximum(e0, np.maximum(e1, e2))


@dataclass
class FaceTable:
    """Edge connectivity of a triangle mesh.

    faces[k] holds the two vertex indices of edge k (sorted).  face_tris[k]
    lists the adjacent triangles, -1 padded for boundary edges.  Normals of
    interior faces are unit vectors pointing from the lower-index adjacent
    triangle to the higher-index one; boundary normals point outward.
    """

    faces: np.ndarray        # (nf, 2) int
    face_tris: np.ndarray    # (nf, 2) int, -1 for missing neighbor
    normals: np.ndarray      # (nf, 2) float
    is_boundary: np.ndarray  # (nf,) bool
    edge_index: dict         # (i, j) sorted vertex pair -> face index

    @property
    def interior(self):
        return np.flatnonzero(~self.is_boundary)

    def lengths(self, vertices):
        d = vertices[self.faces[:, 1]] - vertices[self.faces[:, 0]]
        return np.linalg.norm(d, axis=1)


@dataclass
class SimplicialMesh:
    """Conforming triangle mesh of the closed unit square."""

    vertices: np.ndarray   # (nv, 2)
    triangles: np.ndarray  # (nt, 3), positively oriented
    parent: np.ndarray | None = None  # parent triangle index in the source mesh
    face_table: FaceTable = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        areas = signed_areas(self.vertices, self.triangles)
        if np.any(areas <= 0.0):
            raise MeshStructureError("triangle with non-positive signed area")
        if self.face_table is None:
            self.face_table = build_faces(self)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    @property
    def mesh_size(self):
        return float(triangle_diameters(self.vertices, self.triangles).max())

    @property
    def boundary_vertices(self):
        ft = self.face_table
        flags = np.zeros(self.num_vertices, dtype=bool)
        flags[ft.faces[ft.is_boundary].ravel()] = True
        return flags

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def vertex_to_triangles(self):
        """List of triangle index arrays, one per vertex."""
        order = np.argsort(self.triangles.ravel(), kind="stable")
        tri_of_entry = np.repeat(np.arange(self.num_triangles), 3)[order]
        counts = np.bincount(self.triangles.ravel(), minlength=self.num_vertices)
        splits = np.cumsum(counts)[:-1]
        return np.split(tri_of_entry, splits)

    def dump(self, path):
        """Plain-text dump: vertex lines 'x y' then triangle lines 'i j k'."""
        with open(path, "w") as fh:
            fh.write(f"{self.num_vertices} {self.num_triangles}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for i, j, k in self.triangles:
                fh.write(f"{i} {j} {k}\n")


def unit_square_mesh():
    """Initial 2-triangle mesh: unit square cut by the (0,0)-(1,1) diagonal."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    return SimplicialMesh(vertices, triangles)


def build_faces(mesh):
    """Build the edge table with adjacency and fixed unit normals."""
    tris = mesh.triangles
    edge_index = {}
    faces = []
    face_tris = []
    for t in range(tris.shape[0]):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (int(min(tris[t, a], tris[t, b])), int(max(tris[t, a], tris[t, b])))
            k = edge_index.get(key)
            if k is None:
                edge_index[key] = len(faces)
                faces.append(key)
                face_tris.append([t, -1])
            else:
                if face_tris[k][1] != -1:
                    raise MeshStructureError(f"non-manifold edge {key}")
                face_tris[k][1] = t
    faces = np.array(faces, dtype=np.int64)
    face_tris = np.array(face_tris, dtype=np.int64)
    # sort adjacency so the lower triangle index comes first
    swap = (face_tris[:, 1] != -1) & (face_tris[:, 1] < face_tris[:, 0])
    face_tris[swap] = face_tris[swap][:, ::-1]
    is_boundary = face_tris[:, 1] == -1

    tangents = mesh.vertices[faces[:, 1]] - mesh.vertices[faces[:, 0]]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    # orient: interior faces from lower adjacent triangle to higher; boundary outward
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    mid = 0.5 * (mesh.vertices[faces[:, 0]] + mesh.vertices[faces[:, 1]])
    ref = mid - centroids[face_tris[:, 0]]
    flip = np.einsum("ij,ij->i", normals, ref) < 0.0
    normals[flip] *= -1.0
    return FaceTable(faces, face_tris, normals, is_boundary, edge_index)


def red_refine(mesh):
    """Split every triangle into 4 congruent children via edge midpoints."""
    nv = mesh.num_vertices
    ft = mesh.face_table
    midpoint_of_edge = nv + np.arange(ft.faces.shape[0])
    new_vertices = np.vstack([
        mesh.vertices,
        0.5 * (mesh.vertices[ft.faces[:, 0]] + mesh.vertices[ft.faces[:, 1]]),
    ])
    tris = mesh.triangles
    children = np.empty((4 * tris.shape[0], 3), dtype=np.int64)
    parent = np.repeat(np.arange(tris.shape[0]), 4)
    for t in range(tris.shape[0]):
        i, j, k = tris[t]
        mij = midpoint_of_edge[ft.edge_index[(int(min(i, j)), int(max(i, j)))]]
        mjk = midpoint_of_edge[ft.edge_index[(int(min(j, k)), int(max(j, k)))]]
        mki = midpoint_of_edge[ft.edge_index[(int(min(k, i)), int(max(k, i)))]]
        children[4 * t + 0] = (i, mij, mki)
        children[4 * t + 1] = (mij, j, mjk)
        children[4 * t + 2] = (mki, mjk, k)
        children[4 * t + 3] = (mij, mjk, mki)
    return SimplicialMesh(new_vertices, children, parent=parent)


def barycentric_refine(mesh):
    """Split every triangle into 3 by connecting its barycenter to its vertices."""
    nv = mesh.num_vertices
    bary = mesh.vertices[mesh.triangles].mean(axis=1)
    new_vertices = np.vstack([mesh.vertices, bary])
    tris = mesh.triangles
    nt = tris.shape[0]
    children = np.empty((3 * nt, 3), dtype=np.int64)
    parent = np.repeat(np.arange(nt), 3)
    centers = nv + np.arange(nt)
    children[0::3] = np.column_stack([tris[:, 0], tris[:, 1], centers])
    children[1::3] = np.column_stack([tris[:, 1], tris[:, 2], centers])
    children[2::3] = np.column_stack([tris[:, 2], tris[:, 0], centers])
    return SimplicialMesh(new_vertices, children, parent=parent)


def mesh_at_level(level):
    """Red-refine the initial 2-triangle mesh `level` times (H = 2^-level)."""
    mesh = unit_square_mesh()
    for _ in range(level):
        mesh = red_refine(mesh)
    return mesh


@dataclass
class Patch:
    """ell-th order node-connectivity patch around a seed coarse element."""

    seed: int
    ell: int
    members: np.ndarray          # sorted coarse element indices
    interior_faces: np.ndarray   # coarse interior faces strictly inside the patch
    covers_domain: bool


@dataclass
class MeshHierarchy:
    """Compatible coarse/fine mesh pair with the fine-to-coarse parent map."""

    coarse: SimplicialMesh
    fine: SimplicialMesh
    fine_parent: np.ndarray  # coarse element index per fine triangle
    barycentric_fine: bool
    coarse_level: int
    fine_level: int

    @property
    def H(self):
        return self.coarse.mesh_size

    @property
    def h(self):
        return self.fine.mesh_size

    def fine_triangles_of(self, coarse_element):
        return np.flatnonzero(self.fine_parent == coarse_element)


def build_hierarchy(coarse_level, fine_level, barycentric=True):
    """Build T_H at `coarse_level` and the fine mesh at `fine_level` (+ barycentric)."""
    if fine_level < coarse_level:
        raise ValidationError("fine level must not be coarser than the coarse level")
    coarse = mesh_at_level(coarse_level)
    fine = coarse
    for _ in range(fine_level - coarse_level):
        fine = red_refine(fine)
    parent = np.arange(fine.num_triangles, dtype=np.int64) // 4 ** (fine_level - coarse_level)
    if barycentric:
        fine = barycentric_refine(fine)
        parent = parent[np.arange(fine.num_triangles) // 3]
    return MeshHierarchy(coarse, fine, parent, barycentric, coarse_level, fine_level)


def patch(mesh, seed, ell):
    """ell-th order patch N^ell(T): elements reachable in ell node-sharing steps."""
    if ell < 1:
        raise ValidationError("patch order ell must be >= 1")
    if not 0 <= seed < mesh.num_triangles:
        raise ValidationError(f"invalid seed element {seed}")
    v2t = mesh.vertex_to_triangles()
    members = np.array([seed], dtype=np.int64)
    for _ in range(ell):
        verts = np.unique(mesh.triangles[members].ravel())
        members = np.unique(np.concatenate([v2t[v] for v in verts]))
        if members.size == mesh.num_triangles:
            break
    in_patch = np.zeros(mesh.num_triangles, dtype=bool)
    in_patch[members] = True
    ft = mesh.face_table
    interior = ft.interior
    both_in = in_patch[ft.face_tris[interior, 0]] & in_patch[ft.face_tris[interior, 1]]
    return Patch(
        seed=seed,
        ell=ell,
        members=members,
        interior_faces=interior[both_in],
        covers_domain=bool(members.size == mesh.num_triangles),
    )
