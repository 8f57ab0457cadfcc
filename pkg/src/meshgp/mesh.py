"""Triangle meshes, the cotangent Laplace operator, and its truncated spectrum.

The stiffness matrix W carries the classic cotangent weights
W_ij = (cot a_ij + cot b_ij) / 2 on edges and row sums of zero on the
diagonal, with lumped mixed/Voronoi vertex areas as the mass vector.
The positive-semidefinite operator used by the kernels is
L = -diag(mass)^{-1} W, whose eigenpairs are returned mass-orthonormal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.sparse.linalg import eigsh


class MeshError(ValueError):
    """Malformed mesh file or invalid mesh data."""


# Meshes up to this size are eigendecomposed densely; larger ones go
# through shift-invert Lanczos.
_DENSE_EIG_LIMIT = 2000


@dataclass(frozen=True)
class TriMesh:
    """An oriented triangle surface mesh.

    Parameters
    ----------
    vertices : (N, 3) float array
        Vertex coordinates; any consistent length unit.
    faces : (F, 3) int array
        Vertex-index triples, all referencing valid vertices.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if f.size == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshError(
                f"face index out of range: indices span [{int(f.min())}, "
                f"{int(f.max())}] with {len(v)} vertices"
            )
        if np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2]) or np.any(f[:, 0] == f[:, 2]):
            bad = int(np.flatnonzero(
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            )[0])
            raise MeshError(f"face {bad} has repeated vertices")
        areas = _face_areas(v, f)
        if np.any(areas <= 0.0):
            bad = int(np.flatnonzero(areas <= 0.0)[0])
            raise MeshError(f"face {bad} has zero area")
        referenced = np.zeros(len(v), dtype=bool)
        referenced[f.ravel()] = True
        if not referenced.all():
            bad = int(np.flatnonzero(~referenced)[0])
            raise MeshError(f"vertex {bad} is not referenced by any face")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def edge_lengths(self) -> np.ndarray:
        """Lengths of the unique undirected edges."""
        f = self.faces
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        diff = self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]]
        return np.linalg.norm(diff, axis=1)

    def diameter(self) -> float:
        """Maximum pairwise vertex distance (extrinsic)."""
        v = self.vertices
        d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=-1)
        return float(np.sqrt(d2.max()))


@dataclass(frozen=True)
class LaplacianSpectrum:
    """Truncated eigenpairs of the mass-normalized cotangent Laplacian.

    eigenvalues are ascending and nonnegative (units 1/length^2);
    eigenvectors satisfy Phi^T diag(mass) Phi = I.
    """

    eigenvalues: np.ndarray   # (k,)
    eigenvectors: np.ndarray  # (N, k)
    mass: np.ndarray          # (N,)

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        phi = np.asarray(self.eigenvectors, dtype=float)
        mass = np.asarray(self.mass, dtype=float)
        if phi.ndim != 2 or lam.ndim != 1 or phi.shape[1] != lam.shape[0]:
            raise MeshError("inconsistent spectrum shapes")
        if mass.shape != (phi.shape[0],):
            raise MeshError("mass vector length must match vertex count")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", phi)
        object.__setattr__(self, "mass", mass)

    @property
    def n_vertices(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]


def _face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - p0
    e2 = vertices[faces[:, 2]] - p0
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def load_mesh(path) -> TriMesh:
    """Load a triangle mesh from an OFF file or a vertices.csv/faces.csv pair.

    ``path`` may be an .off file, a directory holding vertices.csv and
    faces.csv, or the vertices.csv file itself (faces.csv is looked up
    next to it).
    """
    p = Path(path)
    if not p.exists():
        raise MeshError(f"mesh path does not exist: {p}")
    if p.is_dir():
        return _load_csv_pair(p / "vertices.csv", p / "faces.csv")
    if p.suffix.lower() == ".off":
        return _parse_off(p)
    if p.name == "vertices.csv":
        return _load_csv_pair(p, p.with_name("faces.csv"))
    raise MeshError(f"unrecognized mesh format: {p} (expected .off or vertices.csv)")


def _parse_off(path: Path) -> TriMesh:
    raw = path.read_text().splitlines()
    # (line_number, stripped_text) for non-blank, non-comment lines
    lines = [(i + 1, s.strip()) for i, s in enumerate(raw)
             if s.strip() and not s.strip().startswith("#")]
    if not lines:
        raise MeshError(f"{path}: empty OFF file")
    lineno, header = lines[0]
    tokens = header.split()
    if tokens[0] != "OFF":
        raise MeshError(f"{path}:{lineno}: expected OFF header, got {tokens[0]!r}")
    pos = 1
    if len(tokens) > 1:
        counts, count_line = tokens[1:], lineno
    else:
        if len(lines) < 2:
            raise MeshError(f"{path}:{lineno}: missing count line after OFF header")
        count_line, count_text = lines[1]
        counts = count_text.split()
        pos = 2
    if len(counts) < 2:
        raise MeshError(f"{path}:{count_line}: count line needs vertex and face counts")
    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
    except ValueError as exc:
        raise MeshError(f"{path}:{count_line}: non-integer counts: {exc}") from exc
    if len(lines) < pos + n_vertices + n_faces:
        raise MeshError(
            f"{path}: file ends early; declared {n_vertices} vertices "
            f"and {n_faces} faces"
        )

    vertices = np.empty((n_vertices, 3), dtype=float)
    for i in range(n_vertices):
        lineno, text = lines[pos + i]
        parts = text.split()
        if len(parts) < 3:
            raise MeshError(f"{path}:{lineno}: vertex line needs 3 coordinates")
        try:
            vertices[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: bad vertex coordinate: {exc}") from exc

    faces = np.empty((n_faces, 3), dtype=np.int64)
    for i in range(n_faces):
        lineno, text = lines[pos + n_vertices + i]
        parts = text.split()
        try:
            arity = int(parts[0])
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}:{lineno}: bad face line: {exc}") from exc
        if arity != 3:
            raise MeshError(f"{path}:{lineno}: non-triangular face ({arity} vertices)")
        if len(parts) < 4:
            raise MeshError(f"{path}:{lineno}: face line needs 3 vertex indices")
        try:
            idx = [int(parts[1]), int(parts[2]), int(parts[3])]
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: bad face index: {exc}") from exc
        if min(idx) < 0 or max(idx) >= n_vertices:
            raise MeshError(f"{path}:{lineno}: face index out of range: {idx}")
        faces[i] = idx

    return TriMesh(vertices, faces)


def _load_csv_pair(vpath: Path, fpath: Path) -> TriMesh:
    for required in (vpath, fpath):
        if not required.exists():
            raise MeshError(f"missing mesh file: {required}")
    vertices = _read_csv_table(vpath, ("x", "y", "z"), float)
    faces = _read_csv_table(fpath, ("i", "j", "k"), int)
    try:
        return TriMesh(np.array(vertices, dtype=float), np.array(faces, dtype=np.int64))
    except MeshError as exc:
        raise MeshError(f"{vpath.parent}: {exc}") from exc


def _read_csv_table(path: Path, columns, cast):
    rows = []
    lines = path.read_text().splitlines()
    if not lines:
        raise MeshError(f"{path}: empty file")
    header = [c.strip().lower() for c in lines[0].split(",")]
    if header != list(columns):
        raise MeshError(f"{path}:1: expected header {','.join(columns)}, got {lines[0]!r}")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(columns):
            raise MeshError(f"{path}:{lineno}: expected {len(columns)} fields")
        try:
            rows.append([cast(p) for p in parts])
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: bad value: {exc}") from exc
    return rows


def cotangent_laplacian(mesh: TriMesh):
    """Cotangent stiffness matrix and lumped mixed/Voronoi vertex areas.

    Returns
    -------
    stiffness : (N, N) sparse CSR, symmetric
        Off-diagonal W_ij = (cot a_ij + cot b_ij) / 2, diagonal set so
        rows sum to zero.  Negative semidefinite; obtuse triangles may
        produce negative edge weights and are kept as-is.
    mass : (N,) float array
        Mixed Voronoi cell areas (circumcentric for non-obtuse
        triangles, 1/2 / 1/4 / 1/4 splits around obtuse corners).
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices

    corners = v[f]                       # (F, 3, 3)
    # edge vectors opposite each corner: e[c] joins the other two corners
    e0 = corners[:, 2] - corners[:, 1]
    e1 = corners[:, 0] - corners[:, 2]
    e2 = corners[:, 1] - corners[:, 0]
    double_area = np.linalg.norm(np.cross(e2, -e1), axis=1)  # 2 * face area
    if np.any(double_area <= 0.0):
        bad = int(np.flatnonzero(double_area <= 0.0)[0])
        raise MeshError(f"degenerate (zero-area) triangle at face {bad}")

    # cot of the interior angle at each corner
    cot = np.empty_like(double_area, shape=(len(f), 3))
    cot[:, 0] = np.einsum("ij,ij->i", -e1, e2) / double_area
    cot[:, 1] = np.einsum("ij,ij->i", -e2, e0) / double_area
    cot[:, 2] = np.einsum("ij,ij->i", -e0, e1) / double_area

    # W_ij accumulates cot(angle at the corner opposite edge ij) / 2
    rows = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    cols = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    vals = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    W = sparse.coo_matrix(
        (np.concatenate([vals, vals]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    ).tocsr()
    W = W - sparse.diags(np.asarray(W.sum(axis=1)).ravel())

    mass = _mixed_voronoi_areas(f, cot, double_area, n)
    return W.tocsr(), mass


def _mixed_voronoi_areas(faces, cot, double_area, n) -> np.ndarray:
    """Meyer mixed-area rule, vectorized over faces."""
    area = 0.5 * double_area
    # squared lengths of the edge opposite each corner
    # |e_opp(c)|^2 relates to cots via  2A * cot = dot products; recompute directly
    mass = np.zeros(n)

    obtuse_corner = np.argmax(cot < 0.0, axis=1)
    any_obtuse = (cot < 0.0).any(axis=1)

    # Non-obtuse faces: circumcentric area at corner c is
    # (|e_b|^2 cot_b + |e_c|^2 cot_c) / 8 summed over the two edges at c,
    # where e_x is the edge opposite corner x.
    # Voronoi area at corner 0 = (|e2|^2 * cot2 + |e1|^2 * cot1) / 8
    # with e1, e2 the edges incident to corner 0 (opposite corners 1, 2).
    # Edge opposite corner c has squared length derivable from cots and area:
    # |e_c|^2 = 2A (cot_a + cot_b) where a, b are the other corners.
    l2 = np.empty_like(cot)
    l2[:, 0] = double_area * (cot[:, 1] + cot[:, 2])
    l2[:, 1] = double_area * (cot[:, 2] + cot[:, 0])
    l2[:, 2] = double_area * (cot[:, 0] + cot[:, 1])

    voronoi = np.empty_like(cot)
    voronoi[:, 0] = (l2[:, 1] * cot[:, 1] + l2[:, 2] * cot[:, 2]) / 8.0
    voronoi[:, 1] = (l2[:, 2] * cot[:, 2] + l2[:, 0] * cot[:, 0]) / 8.0
    voronoi[:, 2] = (l2[:, 0] * cot[:, 0] + l2[:, 1] * cot[:, 1]) / 8.0

    contrib = voronoi
    if any_obtuse.any():
        contrib = voronoi.copy()
        rows = np.flatnonzero(any_obtuse)
        contrib[rows] = area[rows, None] / 4.0
        contrib[rows, obtuse_corner[rows]] = area[rows] / 2.0

    np.add.at(mass, faces[:, 0], contrib[:, 0])
    np.add.at(mass, faces[:, 1], contrib[:, 1])
    np.add.at(mass, faces[:, 2], contrib[:, 2])
    return mass


def eigen_spectrum(stiffness, mass, k: int) -> LaplacianSpectrum:
    """k smallest eigenpairs of (-W) phi = lambda diag(mass) phi.

    Solved through the symmetric similarity transform
    diag(mass)^{-1/2} (-W) diag(mass)^{-1/2}; returned eigenvectors are
    mass-orthonormal and eigenvalues ascending with near-zero values
    clamped to exactly 0.
    """
    n = stiffness.shape[0]
    if not 1 <= k <= n:
        raise MeshError(f"mode count k={k} out of range [1, {n}]")
    mass = np.asarray(mass, dtype=float)
    if np.any(mass <= 0.0):
        raise MeshError("mass vector must be strictly positive")

    inv_sqrt_m = 1.0 / np.sqrt(mass)
    A = -stiffness.multiply(inv_sqrt_m[:, None]).multiply(inv_sqrt_m[None, :])
    A = (A + A.T) * 0.5  # symmetrize away round-off

    if n <= _DENSE_EIG_LIMIT or k > n // 3:
        lam, psi = np.linalg.eigh(A.toarray())
        lam, psi = lam[:k], psi[:, :k]
    else:
        scale = float(np.abs(A).max())
        try:
            lam, psi = eigsh(A.tocsc(), k=k, sigma=-1e-8 * max(scale, 1.0), which="LM")
        except Exception as exc:  # ArpackError and friends
            raise MeshError(f"eigensolver failed to converge: {exc}") from exc
        order = np.argsort(lam)
        lam, psi = lam[order], psi[:, order]

    if lam.min() < -1e-10:
        raise MeshError(
            f"operator has negative eigenvalue {lam.min():.3e}; mesh is invalid"
        )
    lam = np.where(np.abs(lam) < 1e-10, 0.0, lam)
    phi = psi * inv_sqrt_m[:, None]
    return LaplacianSpectrum(eigenvalues=lam, eigenvectors=phi, mass=mass)


def build_spectrum(mesh: TriMesh, k: int | None = None) -> LaplacianSpectrum:
    """Convenience: cotangent Laplacian + eigen_spectrum in one call.

    Default truncation is 200 modes, or the full spectrum when the mesh
    has at most 400 vertices.
    """
    if k is None:
        k = mesh.n_vertices if mesh.n_vertices <= 400 else min(200, mesh.n_vertices)
    W, mass = cotangent_laplacian(mesh)
    return eigen_spectrum(W, mass, k)


def geodesic_distances(mesh: TriMesh, source: int) -> np.ndarray:
    """Graph geodesic distances from ``source`` along mesh edges."""
    if not 0 <= source < mesh.n_vertices:
        raise MeshError(f"source vertex {source} out of range")
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    lengths = np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1
    )
    graph = sparse.coo_matrix(
        (np.concatenate([lengths, lengths]),
         (np.concatenate([edges[:, 0], edges[:, 1]]),
          np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(mesh.n_vertices, mesh.n_vertices),
    ).tocsr()
    return dijkstra(graph, indices=source)


# ---------------------------------------------------------------------------
# Built-in desk-scale geometries
# ---------------------------------------------------------------------------

def tetrahedron(scale: float = 1.0) -> TriMesh:
    """Regular tetrahedron, the smallest closed triangle mesh."""
    v = np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]) * scale
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    """Icosahedron subdivided ``subdivisions`` times and projected to a sphere.

    Vertex counts by level: 12, 42, 162, 642, 2562.
    """
    if subdivisions < 0:
        raise MeshError("subdivisions must be >= 0")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint_cache:
                midpoint_cache[key] = len(verts_list)
                verts_list.append((verts_list[a] + verts_list[b]) / 2.0)
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)

    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True) * radius
    return TriMesh(verts, faces)


def ellipsoid(radii=(1.0, 1.0, 1.0), subdivisions: int = 3) -> TriMesh:
    """Icosphere stretched to the given semi-axes."""
    base = icosphere(subdivisions=subdivisions, radius=1.0)
    return TriMesh(base.vertices * np.asarray(radii, dtype=float), base.faces)
