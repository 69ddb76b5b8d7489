"""Triangle-mesh containers and differential-geometry kernels.

All meshes are fixed-connectivity triangle surfaces with coordinates in
millimetres.  A heart is represented by five labelled structures; sequences
of the same heart over a cardiac cycle share one connectivity, which is what
makes vertex-wise population statistics possible downstream.
"""

import numpy as np
from scipy import sparse

# Canonical structure order.  LV-endo and LV-epi are built with index-wise
# vertex correspondence (epi is an inflated copy of endo).
STRUCTURES = ("LV-endo", "LV-epi", "RV", "LA", "RA")


class TriMesh:
    """A labelled triangle mesh.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex coordinates in mm.
    faces : array_like, shape (m, 3)
        Vertex-index triples.  Faces are stored counter-clockwise when viewed
        from outside the surface.
    structure_id : str
        One of ``STRUCTURES``.
    """

    def __init__(self, vertices, faces, structure_id):
        v = np.asarray(vertices, dtype=np.float64)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must have shape (m, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain NaN/Inf coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if structure_id not in STRUCTURES:
            raise ValueError(f"unknown structure_id {structure_id!r}")
        used = np.zeros(len(v), dtype=bool)
        used[f.ravel()] = True
        if not used.all():
            raise ValueError(
                f"{int((~used).sum())} vertices are not referenced by any face"
            )
        self.vertices = v
        self.faces = f
        self.structure_id = structure_id
        self._edges = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    def with_vertices(self, vertices):
        """Same connectivity and label, new coordinates."""
        out = TriMesh(vertices, self.faces, self.structure_id)
        out._edges = self._edges
        return out

    def edges(self):
        """Unique undirected edges as a sorted (E, 2) index array (cached)."""
        if self._edges is None:
            self._edges = edges_from_faces(self.faces)
        return self._edges

    def boundary_edge_count(self):
        """Number of undirected edges not shared by exactly two faces."""
        e = np.sort(
            np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            ),
            axis=1,
        )
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.count_nonzero(counts != 2))

    def is_closed(self):
        return self.boundary_edge_count() == 0


def edges_from_faces(faces):
    """Unique undirected edge set of a triangle list, rows sorted."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def face_cross_products(vertices, faces):
    """Per-face cross products (v1-v0) x (v2-v0); norm equals twice the area."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    return np.cross(v1 - v0, v2 - v0)


def vertex_normals(mesh, vertices=None):
    """Outward unit vertex normals.

    Each vertex normal is the area-weighted average of its incident face
    normals (accumulated as raw face cross products, then normalised).
    Outward orientation relies on counter-clockwise face storage.

    Parameters
    ----------
    mesh : TriMesh
    vertices : ndarray, optional
        Override coordinates (same connectivity); used when evaluating a
        deformed copy of the mesh without re-wrapping it.

    Returns
    -------
    ndarray, shape (n, 3)

    Raises
    ------
    ValueError
        If some vertex has a zero-area triangle fan (no usable normal).
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    cr = face_cross_products(v, mesh.faces)
    n = np.zeros_like(v)
    for k in range(3):
        np.add.at(n, mesh.faces[:, k], cr)
    ln = np.linalg.norm(n, axis=1)
    bad = ln < 1e-300
    if bad.any():
        raise ValueError(
            f"zero-area vertex star at vertex {int(np.flatnonzero(bad)[0])}"
        )
    return n / ln[:, None]


def graph_laplacian(mesh):
    """Degree-normalised uniform graph Laplacian as a sparse CSR matrix.

    ``(L v)_i = v_i - mean of the neighbours of i``; rows sum to zero.
    """
    e = mesh.edges()
    n = mesh.n_vertices
    i = np.concatenate([e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 1], e[:, 0]])
    deg = np.bincount(i, minlength=n).astype(np.float64)
    if np.any(deg == 0):
        raise ValueError(
            f"isolated vertex {int(np.flatnonzero(deg == 0)[0])} has no edges"
        )
    data = -1.0 / deg[i]
    lap = sparse.csr_matrix((data, (i, j)), shape=(n, n))
    lap = lap + sparse.identity(n, format="csr")
    return lap


def mean_curvature(mesh, vertices=None, laplacian=None):
    """Per-vertex mean-curvature estimate (1/mm).

    ``H_i = -1/2 (L v)_i . n_i`` with the uniform graph Laplacian and
    area-weighted vertex normals.  Exactly invariant under translation
    (Laplacian rows sum to zero) and under rotation (both factors rotate).
    """
    v = mesh.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
    lap = graph_laplacian(mesh) if laplacian is None else laplacian
    lv = lap @ v
    n = vertex_normals(mesh, v)
    return -0.5 * np.einsum("ij,ij->i", lv, n)


def inflate_along_normals(mesh, offset):
    """Offset every vertex along its outward normal.

    Connectivity is unchanged, so the result corresponds index-wise with the
    input.  Self-intersection of the offset surface is not checked.
    """
    if offset < 0:
        raise ValueError("offset must be >= 0")
    if not mesh.is_closed():
        raise ValueError("inflate_along_normals requires a closed mesh")
    n = vertex_normals(mesh)
    return mesh.with_vertices(mesh.vertices + offset * n)


class ChamberSet:
    """The five labelled structures of one heart at one time point."""

    def __init__(self, meshes):
        if set(meshes) != set(STRUCTURES):
            missing = set(STRUCTURES) - set(meshes)
            extra = set(meshes) - set(STRUCTURES)
            raise ValueError(
                f"ChamberSet needs exactly {STRUCTURES}; missing={sorted(missing)}, "
                f"unexpected={sorted(extra)}"
            )
        for name, m in meshes.items():
            if m.structure_id != name:
                raise ValueError(
                    f"mesh stored under {name!r} is labelled {m.structure_id!r}"
                )
        if meshes["LV-endo"].n_vertices != meshes["LV-epi"].n_vertices:
            raise ValueError("LV-endo and LV-epi must have equal vertex counts")
        self.meshes = {name: meshes[name] for name in STRUCTURES}

    def __getitem__(self, name):
        return self.meshes[name]

    def __iter__(self):
        return iter(STRUCTURES)

    @property
    def total_vertices(self):
        return sum(m.n_vertices for m in self.meshes.values())

    def all_vertices(self):
        """All vertex coordinates pooled in structure order, shape (|V|, 3)."""
        return np.concatenate([self.meshes[s].vertices for s in STRUCTURES])

    def with_all_vertices(self, coords):
        """Rebuild from pooled coordinates in structure order."""
        out = {}
        k = 0
        for s in STRUCTURES:
            n = self.meshes[s].n_vertices
            out[s] = self.meshes[s].with_vertices(coords[k : k + n])
            k += n
        return ChamberSet(out)

    def transformed(self, rotation=None, translation=None, scale=1.0):
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        return self.with_all_vertices(scale * self.all_vertices() @ r.T + t)


class MeshSequence:
    """An ordered sequence of ChamberSets sharing one connectivity."""

    def __init__(self, frames):
        if len(frames) < 1:
            raise ValueError("MeshSequence needs at least one frame")
        first = frames[0]
        for fr in frames[1:]:
            for s in STRUCTURES:
                if fr[s].n_vertices != first[s].n_vertices or not np.array_equal(
                    fr[s].faces, first[s].faces
                ):
                    raise ValueError(f"frame connectivity differs for structure {s}")
        self.frames = list(frames)

    @property
    def n_frames(self):
        return len(self.frames)

    def __getitem__(self, t):
        return self.frames[t]

    def stacked(self):
        """Per-structure stacked coordinates, ``{structure: (T, n_c, 3)}``."""
        return {
            s: np.stack([fr[s].vertices for fr in self.frames]) for s in STRUCTURES
        }

    def with_stacked(self, coords):
        """Rebuild with new coordinates from a ``stacked()``-shaped dict."""
        frames = []
        for t in range(self.n_frames):
            frames.append(
                ChamberSet(
                    {
                        s: self.frames[t][s].with_vertices(coords[s][t])
                        for s in STRUCTURES
                    }
                )
            )
        return MeshSequence(frames)

    def topology(self):
        return Topology.from_chamber_set(self.frames[0], self.n_frames)


class Topology:
    """Connectivity shared by every frame of a sequence (and a whole cohort)."""

    def __init__(self, counts, faces, n_frames):
        self.counts = {s: int(counts[s]) for s in STRUCTURES}
        self.faces = {s: np.asarray(faces[s], dtype=np.int64) for s in STRUCTURES}
        self.n_frames = int(n_frames)

    @classmethod
    def from_chamber_set(cls, chambers, n_frames):
        return cls(
            {s: chambers[s].n_vertices for s in STRUCTURES},
            {s: chambers[s].faces for s in STRUCTURES},
            n_frames,
        )

    @property
    def total_vertices(self):
        return sum(self.counts.values())

    @property
    def vector_length(self):
        return 3 * self.n_frames * self.total_vertices

    def template_chamber_set(self, coords):
        out = {}
        k = 0
        for s in STRUCTURES:
            n = self.counts[s]
            out[s] = TriMesh(coords[k : k + n], self.faces[s], s)
            k += n
        return ChamberSet(out)

    def digest(self):
        """64-bit digest of structure order, counts, faces and frame count."""
        import hashlib

        h = hashlib.blake2b(digest_size=8)
        h.update(str(self.n_frames).encode())
        for s in STRUCTURES:
            h.update(s.encode())
            h.update(str(self.counts[s]).encode())
            h.update(np.ascontiguousarray(self.faces[s]).tobytes())
        return int.from_bytes(h.digest(), "little")


def vectorize(seq):
    """Flatten a MeshSequence to a 1-D coordinate vector.

    Layout: frame-major, then structure in canonical order, then vertex
    index, then (x, y, z).  Length is ``3 * T * |V|``.
    """
    parts = []
    for fr in seq.frames:
        for s in STRUCTURES:
            parts.append(fr[s].vertices.ravel())
    return np.concatenate(parts)


def devectorize(coords, topology):
    """Inverse of :func:`vectorize` for a known topology."""
    coords = np.asarray(coords, dtype=np.float64)
    expected = topology.vector_length
    if coords.shape != (expected,):
        raise ValueError(
            f"coordinate vector has length {coords.size}, expected {expected} "
            f"(3 x {topology.n_frames} frames x {topology.total_vertices} vertices)"
        )
    per_frame = 3 * topology.total_vertices
    frames = []
    for t in range(topology.n_frames):
        block = coords[t * per_frame : (t + 1) * per_frame].reshape(-1, 3)
        frames.append(topology.template_chamber_set(block))
    return MeshSequence(frames)


def rigid_align(source, target, allow_scale=False):
    """Least-squares rigid (optionally similarity) alignment of two hearts.

    Point correspondence is given by vertex index; all structures are pooled.
    Solves ``argmin sum ||s R x + t - y||^2`` (Kabsch/Umeyama) with
    ``det(R) = +1``; ``s = 1`` unless ``allow_scale``.

    Returns
    -------
    rotation : ndarray (3, 3)
    translation : ndarray (3,)
    scale : float
    aligned : ChamberSet
        ``source`` mapped by the recovered transform.
    """
    x = source.all_vertices()
    y = target.all_vertices()
    if x.shape != y.shape:
        raise ValueError("source and target must share connectivity")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    var_x = (xc**2).sum()
    if var_x < 1e-12:
        raise ValueError("degenerate source: all points coincident")
    cov = xc.T @ yc
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T
    if allow_scale:
        scale = float((s * np.diag(flip)).sum() / var_x)
    else:
        scale = 1.0
    trans = my - scale * rot @ mx
    aligned = source.transformed(rotation=rot, translation=trans, scale=scale)
    return rot, trans, scale, aligned
