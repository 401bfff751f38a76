"""Triangle meshes: discrete mean curvature, OBJ/PLY export and a few test shapes."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .errors import ContractError


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ContractError("face indices out of range")
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.faces)
        else:
            n = np.asarray(self.normals, dtype=float)
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            with np.errstate(invalid="ignore", divide="ignore"):
                self.normals = np.where(norm > 0, n / norm, n)


def polar_faces(M: int, R: int) -> np.ndarray:
    """Faces of a polar grid: vertex 0 at the centre, ``1 + j R + i`` on ray ``j``, ring ``i``."""
    v = lambda j, i: 1 + (j % M) * R + i
    faces = []
    for j in range(M):
        faces.append((0, v(j, 0), v(j + 1, 0)))
        for i in range(R - 1):
            a, b, c, d = v(j, i), v(j, i + 1), v(j + 1, i + 1), v(j + 1, i)
            faces += [(a, b, c), (a, c, d)]
    return np.array(faces, dtype=np.int64)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    P = vertices[faces]
    fn = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    n = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(n, faces[:, k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm > 0, n / norm, 0.0)


def boundary_vertices(faces: np.ndarray, nverts: int) -> np.ndarray:
    e = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    mask = np.zeros(nverts, dtype=bool)
    mask[uniq[counts == 1].ravel()] = True
    return mask


def mean_curvature_estimate(mesh: Mesh) -> np.ndarray:
    """Cotangent-Laplacian mean curvature with mixed Voronoi areas.

    ``H_i = -(1/2) <Delta x_i, n_i>``, positive for a sphere with outward
    normals.  Boundary and unreferenced vertices get NaN.
    """
    V, F = mesh.vertices, mesh.faces
    nv = len(V)
    P = V[F]
    lap = np.zeros_like(V)
    area = np.zeros(nv)
    tri_area = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
    cots = []
    for k in range(3):
        a, b, c = P[:, k], P[:, (k + 1) % 3], P[:, (k + 2) % 3]
        u, v = b - a, c - a
        cots.append(np.einsum("ij,ij->i", u, v) / np.maximum(np.linalg.norm(np.cross(u, v), axis=1), 1e-300))
    for k in range(3):
        # the angle at vertex k weighs the opposite edge (k+1, k+2)
        i, j = F[:, (k + 1) % 3], F[:, (k + 2) % 3]
        w = cots[k][:, None] * (V[j] - V[i])
        np.add.at(lap, i, w)
        np.add.at(lap, j, -w)
    obtuse = np.stack(cots, axis=1) < 0
    for k in range(3):
        i = F[:, k]
        a, b, c = P[:, k], P[:, (k + 1) % 3], P[:, (k + 2) % 3]
        vor = (np.sum((a - c) ** 2, axis=1) * cots[(k + 1) % 3] + np.sum((a - b) ** 2, axis=1) * cots[(k + 2) % 3]) / 8
        any_obt = obtuse.any(axis=1)
        contrib = np.where(~any_obt, vor, np.where(obtuse[:, k], tri_area / 2, tri_area / 4))
        np.add.at(area, i, contrib)
    with np.errstate(invalid="ignore", divide="ignore"):
        Kn = lap / (2 * area[:, None])
        H = -0.5 * np.einsum("ij,ij->i", Kn, mesh.normals)
    bad = boundary_vertices(F, nv) | (area <= 0)
    H[bad] = np.nan
    return H


def mesh_diameter(vertices: np.ndarray) -> float:
    P = vertices[np.isfinite(vertices).all(axis=1)]
    if len(P) < 2:
        return 0.0
    try:
        P = P[ConvexHull(P).vertices]
    except Exception:
        pass
    return float(pdist(P).max())


# ---------------------------------------------------------------- export


def export_mesh(mesh: Mesh, fmt: str, path) -> Path:
    """ASCII OBJ or binary little-endian PLY; I/O errors propagate unchanged."""
    path = Path(path)
    fmt = fmt.lower()
    if fmt == "obj":
        lines = [f"# vertices {len(mesh.vertices)} faces {len(mesh.faces)}"]
        lines += [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
        lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.normals]
        lines += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in mesh.faces + 1]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "ply":
        nv, nf = len(mesh.vertices), len(mesh.faces)
        H = mesh.H if mesh.H is not None else np.full(nv, np.nan)
        header = "\n".join([
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {nv}",
            "property float x", "property float y", "property float z",
            "property float nx", "property float ny", "property float nz",
            "property float mean_curvature",
            f"element face {nf}",
            "property list uchar int vertex_indices",
            "end_header",
        ]) + "\n"
        vdata = np.concatenate([mesh.vertices, mesh.normals, H[:, None]], axis=1).astype("<f4")
        fdata = np.zeros(nf, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
        fdata["n"], fdata["idx"] = 3, mesh.faces
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(vdata.tobytes())
            fh.write(fdata.tobytes())
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")
    return path


def read_obj(path) -> Mesh:
    v, f = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            v.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            f.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.array(v), np.array(f))


def read_ply(path) -> Mesh:
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    nv = nf = 0
    props = 0
    for line in header:
        p = line.split()
        if p[:2] == ["element", "vertex"]:
            nv = int(p[2])
        elif p[:2] == ["element", "face"]:
            nf = int(p[2])
        elif p[:1] == ["property"] and nf == 0 and p[1] == "float":
            props += 1
    vb = np.frombuffer(data, dtype="<f4", count=nv * props, offset=end).reshape(nv, props)
    off = end + vb.nbytes
    fb = np.frombuffer(data, dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=nf, offset=off)
    if struct.calcsize("<B3i") * nf + off != len(data):
        raise ValueError("PLY payload size does not match the header")
    m = Mesh(vb[:, :3].astype(float), fb["idx"].astype(np.int64), vb[:, 3:6].astype(float))
    if props > 6:
        m.H = vb[:, 6].astype(float)
    return m


# ---------------------------------------------------------------- test shapes


def icosphere(subdivisions: int = 4, radius: float = 1.0) -> Mesh:
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5),
         (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius
    return Mesh(V, np.array(faces), V / radius)


def cylinder_tube(radius: float = 0.5, length: float = 2.0, m: int = 64, k: int = 32) -> Mesh:
    th = 2 * np.pi * np.arange(m) / m
    zs = np.linspace(0, length, k)
    V = np.array([(radius * np.cos(a), radius * np.sin(a), z) for z in zs for a in th])
    N = np.array([(np.cos(a), np.sin(a), 0.0) for z in zs for a in th])
    faces = []
    for i in range(k - 1):
        for j in range(m):
            a, b = i * m + j, i * m + (j + 1) % m
            c, d = a + m, b + m
            faces += [(a, b, d), (a, d, c)]
    return Mesh(V, np.array(faces), N)


def flat_grid(m: int = 16) -> Mesh:
    xs = np.linspace(0, 1, m)
    V = np.array([(x, y, 0.0) for x in xs for y in xs])
    faces = []
    for i in range(m - 1):
        for j in range(m - 1):
            a, b, c, d = i * m + j, (i + 1) * m + j, (i + 1) * m + j + 1, i * m + j + 1
            faces += [(a, b, c), (a, c, d)]
    return Mesh(V, np.array(faces), np.tile([0.0, 0.0, 1.0], (len(V), 1)))
