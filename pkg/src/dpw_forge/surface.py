"""From unitarized frames to meshes: Iwasawa per sample, Sym-Bobenko, symmetry, checks."""

from __future__ import annotations

import cmath
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay

from .domains import ChartArc, ChartLine, Line, PathSpec
from .errors import (
    ClosingConditionError,
    ContractError,
    ConvergenceError,
    FactorizationError,
    PositivityError,
    UnderResolvedWarning,
    UnitarizabilityError,
)
from .loops import ID2, SIGMA3, SPEC_TOL, CircleGrid, MatrixLoop, inv2, iwasawa, mat_norm, resample, to_laurent
from .mesh import Mesh, mean_curvature_estimate, mesh_diameter, polar_faces
from .monodromy import family_setup, integrate_frame, worker_count
from .weierstrass import TorusData

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI = (SIGMA1, SIGMA2, SIGMA3)

DEFAULT_H = 0.5
DEFAULT_RESOLUTION = 64
DEFAULT_AVOID = 0.05
SURFACE_N = 256
DELAUNAY_SURFACE_N = 512
SURFACE_UNIT_TOL = 1e-6


# ---------------------------------------------------------------- su(2) <-> R^3


def to_r3(X: np.ndarray) -> np.ndarray:
    """``X = (i/2) (x1 s1 + x2 s2 + x3 s3)`` -> ``(x1, x2, x3)``."""
    return np.stack([np.real(-1j * np.trace(X @ s, axis1=-2, axis2=-1)) for s in PAULI], axis=-1)


def from_r3(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 0.5j * sum(x[..., k, None, None] * PAULI[k] for k in range(3))


def conjugation_rotation(g: np.ndarray) -> np.ndarray:
    """Rotation matrix ``R`` with ``to_r3(g^-1 X g) = R to_r3(X)`` for unitary ``g``."""
    gi = np.linalg.inv(g)
    cols = [to_r3(gi @ from_r3(e) @ g) for e in np.eye(3)]
    return np.array(cols).T


def reflect_bar(x: np.ndarray) -> np.ndarray:
    """``to_r3(-conj(X))``: the reflection realizing ``theta* f = -conj(f)``."""
    return to_r3(-np.conj(from_r3(x)))


# ---------------------------------------------------------------- Sym-Bobenko


def _value_and_derivative(F: np.ndarray, grid: CircleGrid, lam0: complex):
    """``F(lam0)`` and ``dF/dlambda(lam0)`` from samples ``(..., N, 2, 2)``."""
    N = grid.N
    K = N // 2 - 1
    spec = np.fft.fft(F, axis=-3) / N
    ks = np.arange(-K, K + 1)
    c = spec[..., ks % N, :, :] / (grid.radius ** ks)[:, None, None]
    p0 = complex(lam0) ** ks
    p1 = ks * complex(lam0) ** (ks - 1)
    return np.einsum("k,...kij->...ij", p0, c), np.einsum("k,...kij->...ij", p1, c)


def sym_bobenko_matrix(
    F0: np.ndarray, dF: np.ndarray, lam0: complex = 1.0, H: float = DEFAULT_H, normal_weight: float = 0.0
) -> np.ndarray:
    """``-(1/2H) (2 i lam dF F^-1 + w i F s3 F^-1)`` at ``lam0``, ``w = normal_weight``.

    The normal term only offsets the surface along its normal by ``w/H``.
    ``w = 0`` is the immersion itself; ``w = -1`` is its parallel CMC
    companion, which is branched at the umbilics; ``w = +1`` lands on a
    parallel surface that is not CMC.
    """
    if H == 0:
        raise ContractError("mean curvature H must be nonzero")
    Fi = inv2(F0)
    return -(1 / (2 * H)) * (2j * lam0 * dF @ Fi + normal_weight * 1j * F0 @ SIGMA3 @ Fi)


def sym_bobenko(F: MatrixLoop, lam0: complex = 1.0, H: float = DEFAULT_H, unit_tol: float = 1e-6):
    """Point of the immersion and unit normal for one frame loop.

    Returns ``(point, normal, f_matrix)``.
    """
    if abs(abs(lam0) - 1) < 1e-14:
        F0 = _value_and_derivative(F.samples, F.grid, lam0)[0]
        u = float(mat_norm(F0 @ F0.conj().T - ID2))
        if u > unit_tol:
            raise ContractError(f"frame is not unitary at lambda0 (residual {u:.3e})")
    pts, nrm, fm = _sym_many(F.samples[None], F.grid, lam0, H)
    return pts[0], nrm[0], fm[0]


def _sym_many(F: np.ndarray, grid: CircleGrid, lam0: complex, H: float):
    F0, dF = _value_and_derivative(F, grid, lam0)
    with np.errstate(invalid="ignore"):  # dropped vertices carry NaN frames
        fm = sym_bobenko_matrix(F0, dF, lam0, H)
        nm = to_r3(1j * F0 @ SIGMA3 @ inv2(F0))
        nm = nm / np.linalg.norm(nm, axis=-1, keepdims=True)
    return to_r3(fm), nm, fm


# ---------------------------------------------------------------- domain grids


@dataclass
class Ray:
    """A path from the basepoint and the parameters of the vertices on its last segment."""

    path: PathSpec
    s: np.ndarray
    vertices: np.ndarray


@dataclass
class DomainGrid:
    points: np.ndarray  # domain coordinate per vertex (u for the genus family, z otherwise)
    rays: list
    faces: np.ndarray
    chart: str = "z"
    avoid: float = DEFAULT_AVOID
    center: Optional[int] = None  # vertex sitting at the basepoint
    removed: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


def ring_counts(n: int, rings: int) -> np.ndarray:
    """Vertices per ring: about ``2 pi i`` on ring ``i``, rounded to a multiple of ``2n``."""
    i = np.arange(1, rings + 1)
    return 2 * n * np.maximum(1, np.rint(2 * math.pi * i / (2 * n))).astype(int)


def _orient(pts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    flip = ((b - a).conjugate() * (c - a)).imag < 0
    faces = np.array(faces)
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _lattice_layout(resolution: int, radius: float):
    """Square lattice of spacing ``radius / resolution`` clipped to the disk, for ``n = 2``.

    Vertex 0 is the centre, then the quarter ``a > 0, b >= 0`` (lattice
    coordinates), then its images under ``u -> i u``.  A lattice split into
    triangles along one diagonal is carried by the conformal chart to
    near-congruent triangles, where the cotangent Laplacian is second-order
    accurate.
    """
    R = resolution
    quarter = [(a, b) for a in range(1, R + 1) for b in range(0, R + 1) if a * a + b * b <= R * R]
    rot = lambda a, b, k: [(a, b), (-b, a), (-a, -b), (b, -a)][k]
    coords = [(0, 0)] + [rot(a, b, k) for k in range(4) for a, b in quarter]
    index = {ab: i for i, ab in enumerate(coords)}
    P = len(quarter)
    images = 1 + np.arange(4)[:, None] * P + np.arange(P)[None, :]
    conj_of = np.array([index[(a, -b)] for a, b in coords])
    h = radius / R
    pts = np.array([h * complex(a, b) for a, b in coords])
    faces = []
    for (a, b), i in index.items():
        q = [index.get(c) for c in ((a + 1, b), (a + 1, b + 1), (a, b + 1))]
        if None not in q:
            faces += [(i, q[0], q[1]), (i, q[1], q[2])]
    meta = {"layout": "lattice", "spacing": h, "lattice": coords, "index": index, "quarter": quarter}
    return pts, _orient(pts, np.array(faces)), images, conj_of, meta


def _ring_layout(n: int, resolution: int, radius: float):
    """Concentric rings with near-uniform spacing, Delaunay triangulated in ``u``."""
    rings = max(2, resolution // 2)
    counts = ring_counts(n, rings)
    offsets = 1 + np.concatenate([[0], np.cumsum(counts)[:-1]])
    pts = np.zeros(1 + counts.sum(), dtype=complex)
    conj_of = np.zeros(len(pts), dtype=int)
    images = []
    for i, (m, off) in enumerate(zip(counts, offsets)):
        pts[off: off + m] = radius * (i + 1) / rings * np.exp(2j * math.pi * (np.arange(m) + 0.5) / m)
        conj_of[off: off + m] = off + m - 1 - np.arange(m)
        per = m // (2 * n)
        images.append(off + (np.arange(2 * n)[:, None] * per + np.arange(per)[None, :]))
    faces = _orient(pts, Delaunay(np.column_stack([pts.real, pts.imag])).simplices)
    meta = {"layout": "rings", "rings": rings, "counts": counts, "offsets": offsets}
    return pts, faces, np.concatenate(images, axis=1), conj_of, meta


def genus_sector_rays(dom: DomainGrid, sector: int = 0, reflect: bool = False):
    """Paths reaching ``sigma^sector`` (and optionally ``theta``) of the fundamental sector.

    Each returned :class:`Ray` lists the vertices it reaches, so the results
    land on the correct images without further bookkeeping.
    """
    n, radius = dom.meta["n"], dom.meta["radius"]
    turn = cmath.exp(1j * math.pi * sector / n)
    fix = (lambda u: u.conjugate()) if reflect else (lambda u: u)
    rays = []
    if dom.meta["layout"] == "lattice":
        h, index = dom.meta["spacing"], dom.meta["index"]
        cols = {}
        for a, b in dom.meta["quarter"]:
            cols.setdefault(a, []).append(b)
        for a, bs in sorted(cols.items()):
            bs = np.array(sorted(bs))
            foot = fix(turn * h * a)
            verts = []
            for b in bs:
                u = fix(turn * h * complex(a, b)) / h
                verts.append(index[(int(round(u.real)), int(round(u.imag)))])
            top = bs[-1]
            if top == 0:
                path = PathSpec((ChartLine(n, 0j, foot),), "hyperelliptic", n)
                rays.append(Ray(path, np.array([1.0]), np.array(verts)))
                continue
            end = fix(turn * h * complex(a, top))
            path = PathSpec((ChartLine(n, 0j, foot), ChartLine(n, foot, end)), "hyperelliptic", n)
            rays.append(Ray(path, bs / top, np.array(verts)))
        return rays
    # rings: radially along the sector bisector, then along arcs towards both edges
    counts, offsets, rings = dom.meta["counts"], dom.meta["offsets"], dom.meta["rings"]
    sgn = -1.0 if reflect else 1.0
    lo = sector * math.pi / n
    mid = lo + math.pi / (2 * n)
    for i, (m, off) in enumerate(zip(counts, offsets)):
        rho = radius * (i + 1) / rings
        per = m // (2 * n)
        js = sector * per + np.arange(per)
        phis = (js + 0.5) * 2 * math.pi / m
        start = rho * cmath.exp(1j * sgn * mid)
        for edge, sel in ((lo, phis <= mid), (lo + math.pi / n, phis > mid)):
            if not sel.any():
                continue
            arc = ChartArc(n, rho, sgn * mid, sgn * edge)
            path = PathSpec((ChartLine(n, 0j, start), arc), "hyperelliptic", n)
            idx = js[sel]
            if reflect:
                idx = (m - 1 - idx) % m
            rays.append(Ray(path, (phis[sel] - mid) / (edge - mid), off + idx))
    return rays


def genus_domain(n: int, resolution: int = DEFAULT_RESOLUTION, avoid: float = DEFAULT_AVOID) -> DomainGrid:
    """Grid of the ``u``-disk ``|u| <= 1 - avoid`` (``z = u^2``); branch points sit on ``|u| = 1``.

    For ``n = 2`` a square lattice with ``resolution`` steps along the
    radius, so the fundamental quarter holds about ``resolution^2 pi/4``
    vertices; otherwise rings (a square lattice has no ``pi/n`` rotation).
    ``meta["sector_images"][k]`` are the images of the fundamental sector
    under ``sigma^k`` and ``meta["conj_of"]`` realizes ``theta``.
    """
    radius = 1.0 - avoid
    layout = _lattice_layout(resolution, radius) if n == 2 else _ring_layout(n, resolution, radius)
    pts, faces, images, conj_of, meta = layout
    meta.update({"radius": radius, "n": n, "sector_images": images, "conj_of": conj_of})
    dom = DomainGrid(pts, [], faces, "u", avoid, center=0, meta=meta)
    dom.rays = genus_sector_rays(dom, 0)
    return dom


def torus_domain(torus: TorusData, resolution: int = DEFAULT_RESOLUTION, avoid: float = DEFAULT_AVOID) -> DomainGrid:
    """Cell-centred square grid of the period cell centred at 0, minus the puncture discs.

    Each vertex is reached along the real axis and then vertically, so no
    path crosses a puncture.
    """
    w1 = torus.omega1
    m = resolution
    xs = -w1 + (np.arange(m) + 0.5) * 2 * w1 / m
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = (X + 1j * Y).ravel()
    idx = np.arange(m * m).reshape(m, m)
    removed = np.zeros(m * m, dtype=bool)
    for p in torus.punctures:
        removed |= np.abs(pts - p) < avoid * w1 * 2
    rays = []
    half = m // 2
    for i, x in enumerate(xs):
        for sign, js in ((1, np.arange(half, m)), (-1, np.arange(half - 1, -1, -1))):
            ys = np.abs(xs[js])
            keep = []
            for j in js:
                if removed[idx[i, j]]:
                    break
                keep.append(j)
            if not keep:
                continue
            top = ys[len(keep) - 1]
            path = PathSpec((Line(0j, complex(x)), Line(complex(x), complex(x, sign * top))), "torus")
            rays.append(Ray(path, ys[: len(keep)] / top, idx[i, keep]))
    faces = []
    for i in range(m - 1):
        for j in range(m - 1):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            faces += [(a, b, c), (a, c, d)]
    faces = np.array(faces)
    faces = faces[~removed[faces].any(axis=1)]
    return DomainGrid(pts, rays, faces, "z", avoid, removed=removed, meta={"omega1": w1})


def delaunay_domain(n: int, resolution: int = DEFAULT_RESOLUTION, avoid: float = DEFAULT_AVOID) -> DomainGrid:
    """Polar grid of the closed unit disk minus discs around the n-th roots of unity."""
    M = R = resolution
    if M % n:
        raise ValueError(f"angular resolution {M} must be a multiple of n = {n}")
    pts = np.zeros(1 + M * R, dtype=complex)
    punct = np.exp(2j * math.pi * np.arange(n) / n)
    removed = np.zeros(len(pts), dtype=bool)
    rays = []
    s = np.arange(1, R + 1) / R
    for j in range(M):
        phi = (j + 0.5) * 2 * math.pi / M
        ray_pts = s * cmath.exp(1j * phi)
        pts[1 + j * R: 1 + (j + 1) * R] = ray_pts
        dist = np.min(np.abs(ray_pts[:, None] - punct[None]), axis=1)
        bad = np.nonzero(dist < avoid)[0]
        stop = bad[0] if bad.size else R
        removed[1 + j * R + stop: 1 + (j + 1) * R] = True
        if stop:
            path = PathSpec((Line(0j, ray_pts[stop - 1]),), "plane")
            rays.append(Ray(path, s[:stop] / s[stop - 1], 1 + j * R + np.arange(stop)))
    faces = polar_faces(M, R)
    faces = faces[~removed[faces].any(axis=1)]
    return DomainGrid(pts, rays, faces, "z", avoid, center=0, removed=removed, meta={"n": n})


# ---------------------------------------------------------------- frames


def _iwasawa_samples(
    phis: np.ndarray,
    grid: CircleGrid,
    workers: int,
    tol: float = SPEC_TOL,
    unit_tol: float = SURFACE_UNIT_TOL,
    drop: bool = False,
) -> np.ndarray:
    """Unitary factors of many loops; with ``drop`` a failed factorization yields NaN samples."""

    def one(phi):
        try:
            with warnings.catch_warnings():
                if drop:
                    warnings.simplefilter("ignore", UnderResolvedWarning)
                F, _ = iwasawa(MatrixLoop(grid, phi), tol=tol, unit_tol=unit_tol, K=grid.N // 4)
        except (PositivityError, ConvergenceError, FactorizationError):
            if not drop:
                raise
            return np.full((grid.N, 2, 2), np.nan, dtype=complex)
        return F.samples

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, phis)))
    return np.array([one(p) for p in phis])


def frame_at(
    domain: DomainGrid,
    xi,
    h: MatrixLoop,
    rays=None,
    workers: Optional[int] = None,
    tol: float = SPEC_TOL,
    unit_tol: float = SURFACE_UNIT_TOL,
    drop: bool = False,
) -> dict:
    """Unitary Iwasawa factors of ``h Phi`` at every vertex reached by ``rays``.

    Returns ``{vertex index: F samples (N, 2, 2)}``; with ``drop`` the
    vertices whose factorization fails carry NaN samples.
    """
    grid = h.grid
    workers = workers or worker_count()
    rays = domain.rays if rays is None else rays
    nseg = lambda r: len(r.path.segments)

    def integrate(ray):
        s_eval = [np.array([])] * (nseg(ray) - 1) + [ray.s]
        ff = integrate_frame(xi, ray.path, grid, phi0=h, s_eval=s_eval)
        s_rec, fr = ff.s_values[-1], ff.frames[-1]
        pick = [int(np.argmin(np.abs(s_rec - s))) for s in ray.s]
        return fr[pick]

    if workers > 1 and len(rays) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            phis = list(pool.map(integrate, rays))
    else:
        phis = [integrate(r) for r in rays]
    out = {}
    for ray, ph in zip(rays, phis):
        F = _iwasawa_samples(ph, grid, workers, tol, unit_tol, drop)
        for v, f in zip(ray.vertices, F):
            out[int(v)] = f
    if domain.center is not None:
        out[domain.center] = _iwasawa_samples(np.array(h.samples)[None], grid, 1, tol, unit_tol, drop)[0]
    return out


# ---------------------------------------------------------------- surfaces


def _unitarizer_loop(U, grid: CircleGrid) -> MatrixLoop:
    h = U.h if U.h.laurent is not None else to_laurent(U.h)
    return resample(h, grid)


def _points(frames: dict, grid: CircleGrid, lam0, H):
    idx = np.array(sorted(frames))
    F = np.array([frames[i] for i in idx])
    pts, nrm, _ = _sym_many(F, grid, lam0, H)
    return idx, pts, nrm


def build_surface(
    family: str,
    params: dict,
    resolution: int = DEFAULT_RESOLUTION,
    H: float = DEFAULT_H,
    lam0: complex = 1.0,
    avoid: float = DEFAULT_AVOID,
    surface_n: Optional[int] = None,
    report=None,
    unitarizer=None,
    verify: bool = True,
    workers: Optional[int] = None,
    thresholds: Optional[dict] = None,
) -> Mesh:
    """Mesh of the immersion generated by ``(xi, h)`` for one of the built-in families.

    ``thresholds`` may override ``closing`` and ``unitarity`` (refusal
    levels for the monodromy data) and ``iwasawa_tol``/``iwasawa_unit_tol``
    (per-vertex factorization).  The Delaunay-chain unitarizer degenerates
    at ``lambda = 1``, so that family runs on a finer grid with loose
    factorization tolerances and the mesh is flagged experimental.
    """
    from .monodromy import analyze
    from .unitarize import unitarize

    thr = {"closing": 1e-6, "unitarity": 1e-5, "iwasawa_tol": SPEC_TOL, "iwasawa_unit_tol": SURFACE_UNIT_TOL}
    if family == "delaunay_chain":
        thr.update({"iwasawa_tol": 0.05, "iwasawa_unit_tol": 0.05})
    thr.update(thresholds or {})
    if report is None:
        report = analyze(family, params, workers=workers)
    if family in ("genus_g", "torus"):
        worst = max(max(v) for v in report.closing.values())
        if worst > thr["closing"]:
            raise ClosingConditionError(f"closing condition residual {worst:.3e} exceeds {thr['closing']:g}")
    if unitarizer is None:
        unitarizer, _ = unitarize(report)
    worst_u = max(unitarizer.meta["unitarity"].values())
    if worst_u > thr["unitarity"]:
        raise UnitarizabilityError(f"unitarity residual {worst_u:.3e} exceeds {thr['unitarity']:g}")
    xi, paths, sym = family_setup(family, report.params)
    if surface_n is None:
        surface_n = DELAUNAY_SURFACE_N if family == "delaunay_chain" else SURFACE_N
    grid = CircleGrid(surface_n)
    h = _unitarizer_loop(unitarizer, grid)
    workers = workers or worker_count()
    tols = {"tol": thr["iwasawa_tol"], "unit_tol": thr["iwasawa_unit_tol"]}
    # near the ends of the torus and Delaunay families Phi grows until the
    # factorization is hopeless; those vertices join the excluded zone
    drop = {"drop": family != "genus_g"}
    diag = {"family": family, "params": dict(report.params), "H": H, "lam0": complex(lam0), "grid_N": grid.N,
            "grid_radius": grid.radius}

    if family == "genus_g":
        n = int(report.params["n"])
        dom = genus_domain(n, resolution, avoid)
        frames = frame_at(dom, xi, h, workers=workers, **tols)
        idx, pts, nrm = _points(frames, grid, lam0, H)
        V = len(dom.points)
        verts = np.full((V, 3), np.nan)
        normals = np.full((V, 3), np.nan)
        verts[idx], normals[idx] = pts, nrm
        # replicate the fundamental sector by the rotations g_sigma^-k . g_sigma^k
        gs = sym["g_sigma"]
        images = dom.meta["sector_images"]
        for k in range(1, 2 * n):
            Rk = conjugation_rotation(np.linalg.matrix_power(gs, k))
            verts[images[k]] = verts[images[0]] @ Rk.T
            normals[images[k]] = normals[images[0]] @ Rk.T
        mesh = Mesh(verts, dom.faces, normals)
        diag["axis_rotation"] = conjugation_rotation(gs).tolist()
        if verify:
            diag.update(_genus_checks(dom, xi, h, grid, lam0, H, verts, workers, paths, tols))
    elif family == "torus":
        torus = TorusData(float(report.params["omega1"])) if report.params.get("omega1") else TorusData()
        dom = torus_domain(torus, resolution, avoid)
        frames = frame_at(dom, xi, h, workers=workers, **tols, **drop)
        idx, pts, nrm = _points(frames, grid, lam0, H)
        mesh = _assemble(dom, idx, pts, nrm)
    elif family == "delaunay_chain":
        n = int(report.params["n"])
        dom = delaunay_domain(n, resolution, avoid)
        frames = frame_at(dom, xi, h, workers=workers, **tols, **drop)
        idx, pts, nrm = _points(frames, grid, lam0, H)
        mesh = _assemble(dom, idx, pts, nrm)
        diag["experimental"] = True
        diag.update(delaunay_diagnostics(mesh, dom, n))
    else:
        raise ValueError(f"no surface builder for family {family!r}")
    Fs = np.array(list(frames.values()))
    failed = ~np.isfinite(Fs).all(axis=(1, 2, 3))
    diag["dropped_vertices"] = int(failed.sum())
    Fs = Fs[~failed]
    diag["frame_unitarity_max"] = float(mat_norm(Fs @ np.conj(np.swapaxes(Fs, -1, -2)) - ID2).max())
    mesh.H = mean_curvature_estimate(mesh)
    mesh.meta.update(diag)
    mesh.meta["H_stats"] = h_statistics(mesh, H)
    return mesh


def _assemble(dom: DomainGrid, idx, pts, nrm) -> Mesh:
    V = len(dom.points)
    verts = np.full((V, 3), np.nan)
    normals = np.full((V, 3), np.nan)
    verts[idx], normals[idx] = pts, nrm
    used = np.zeros(V, dtype=bool)
    used[dom.faces.ravel()] = True
    keep = used & np.isfinite(verts).all(axis=1)
    remap = -np.ones(V, dtype=int)
    remap[keep] = np.arange(keep.sum())
    faces = remap[dom.faces]
    faces = faces[(faces >= 0).all(axis=1)]
    return Mesh(verts[keep], faces, normals[keep], meta={"domain_points": dom.points[keep]})


def _genus_checks(dom, xi, h, grid, lam0, H, verts, workers, paths, tols) -> dict:
    """Symmetry and period residuals from independently integrated paths."""
    diam = mesh_diameter(verts)
    out = {"diameter": diam}
    sub = lambda rays: DomainGrid(dom.points, rays, dom.faces, "u")
    # rotation: integrate the next sector and compare with the rotated fundamental sector
    fr = frame_at(sub(genus_sector_rays(dom, 1)), xi, h, workers=workers, **tols)
    idx, pts, _ = _points(fr, grid, lam0, H)
    out["rotation_residual"] = float(np.max(np.linalg.norm(pts - verts[idx], axis=1)) / diam)
    # reflection theta(u) = conj(u): integrate the mirrored paths, compare with -conj(f)
    fr = frame_at(sub(genus_sector_rays(dom, 0, reflect=True)), xi, h, workers=workers, **tols)
    idx, pts, _ = _points(fr, grid, lam0, H)
    src = dom.meta["conj_of"][idx]
    out["reflection_residual"] = float(np.max(np.linalg.norm(pts - reflect_bar(verts[src]), axis=1)) / diam)
    # period: both ends of the generator loop gamma_0
    ff = integrate_frame(xi, paths["M0"], grid, phi0=h)
    Fs = _iwasawa_samples(np.array([ff.frames[0][0], ff.frames[-1][-1]]), grid, 1, **tols)
    p, _, _ = _sym_many(Fs, grid, lam0, H)
    out["period_residual"] = float(np.linalg.norm(p[1] - p[0]) / diam)
    out["layout"] = dom.meta["layout"]
    return out


def h_statistics(mesh: Mesh, H: float, exclude: Optional[np.ndarray] = None) -> dict:
    est = np.abs(mesh.H)
    ok = np.isfinite(est)
    if exclude is not None:
        ok &= ~exclude
    vals = est[ok]
    if not vals.size:
        return {"count": 0}
    return {
        "count": int(vals.size),
        "mean": float(vals.mean()),
        "relative_std": float(vals.std() / vals.mean()),
        "max_relative_deviation": float(np.max(np.abs(vals - abs(H))) / abs(H)),
        "target": abs(H),
    }


def delaunay_diagnostics(mesh: Mesh, dom: DomainGrid, n: int) -> dict:
    """End-axis directions and boundary planarity; reported without thresholds."""
    z = mesh.meta["domain_points"]
    P = mesh.vertices
    out = {"end_axis_spread": float("nan"), "boundary_planarity": float("nan")}  # nan: too few samples
    axes = []
    for j in range(n):
        p = cmath.exp(2j * math.pi * j / n)
        ring = np.abs(np.abs(z - p) - 2 * dom.avoid) < dom.avoid
        if ring.sum() >= 3:
            Q = P[ring] - P[ring].mean(axis=0)
            _, _, vt = np.linalg.svd(Q)
            axes.append(vt[-1])
    if axes:
        A = np.array(axes)
        A = A * np.sign(A[:, 2:3] + 1e-300)
        out["end_axes"] = A.tolist()
        out["end_axis_spread"] = float(np.max(np.linalg.norm(A - A.mean(axis=0), axis=1)))
    rim = np.abs(np.abs(z) - np.abs(z).max()) < 1e-9
    if rim.sum() >= 3:
        Q = P[rim] - P[rim].mean(axis=0)
        s = np.linalg.svd(Q, compute_uv=False)
        out["boundary_planarity"] = float(s[-1] / s[0])
    return out


# ---------------------------------------------------------------- cylinder calibration


def cylinder_frames(z: np.ndarray, grid: CircleGrid) -> np.ndarray:
    """``exp(z off[1/lambda, 1])`` in closed form for each ``z`` and lambda sample."""
    lam = grid.points
    mu = np.sqrt(1 / lam)
    zz = np.asarray(z, dtype=complex)[:, None]
    ch, sh = np.cosh(zz * mu), np.sinh(zz * mu) / mu
    out = np.zeros((len(z), grid.N, 2, 2), dtype=complex)
    out[..., 0, 0] = out[..., 1, 1] = ch
    out[..., 0, 1] = sh / lam
    out[..., 1, 0] = sh
    return out


def cylinder_mesh(H: float = DEFAULT_H, resolution: int = 32, extent: float = 1.0, surface_n: int = 128,
                  workers: Optional[int] = None) -> Mesh:
    """Surface of ``xi = off[1/lambda, 1] dz`` on a square patch; a round cylinder."""
    grid = CircleGrid(surface_n)
    xs = np.linspace(-extent, extent, resolution)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    z = (X + 1j * Y).ravel()
    F = _iwasawa_samples(cylinder_frames(z, grid), grid, workers or worker_count())
    pts, nrm, _ = _sym_many(F, grid, 1.0, H)
    idx = np.arange(resolution * resolution).reshape(resolution, resolution)
    faces = []
    for i in range(resolution - 1):
        for j in range(resolution - 1):
            a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
            faces += [(a, b, c), (a, c, d)]
    mesh = Mesh(pts, np.array(faces), nrm)
    mesh.H = mean_curvature_estimate(mesh)
    mesh.meta["H_stats"] = h_statistics(mesh, H)
    return mesh
