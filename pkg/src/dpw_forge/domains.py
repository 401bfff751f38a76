"""Domains and paths for the three surface families.

A path is a sequence of segments, each parametrized over ``s in [0, 1]``.
Every segment can be sampled into a :class:`PathSample` carrying ``z`` and
``dz/ds``; segments on the hyperelliptic curve ``w^2 = z (1 - z^n)`` also
carry ``w`` and ``(dz/ds)/w``, the latter computed in a chart where it is
smooth even when the segment touches a branch point.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import InvalidPathError
from .weierstrass import TorusData


class PathSample(NamedTuple):
    z: np.ndarray
    dz: np.ndarray
    w: Optional[np.ndarray] = None
    dzw: Optional[np.ndarray] = None


class CurvePoint(NamedTuple):
    z: complex
    w: complex


def curve_residual(z, w, n: int) -> float:
    return abs(w * w - z * (1 - z ** n)) / (1 + abs(z) ** (n + 1))


# ---------------------------------------------------------------- segments


@dataclass(frozen=True)
class Line:
    a: complex
    b: complex

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        return PathSample(self.a + (self.b - self.a) * s, np.full(s.shape, self.b - self.a, dtype=complex))

    def describe(self) -> dict:
        return {"type": "line", "start": _cx(self.a), "end": _cx(self.b)}

    def scaled(self, factor: complex) -> "Line":
        return Line(self.a * factor, self.b * factor)


@dataclass(frozen=True)
class Arc:
    center: complex
    radius: float
    theta0: float
    theta1: float

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        th = self.theta0 + (self.theta1 - self.theta0) * s
        e = np.exp(1j * th)
        return PathSample(self.center + self.radius * e, 1j * self.radius * (self.theta1 - self.theta0) * e)

    def describe(self) -> dict:
        return {
            "type": "arc",
            "center": _cx(self.center),
            "radius": self.radius,
            "theta": [self.theta0, self.theta1],
            "start": _cx(complex(self.sample(0.0).z)),
            "end": _cx(complex(self.sample(1.0).z)),
        }

    def scaled(self, factor: complex) -> "Arc":
        rot = cmath.phase(factor)
        return Arc(self.center * factor, self.radius * abs(factor), self.theta0 + rot, self.theta1 + rot)


@dataclass(frozen=True)
class BranchRay:
    """Out-and-back path from ``(0, 0)`` to the branch point ``alpha^(2k)``.

    The chart ``z = alpha^(2k) sin^2(pi s)`` passes through the branch
    point at ``s = 1/2``; ``w`` changes sign there by analytic continuation
    and ``(dz/ds)/w`` stays smooth on the whole interval.
    """

    n: int
    k: int

    @property
    def alpha(self) -> complex:
        return cmath.exp(1j * math.pi / self.n)

    def _sheet(self) -> complex:
        return (-self.alpha) ** self.k

    def _S(self, x):
        return sum(x ** j for j in range(self.n))

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        rot = self.alpha ** (2 * self.k)
        x = np.sin(np.pi * s) ** 2
        rootS = np.sqrt(self._S(x))
        z = rot * x
        dz = rot * np.pi * np.sin(2 * np.pi * s)
        w = self._sheet() * 0.5 * np.sin(2 * np.pi * s) * rootS
        dzw = 2 * np.pi * rot / (self._sheet() * rootS)
        c = lambda v: np.broadcast_to(np.asarray(v, dtype=complex), s.shape)
        return PathSample(c(z), c(dz), c(w), c(dzw))

    def describe(self) -> dict:
        return {"type": "branch_ray", "n": self.n, "k": self.k, "turn": _cx(self.alpha ** (2 * self.k))}


@dataclass(frozen=True)
class ChartLine:
    """Straight segment in the chart ``u`` with ``z = u^2``, ``w = u sqrt(1 - u^(2n))``.

    Valid while ``1 - u^(2n)`` avoids the negative real axis, i.e. away
    from the rays through the branch points beyond ``|u| = 1``.
    """

    n: int
    u0: complex
    u1: complex

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        u = self.u0 + (self.u1 - self.u0) * s
        du = self.u1 - self.u0
        root = np.sqrt(1 - u ** (2 * self.n))
        z = u * u
        return PathSample(z, 2 * u * du, u * root, 2 * du / root)

    def describe(self) -> dict:
        return {"type": "chart_line", "n": self.n, "start": _cx(self.u0), "end": _cx(self.u1)}


@dataclass(frozen=True)
class ChartArc:
    """Arc ``u = rho exp(i phi)`` in the same chart as :class:`ChartLine`."""

    n: int
    rho: float
    phi0: float
    phi1: float

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        u = self.rho * np.exp(1j * (self.phi0 + (self.phi1 - self.phi0) * s))
        du = 1j * (self.phi1 - self.phi0) * u
        root = np.sqrt(1 - u ** (2 * self.n))
        return PathSample(u * u, 2 * u * du, u * root, 2 * du / root)

    def describe(self) -> dict:
        return {"type": "chart_arc", "n": self.n, "rho": self.rho, "phi": [self.phi0, self.phi1]}


def _cx(v: complex):
    return [float(np.real(v)), float(np.imag(v))]


# ---------------------------------------------------------------- paths


@dataclass(frozen=True)
class PathSpec:
    segments: tuple
    domain: str = "plane"  # plane | torus | hyperelliptic
    n: Optional[int] = None
    sheet: Optional[complex] = None
    avoid: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def point(self, t: float) -> complex:
        """Point at global parameter ``t``; segments share ``[0, 1]`` evenly."""
        m = len(self.segments)
        i = min(int(t * m), m - 1)
        return complex(self.segments[i].sample(t * m - i).z)

    def describe(self) -> dict:
        return {
            "domain": self.domain,
            "n": self.n,
            "sheet": None if self.sheet is None else _cx(self.sheet),
            "avoid": self.avoid,
            "segments": [seg.describe() for seg in self.segments],
        }

    def scaled(self, factor: complex) -> "PathSpec":
        return PathSpec(tuple(seg.scaled(factor) for seg in self.segments), self.domain, self.n, self.sheet, self.avoid)


def concatenate(*paths: PathSpec) -> PathSpec:
    """Traverse ``paths[0]`` first, then ``paths[1]``, and so on."""
    segs = tuple(seg for p in paths for seg in p.segments)
    return PathSpec(segs, paths[0].domain, paths[0].n, paths[0].sheet, paths[0].avoid)


def winding_number(path: PathSpec, point: complex, samples: int = 4096) -> int:
    total = 0.0
    s = np.linspace(0.0, 1.0, samples)
    for seg in path.segments:
        z = seg.sample(s).z - point
        total += float(np.sum(np.angle(z[1:] / z[:-1])))
    return int(round(total / (2 * math.pi)))


# ---------------------------------------------------------------- hyperelliptic


def branch_points(n: int):
    return [0j] + [cmath.exp(2j * math.pi * j / n) for j in range(n)]


def gamma_k_point(n: int, k: int, s: float) -> CurvePoint:
    """The explicit out-and-back parametrization of the genus-g generator paths."""
    alpha = cmath.exp(1j * math.pi / n)
    sheet = (-alpha) ** k
    if s <= 0.5:
        x = 2 * s
        return CurvePoint(x * alpha ** (2 * k), sheet * abs(cmath.sqrt(x * (1 - x ** n))))
    x = 2 * (1 - s)
    return CurvePoint(x * alpha ** (2 * k), -sheet * abs(cmath.sqrt(x * (1 - x ** n))))


def gamma_k_path(n: int, k: int) -> PathSpec:
    if n < 2 or n % 2:
        raise ValueError("n must be an even integer >= 2")
    if not 0 <= k < n:
        raise ValueError("k must lie in 0..n-1")
    return PathSpec((BranchRay(n, k),), "hyperelliptic", n, (-cmath.exp(1j * math.pi / n)) ** k)


def _track(path: PathSpec, n: int, samples: int):
    """Per segment: fine parameter grid and continued ``w`` values."""
    bps = branch_points(n)
    ref = 1.0 if path.sheet is None else complex(path.sheet)
    refine = 64
    last = None  # last nonzero w seen
    at_branch = False
    out = []
    for seg in path.segments:
        sf = np.linspace(0.0, 1.0, refine * (samples - 1) + 1)
        smp = seg.sample(sf)
        if smp.w is not None:
            out.append((sf, np.asarray(smp.z, dtype=complex), np.asarray(smp.w, dtype=complex)))
            last, at_branch = complex(smp.w[-1]), abs(smp.w[-1]) < 1e-12
            continue
        zf = np.asarray(smp.z, dtype=complex)
        for b in bps:
            if zf.size > 2 and np.abs(zf[1:-1] - b).min() < 1e-9:
                raise InvalidPathError(f"path crosses branch point {b:.6g} inside a segment")
        wf = np.empty_like(zf)
        for i, z in enumerate(zf):
            root = cmath.sqrt(z * (1 - z ** n))
            if abs(root) < 1e-12:
                wf[i] = 0j
                at_branch = True
                continue
            if last is None:
                guide = ref
            elif at_branch:
                guide = -last
            else:
                guide = last
            w = root if (root * np.conj(guide)).real >= 0 else -root
            wf[i] = w
            last, at_branch = w, False
        out.append((sf, zf, wf))
    return out


def hyperelliptic_continue(path: PathSpec, n: int, samples: int = 65, curve_tol: float = 1e-9) -> list:
    """Sample ``(z, w)`` along ``path`` with ``w`` continued from the initial sheet.

    Segments that know their own sheet (branch rays, chart lines) are used
    as is.  Plain z-plane segments are tracked by nearest-root continuation
    on a refined grid.  The sheet datum orients ``w`` when the path starts at
    a branch point; at a branch point reached between two segments the
    continuation runs through the local coordinate ``u = sqrt(z - b)``, which
    flips ``w`` on a retraced segment.  Crossing a branch point strictly
    inside a segment is an error.
    """
    out = []
    for sf, zf, wf in _track(path, n, samples):
        step = (len(sf) - 1) // (samples - 1)
        out.extend(CurvePoint(complex(zf[i]), complex(wf[i])) for i in range(0, len(sf), step))
    for p in out:
        if curve_residual(p.z, p.w, n) > curve_tol:
            raise InvalidPathError(f"continued point ({p.z:.6g}, {p.w:.6g}) is off the curve")
    return out


@dataclass(frozen=True, eq=False)
class LiftedSegment:
    """A z-plane segment carrying the sheet of ``w`` found by continuation."""

    base: object
    n: int
    s_tab: np.ndarray
    w_tab: np.ndarray

    def sample(self, s) -> PathSample:
        s = np.asarray(s, dtype=float)
        b = self.base.sample(s)
        z = np.asarray(b.z, dtype=complex)
        root = np.sqrt(z * (1 - z ** self.n))
        guide = np.interp(s, self.s_tab, self.w_tab.real) + 1j * np.interp(s, self.s_tab, self.w_tab.imag)
        w = np.where((root * np.conj(guide)).real >= 0, root, -root)
        with np.errstate(divide="ignore", invalid="ignore"):
            dzw = b.dz / w
        return PathSample(z, b.dz, w, dzw)

    def describe(self) -> dict:
        return dict(self.base.describe(), lifted=True)


def lift_path(path: PathSpec, n: int) -> PathSpec:
    """Attach sheet data to every plain segment of a hyperelliptic path."""
    segs = []
    for seg, (sf, _, wf) in zip(path.segments, _track(path, n, 65)):
        segs.append(seg if isinstance(seg, (BranchRay, ChartLine, ChartArc, LiftedSegment)) else LiftedSegment(seg, n, sf, wf))
    return PathSpec(tuple(segs), "hyperelliptic", n, path.sheet, path.avoid, path.meta)


# ---------------------------------------------------------------- torus


def torus_paths(torus: TorusData | None = None, width: float | None = None):
    """``(gamma1, gamma2, delta1, delta2)`` based at ``z0 = 0``.

    ``delta1`` leaves 0 towards ``omega3/2``, passes it on the right, turns
    around it on a half circle of radius ``width`` and returns on the left,
    so it winds once counterclockwise around ``omega3/2``.  ``delta2`` is its
    point reflection through 0.
    """
    if torus is None:
        torus = TorusData()
    if width is None:
        width = torus.omega1 / 3
    q = torus.omega3 / 2
    e = q / abs(q)
    nrm = 1j * e
    ang = cmath.phase(e)
    right, left = q - width * nrm, q + width * nrm
    d1 = (Line(0j, right), Arc(q, width, ang - math.pi / 2, ang + math.pi / 2), Line(left, 0j))
    d2 = tuple(seg.scaled(-1) for seg in d1)
    g1 = PathSpec((Line(0j, 2 * torus.omega1),), "torus")
    g2 = PathSpec((Line(0j, 2 * torus.omega2),), "torus")
    return g1, g2, PathSpec(d1, "torus", avoid=width), PathSpec(d2, "torus", avoid=width)


# ---------------------------------------------------------------- polygons


def polygon_loop(n: int, j: int = 0) -> PathSpec:
    """Closed polygon ``0 -> alpha^-1 -> 2 -> alpha -> 0`` rotated by ``alpha^(2j)``."""
    if n < 3:
        raise ValueError("n must be >= 3")
    if not 0 <= j < n:
        raise ValueError("j must lie in 0..n-1")
    alpha = cmath.exp(1j * math.pi / n)
    rot = alpha ** (2 * j)
    verts = [0j, 1 / alpha, 2 + 0j, alpha, 0j]
    segs = tuple(Line(verts[i] * rot, verts[i + 1] * rot) for i in range(4))
    return PathSpec(segs, "plane")
