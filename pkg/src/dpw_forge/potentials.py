"""Holomorphic potentials ``xi = A(z, lambda) dz`` and gauge transformations.

A potential is evaluated along a path segment: given a :class:`PathSample`
(points, ``dz/ds`` and, on the curve, ``w`` and ``(dz/ds)/w``) and an array
of spectral parameters it returns the ``ds``-coefficient of ``xi`` with
shape ``sample.shape + lam.shape + (2, 2)``.
"""

from __future__ import annotations

import ast
import cmath
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .domains import PathSample
from .errors import ConfigError, ParameterWindowError, SingularityError
from .weierstrass import TorusData, weierstrass_p

FAMILIES = ("genus_g", "torus", "delaunay_chain", "custom")


def t_factor(lam):
    """``t = lambda^-1 (lambda - 1)^2``."""
    lam = np.asarray(lam, dtype=complex)
    return (lam - 1) ** 2 / lam


def _outer(sample_part, lam_part):
    """Broadcast sample-shaped and lambda-shaped arrays against each other."""
    a = np.asarray(sample_part, dtype=complex)
    b = np.asarray(lam_part, dtype=complex)
    return a.reshape(a.shape + (1,) * b.ndim) * b


def _assemble(a11, a12, a21, a22):
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    out = np.empty(a11.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = a11
    out[..., 0, 1] = a12
    out[..., 1, 0] = a21
    out[..., 1, 1] = a22
    return out


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A potential family with its parameters and an evaluation hook.

    ``form(sample, lam)`` returns the ``ds``-coefficient of ``xi``.
    ``domain`` says which paths it accepts (plane, torus or hyperelliptic).
    """

    family: str
    params: dict
    form: Callable
    domain: str = "plane"
    trace_free: bool = True
    meta: dict = field(default_factory=dict)

    def pullback(self, sample: PathSample, lam) -> np.ndarray:
        if self.domain == "hyperelliptic" and sample.w is None:
            raise SingularityError("curve potential needs w along the path; lift the path first")
        out = self.form(sample, np.asarray(lam, dtype=complex))
        if not np.all(np.isfinite(out)):
            z = np.atleast_1d(sample.z)
            bad = np.argwhere(~np.isfinite(out.reshape(z.shape + (-1,))).all(axis=-1))
            loc = complex(z[tuple(bad[0])]) if bad.size else complex(z.flat[0])
            raise SingularityError(f"potential is singular near z={loc:.6g}")
        return out

    def evaluate(self, z, lam, w=None) -> np.ndarray:
        """``A(z, lambda)`` with ``xi = A dz``; ``w`` is required on the curve."""
        z = np.asarray(z, dtype=complex)
        one = np.ones_like(z)
        if self.domain == "hyperelliptic":
            if w is None:
                raise SingularityError("curve potential needs the sheet value w")
            w = np.asarray(w, dtype=complex)
            if np.any(np.abs(w) < 1e-14):
                raise SingularityError("evaluation at a branch point needs the curve-local coordinate")
            return self.pullback(PathSample(z, one, w, one / w), lam)
        return self.pullback(PathSample(z, one), lam)

    def describe(self) -> dict:
        return {"family": self.family, "params": {k: _jsonable(v) for k, v in self.params.items()}}


def _jsonable(v):
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# ---------------------------------------------------------------- genus g


def xi_genus_g(n: int, c: float) -> PotentialSpec:
    """``off[c t w^-1 dz, d(z^(n-1) w)]`` on ``w^2 = z (1 - z^n)``."""
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
        raise ParameterWindowError(f"genus_g needs an even integer n >= 2, got {n}")
    if c == 0:
        raise ParameterWindowError("c must be nonzero")
    n, c = int(n), float(c)

    def form(smp: PathSample, lam):
        z, dz, w, dzw = smp
        # d(z^(n-1) w) = (n-1) z^(n-2) w dz + z^(n-1) w' dz, with 2 w w' = 1 - (n+1) z^n
        low = (n - 1) * z ** (n - 2) * w * dz + 0.5 * z ** (n - 1) * (1 - (n + 1) * z ** n) * dzw
        up = _outer(c * dzw, t_factor(lam))
        return _assemble(0, up, _outer(low, np.ones_like(lam)), 0)

    return PotentialSpec("genus_g", {"n": n, "c": c}, form, "hyperelliptic")


def genus_g_forms(n: int, c: float):
    """``(f, g)`` of the upper-right ``f t`` and lower-left ``g`` entries as ds-forms."""

    def f(smp):
        return c * smp.dzw

    def g(smp):
        z = smp.z
        return (n - 1) * z ** (n - 2) * smp.w * smp.dz + 0.5 * z ** (n - 1) * (1 - (n + 1) * z ** n) * smp.dzw

    return f, g


# ---------------------------------------------------------------- torus


def xi_torus(c: float, torus: Optional[TorusData] = None) -> PotentialSpec:
    """``off[c t, p''''(z + w3/2) + p''''(z - w3/2)] dz`` on the square torus."""
    if c == 0:
        raise ParameterWindowError("c must be nonzero")
    torus = torus or TorusData()
    c = float(c)
    f, g = torus_forms(c, torus)

    def form(smp: PathSample, lam):
        return _assemble(0, _outer(f(smp), t_factor(lam)), _outer(g(smp), np.ones_like(lam)), 0)

    return PotentialSpec("torus", {"c": c, "omega1": torus.omega1}, form, "torus", meta={"torus": torus})


def torus_forms(c: float, torus: TorusData):
    h = torus.omega3 / 2
    tol = 1e-6 * torus.omega1

    def f(smp):
        return c * np.asarray(smp.dz, dtype=complex)

    def g(smp):
        z = np.asarray(smp.z, dtype=complex)
        val = weierstrass_p(z + h, torus, 4, tol) + weierstrass_p(z - h, torus, 4, tol)
        return val * smp.dz

    return f, g


# ---------------------------------------------------------------- section 5


def delaunay_window(n: int):
    return (-8.0 * n / (n - 2) ** 2, 0.0)


def v_delaunay(lam, n: int, w: float):
    lam = np.asarray(lam, dtype=complex)
    return (n - 2) ** 2 * w / (16.0 * n * n) * (1 - lam) ** 2 + (1 - n) / (n * n) * lam


def xi_delaunay_chain(n: int, w: float, strict: bool = True) -> PotentialSpec:
    """``off[lambda^-1, v(lambda) n^2 z^(n-2) / (z^n - 1)^2] dz``.

    With ``strict=False`` the window check is skipped so the Goldman scan
    can be run outside it.
    """
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise ParameterWindowError(f"delaunay_chain needs an integer n >= 3, got {n}")
    n, w = int(n), float(w)
    lo, hi = delaunay_window(n)
    if strict and not lo <= w < hi:
        raise ParameterWindowError(f"w={w} outside [{lo:.6g}, 0) for n={n}")

    def form(smp: PathSample, lam):
        z, dz = np.asarray(smp.z, dtype=complex), np.asarray(smp.dz, dtype=complex)
        low = n * n * z ** (n - 2) / (z ** n - 1) ** 2 * dz
        return _assemble(0, _outer(dz, 1 / lam), _outer(low, v_delaunay(lam, n, w)), 0)

    return PotentialSpec("delaunay_chain", {"n": n, "w": w}, form, "plane")


def delaunay_residue_matrix(lam, n: int, w: float) -> np.ndarray:
    """``A = (1/2, lambda^-1; v, -1/2)``, the residue of the gauged potential at ``z = 1``."""
    lam = np.asarray(lam, dtype=complex)
    return _assemble(0.5, 1 / lam, v_delaunay(lam, n, w), -0.5)


# ---------------------------------------------------------------- custom


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_ALLOWED_UNARY = (ast.UAdd, ast.USub)
_NAMES = ("z", "lam", "i")


def parse_expression(text: str) -> Callable:
    """Compile a rational expression in ``z`` and ``lambda`` to a numpy function.

    The grammar is numbers, ``z``, ``lambda``, ``i``, parentheses and
    ``+ - * / ^``.  Anything else is rejected.
    """
    src = re.sub(r"\blambda\b", "lam", str(text).replace("^", "**"))
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, _ALLOWED_UNARY):
            return check(node.operand)
        if isinstance(node, ast.Constant) and type(node.value) in (int, float, complex):
            return True
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return True
        raise ConfigError(f"expression {text!r}: '{ast.dump(node)[:40]}' is not allowed")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        a, b = ev(node.left, env), ev(node.right, env)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return a / b
        return a ** b

    def fn(z, lam):
        with np.errstate(all="ignore"):
            return ev(tree, {"z": z, "lam": lam, "i": 1j})

    return fn


def _check_lambda_degree(fns, text):
    """Entries may depend on lambda only through ``lambda^-1, 1, lambda``."""
    lam = np.exp(2j * np.pi * np.arange(16) / 16)
    for z in (0.3 + 0.2j, -0.7 + 0.45j, 1.3 - 0.6j):
        for fn, t in zip(fns, text):
            vals = np.broadcast_to(np.asarray(fn(z, lam), dtype=complex), lam.shape)
            if not np.all(np.isfinite(vals)):
                continue
            coef = np.fft.fft(vals) / lam.size
            bad = np.delete(np.abs(coef), [0, 1, lam.size - 1])
            if bad.max() > 1e-9 * max(1.0, np.abs(coef).max()):
                raise ConfigError(f"entry {t!r} is not polynomial in lambda^-1..lambda")


def xi_custom(entries) -> PotentialSpec:
    """Potential from four expression strings ``(a11, a12, a21, a22)`` in ``z`` and ``lambda``."""
    entries = tuple(str(e) for e in entries)
    if len(entries) != 4:
        raise ConfigError("custom potential needs four entries a11, a12, a21, a22")
    fns = [parse_expression(e) for e in entries]
    _check_lambda_degree(fns, entries)
    trace_free = all(
        abs(complex(np.asarray(fns[0](z, l))) + complex(np.asarray(fns[3](z, l)))) < 1e-12
        for z in (0.31 + 0.17j, -0.6 + 0.2j)
        for l in (1.0, 0.6 + 0.8j)
    )

    def form(smp: PathSample, lam):
        z = np.asarray(smp.z, dtype=complex)
        dz = np.asarray(smp.dz, dtype=complex)
        zz = z.reshape(z.shape + (1,) * lam.ndim)
        dd = dz.reshape(dz.shape + (1,) * lam.ndim)
        shape = z.shape + lam.shape
        vals = [np.broadcast_to(np.asarray(fn(zz, lam), dtype=complex), shape) * dd for fn in fns]
        return _assemble(*vals)

    return PotentialSpec("custom", {"entries": list(entries)}, form, "plane", trace_free)


# ---------------------------------------------------------------- gauge


def _numeric_derivative(g: Callable, h: float = 1e-4) -> Callable:
    """Fourth-order central difference of a holomorphic matrix function."""

    def dg(z):
        z = np.asarray(z, dtype=complex)
        return (8 * (g(z + h) - g(z - h)) - (g(z + 2 * h) - g(z - 2 * h))) / (12 * h)

    return dg


def gauge(xi: PotentialSpec, g: Callable, dg: Optional[Callable] = None, det_tol: float = 1e-12) -> PotentialSpec:
    """``xi.g = g^-1 xi g + g^-1 dg`` for a z-dependent invertible ``g``.

    ``g(z)`` returns ``z.shape + (2, 2)``; ``dg`` is its z-derivative and
    is approximated by finite differences when omitted.
    """
    dg = dg or _numeric_derivative(g)

    def form(smp: PathSample, lam):
        z = np.asarray(smp.z, dtype=complex)
        G = np.asarray(g(z), dtype=complex)
        det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
        if np.any(np.abs(det) < det_tol):
            bad = np.atleast_1d(z)[np.atleast_1d(np.abs(det) < det_tol)][0]
            raise SingularityError(f"gauge is singular at z={complex(bad):.6g}")
        Gi = np.linalg.inv(G)
        base = xi.pullback(smp, lam)
        ndim = lam.ndim
        Gi_ = Gi.reshape(Gi.shape[:-2] + (1,) * ndim + (2, 2))
        G_ = G.reshape(G.shape[:-2] + (1,) * ndim + (2, 2))
        dG = np.asarray(dg(z), dtype=complex) * np.asarray(smp.dz, dtype=complex)[..., None, None]
        dG_ = dG.reshape(dG.shape[:-2] + (1,) * ndim + (2, 2))
        return Gi_ @ base @ G_ + Gi_ @ dG_

    out = PotentialSpec("gauged", {"base": xi.family}, form, xi.domain, xi.trace_free)
    object.__setattr__(out, "meta", {"base": xi, "g": g, "dg": dg})
    return out


def product_gauge(g: Callable, dg: Callable, h: Callable, dh: Callable):
    """``(gh, d(gh))`` by the product rule, for checking ``(xi.g).h = xi.(gh)``."""

    def gh(z):
        return g(z) @ h(z)

    def dgh(z):
        return dg(z) @ h(z) + g(z) @ dh(z)

    return gh, dgh


# ---------------------------------------------------------------- symmetries


def curve_sigma(n: int):
    """``sigma(z, w) = (alpha^2 z, alpha w)`` acting on samples (tangents pushed forward)."""
    a = cmath.exp(1j * math.pi / n)

    def m(smp: PathSample) -> PathSample:
        return PathSample(a * a * smp.z, a * a * smp.dz, a * smp.w, a * smp.dzw)

    return m


def curve_rho():
    def m(smp: PathSample) -> PathSample:
        return PathSample(smp.z, smp.dz, -smp.w, -smp.dzw)

    return m


def conjugate_map(shift: complex = 0.0):
    """``z -> conj(z) + shift`` (and ``w -> conj(w)`` on the curve)."""

    def m(smp: PathSample) -> PathSample:
        w = None if smp.w is None else np.conj(smp.w)
        dzw = None if smp.dzw is None else np.conj(smp.dzw)
        return PathSample(np.conj(smp.z) + shift, np.conj(smp.dz), w, dzw)

    return m


def affine_map(a: complex, b: complex = 0.0):
    """``z -> a z + b`` on plane or torus domains."""

    def m(smp: PathSample) -> PathSample:
        return PathSample(a * smp.z + b, a * smp.dz)

    return m


def g_sigma(n: int) -> np.ndarray:
    """``diag[1/sqrt(alpha), sqrt(alpha)]`` with the principal square root."""
    s = cmath.exp(1j * math.pi / (2 * n))
    return np.diag([1 / s, s]).astype(complex)


def symmetry_pullback_check(
    xi: PotentialSpec,
    mapping: Callable,
    g=None,
    mode: str = "conjugation",
    samples: Optional[PathSample] = None,
    lam=None,
) -> float:
    """Max residual of ``map^* xi = g^-1 xi g`` (conjugation) or of the reality
    condition ``conj(map^* xi(1/conj(lambda))) = xi(lambda)``.
    """
    g = np.eye(2, dtype=complex) if g is None else np.asarray(g, dtype=complex)
    if lam is None:
        th = np.linspace(0.1, 2 * np.pi, 7)
        lam = np.concatenate([np.exp(1j * th), 0.7 * np.exp(1j * th), 1.3 * np.exp(-1j * th)])
    lam = np.asarray(lam, dtype=complex)
    if samples is None:
        samples = default_samples(xi)
    here = xi.pullback(samples, lam)
    moved = mapping(samples)
    if mode == "conjugation":
        there = xi.pullback(moved, lam)
        gi = np.linalg.inv(g)
        target = gi @ here @ g
    elif mode == "reality":
        there = np.conj(xi.pullback(moved, 1 / np.conj(lam)))
        gi = np.linalg.inv(g)
        target = gi @ here @ g
    else:
        raise ValueError("mode must be 'conjugation' or 'reality'")
    return float(np.max(np.abs(there - target)))


def default_samples(xi: PotentialSpec) -> PathSample:
    """A few generic points (with unit tangent) in the potential's domain."""
    z = np.array([0.21 + 0.13j, -0.35 + 0.4j, 0.5 - 0.27j, 0.05 + 0.6j, -0.6 - 0.3j])
    one = np.ones_like(z)
    if xi.domain == "hyperelliptic":
        n = xi.params["n"]
        w = np.sqrt(z * (1 - z ** n))
        return PathSample(z, one, w, one / w)
    return PathSample(z, one)
