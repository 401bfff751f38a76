"""Unitarizers: the diagonal v-based one and the invariant-Hermitian-form one."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DPWError, UnitarizabilityError
from .loops import ID2, CircleGrid, MatrixLoop, dagger, inv2, lambda_derivatives_at, mat_norm, to_laurent
from .potentials import v_delaunay

INT_TOL = 1e-3
REALITY_TOL = 1e-6
GOLDMAN_TOL = 1e-9


class DiagonalCase(DPWError):
    """``M12`` vanishes identically: ``M`` is diagonal and needs no unitarizer."""

    exit_code = 0


@dataclass
class Unitarizer:
    h: MatrixLoop
    source: str
    v: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    excluded: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> CircleGrid:
        return self.h.grid

    def conjugate(self, M: MatrixLoop) -> MatrixLoop:
        """``h M h^-1`` sample-wise."""
        return MatrixLoop(M.grid, self.h.samples @ M.samples @ inv2(self.h.samples))

    def to_csv(self, residuals: Optional[np.ndarray] = None) -> str:
        lam = self.grid.points
        N = len(lam)
        v = self.v if self.v is not None else np.full(N, np.nan)
        p = self.p if self.p is not None else np.abs(self.h.samples[:, 0, 0]) ** 2
        q = self.q if self.q is not None else np.abs(self.h.samples[:, 1, 1]) ** 2
        r = residuals if residuals is not None else np.full(N, np.nan)
        ex = self.excluded if self.excluded is not None else np.zeros(N, dtype=bool)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["re_lambda", "im_lambda", "v", "p", "q", "unitarity_residual", "excluded"])
        for j in range(N):
            w.writerow([f"{lam[j].real:.17g}", f"{lam[j].imag:.17g}", f"{np.real(v[j]):.17g}",
                        f"{p[j]:.17g}", f"{q[j]:.17g}", f"{r[j]:.6e}", int(ex[j])])
        return buf.getvalue()


# ---------------------------------------------------------------- diagonal unitarizer


def _deflate(coeffs: np.ndarray) -> np.ndarray:
    """Laurent coefficients of ``b / (lambda - 1)`` when ``b(1) = 0``."""
    q = -np.cumsum(coeffs)
    return q[:-1]  # the last partial sum is -b(1), i.e. the remainder


def _double_zero_quotient(loop: MatrixLoop, i: int, j: int) -> np.ndarray:
    """Samples of ``M_ij / (lambda - 1)^2`` from the Laurent series of ``M_ij``."""
    K = loop.K
    c = loop.laurent[:, i, j]
    q = _deflate(_deflate(c))  # indices -K .. K-2
    ks = np.arange(-K, K - 1)
    lam = loop.points
    return (lam[:, None] ** ks) @ q


def v_function(M: MatrixLoop, reality_tol: float = REALITY_TOL) -> np.ndarray:
    """``v = -M21 / conj(M12)`` on the unit circle, regular through ``lambda = 1``.

    For real monodromies this is ``-M21/M12``.  Both entries vanish to
    second order at ``lambda = 1``; dividing the Laurent series by
    ``(lambda - 1)^2`` before taking the ratio gives ``v(1) = -I2/I0``
    without a 0/0 sample.
    """
    if abs(M.grid.radius - 1.0) > 1e-15:
        raise ValueError("v is defined on the unit circle")
    b, c = M.samples[:, 0, 1], M.samples[:, 1, 0]
    scale = max(float(np.max(np.abs(M.samples))), 1.0)
    if np.max(np.abs(b)) < 1e-13 * scale:
        raise DiagonalCase("M12 vanishes identically; M is diagonal")
    lam = M.points
    if M.laurent is None:
        M = to_laurent(M)
    j1 = M.grid.index_of(1.0)
    if j1 is not None and mat_norm(M.samples[j1] - ID2) < 1e-6:
        bt = _double_zero_quotient(M, 0, 1)
        ct = _double_zero_quotient(M, 1, 0)
        # conj((lam-1)^2) = (lam-1)^2 / lam^2 on the circle
        v = -ct * lam ** 2 / np.conj(bt)
    else:
        v = -c / np.conj(b)
    bad_imag = np.abs(v.imag) > reality_tol * np.maximum(np.abs(v), 1.0)
    if np.any(bad_imag):
        k = int(np.argmax(np.abs(v.imag)))
        raise UnitarizabilityError(f"v is not real at lambda={lam[k]:.6g} (Im v = {v[k].imag:.3e})", lam[k])
    if np.any(v.real <= 0):
        k = int(np.argmin(v.real))
        raise UnitarizabilityError(f"v <= 0 at lambda={lam[k]:.6g} (v = {v[k].real:.6g})", lam[k])
    return v.real.copy()


def v_at_one(I0, I2) -> float:
    return float(np.real(-I2 / np.conj(I0)))


def diagonal_unitarizer(v: np.ndarray, grid: CircleGrid, K: Optional[int] = None) -> Unitarizer:
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.N,):
        raise ValueError("one v sample per grid point expected")
    if np.any(~(v > 0)):
        k = int(np.argmin(np.where(np.isfinite(v), v, -np.inf)))
        raise UnitarizabilityError(f"v <= 0 at lambda={grid.points[k]:.6g}", grid.points[k])
    r = v ** 0.25
    h = np.zeros((grid.N, 2, 2), dtype=complex)
    h[:, 0, 0], h[:, 1, 1] = r, 1 / r
    loop = to_laurent(MatrixLoop(grid, h), K)
    return Unitarizer(loop, "v_ratio", v=v, p=np.sqrt(v), q=1 / np.sqrt(v))


def unitarity_residuals(M: MatrixLoop, h: Optional[Unitarizer] = None) -> np.ndarray:
    U = M.samples if h is None else h.conjugate(M).samples
    return mat_norm(U @ dagger(U) - ID2)


def unitarity_check(M: MatrixLoop, h: Optional[Unitarizer] = None, mask: Optional[np.ndarray] = None) -> float:
    """``max |U U* - Id|`` with ``U = h M h^-1`` over the (unmasked) samples."""
    r = unitarity_residuals(M, h)
    if mask is not None:
        r = r[~mask]
    return float(r.max()) if r.size else 0.0


def smoothness(h: Unitarizer) -> float:
    """Largest discrete second difference of the entries of ``h`` over the largest entry."""
    s = np.abs(h.h.samples[:, [0, 1], [0, 1]])
    d2 = np.roll(s, -1, 0) - 2 * s + np.roll(s, 1, 0)
    return float(np.max(np.abs(d2)) / np.max(s))


# ---------------------------------------------------------------- closing conditions survive


def lemma21_verify(M: MatrixLoop, U: MatrixLoop, lam0: complex = 1.0, sign: int = 1, tol: float = 1e-5) -> dict:
    """Check that the closing conditions of ``M`` at ``lam0`` carry over to ``U``."""
    M = M if M.laurent is not None else to_laurent(M)
    U = U if U.laurent is not None else to_laurent(U)
    on_circle = np.isclose(np.abs(M.points), 1.0)
    tr_gap = float(np.max(np.abs(M.trace()[on_circle] - U.trace()[on_circle])))
    M0, dM = lambda_derivatives_at(M, lam0, 1)
    U0, dU = lambda_derivatives_at(U, lam0, 1)
    pre = {
        "trace_equal": tr_gap,
        "M_at_lam0": float(mat_norm(M0 - sign * ID2)),
        "dM_nilpotent": float(mat_norm(dM @ dM)),
    }
    pre_ok = pre["trace_equal"] <= 1e-8 and pre["M_at_lam0"] <= tol and pre["dM_nilpotent"] <= tol
    post = {"U_at_lam0": float(mat_norm(U0 - sign * ID2)), "dU_at_lam0": float(mat_norm(dU))}
    return {
        "preconditions": pre,
        "preconditions_hold": bool(pre_ok),
        "post": post,
        "passed": bool(pre_ok and post["U_at_lam0"] <= tol and post["dU_at_lam0"] <= tol),
    }


# ---------------------------------------------------------------- Goldman and eigenvalues


def goldman_test(t1, t2, t3):
    """``1 - t1^2 - t2^2 - t3^2 + 2 t1 t2 t3``."""
    return 1 - t1 * t1 - t2 * t2 - t3 * t3 + 2 * t1 * t2 * t3


def resonance_mask(lam, n: int, w: float, int_tol: float = INT_TOL) -> np.ndarray:
    """Samples where the eigenvalue difference of the residue at z=1 is near an integer."""
    lam = np.asarray(lam, dtype=complex)
    diff = np.sqrt(1 + 4 * v_delaunay(lam, n, w) / lam)
    near = np.abs(diff - np.round(diff.real))
    return near < int_tol


def m0_eigenvalues_closed_form(lam, n: int, w: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    root = np.sqrt(1 + (w / 4) * (lam - 1) ** 2 / lam)
    e = np.exp(1j * np.pi * (n - 2) / n * root)
    return np.stack([-e, -1 / e], axis=-1)


def _pair_distance(ev: np.ndarray, ref: np.ndarray) -> np.ndarray:
    d1 = np.abs(ev[:, 0] - ref[:, 0]) + np.abs(ev[:, 1] - ref[:, 1])
    d2 = np.abs(ev[:, 0] - ref[:, 1]) + np.abs(ev[:, 1] - ref[:, 0])
    return np.minimum(d1, d2)


def eigenvalue_formula_check(report, int_tol: float = INT_TOL) -> dict:
    """Integrated eigenvalues of ``M0`` and ``M0 g^-1`` against their closed forms."""
    n, w = int(report.params["n"]), float(report.params["w"])
    M0 = report.generators["M0"]
    g = report.symmetries["g"]
    lam = M0.points
    excl = resonance_mask(lam, n, w, int_tol)
    ev = np.linalg.eigvals(M0.samples)
    r_m0 = _pair_distance(ev, m0_eigenvalues_closed_form(lam, n, w))
    alpha = np.exp(1j * np.pi / n)
    evg = np.linalg.eigvals(M0.samples @ np.linalg.inv(g))
    r_g = _pair_distance(evg, np.broadcast_to([alpha, 1 / alpha], evg.shape))
    half = 0.5 * (M0.samples[:, 0, 0] + M0.samples[:, 1, 1])
    half_ref = -np.cos(np.pi * (n - 2) / n * np.sqrt(1 + (w / 4) * (lam - 1) ** 2 / lam))
    keep = ~excl
    return {
        "excluded": excl,
        "n_excluded": int(excl.sum()),
        "eig_M0": float(r_m0[keep].max()) if keep.any() else 0.0,
        "eig_M0_ginv": float(r_g[keep].max()) if keep.any() else 0.0,
        "half_trace": float(np.abs(half - half_ref)[keep].max()) if keep.any() else 0.0,
        "pointwise_M0": r_m0,
    }


def goldman_scan(report, int_tol: float = INT_TOL, tol: float = GOLDMAN_TOL) -> dict:
    """Goldman's inequality for ``(g^-1, M0 g^-1, M0)`` along the circle."""
    n, w = int(report.params["n"]), float(report.params["w"])
    M0 = report.generators["M0"].samples
    gi = np.linalg.inv(report.symmetries["g"])
    lam = report.generators["M0"].points
    t1 = np.full(len(lam), 0.5 * np.trace(gi))
    t2 = 0.5 * np.trace(M0 @ gi, axis1=1, axis2=2)
    t3 = 0.5 * np.trace(M0, axis1=1, axis2=2)
    val = goldman_test(t1, t2, t3)
    excl = resonance_mask(lam, n, w, int_tol)
    keep = ~excl
    vmin = float(val.real[keep].min())
    return {
        "values": val,
        "min": vmin,
        "argmin_lambda": complex(lam[keep][np.argmin(val.real[keep])]),
        "max_imag": float(np.max(np.abs(val.imag))),
        "passed": bool(vmin >= -tol),
        "n_failing": int(np.sum(val.real[keep] < -tol)),
        "excluded": excl,
    }


# ---------------------------------------------------------------- Hermitian form


def _form_equations(M: np.ndarray) -> np.ndarray:
    """Real linear equations in ``(p, q)`` for ``M* diag[p, q] M = diag[p, q]``, per sample."""
    a, b, c, d = M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1]
    e11 = np.stack([np.abs(a) ** 2 - 1, np.abs(c) ** 2], -1)
    e22 = np.stack([np.abs(b) ** 2, np.abs(d) ** 2 - 1], -1)
    e12 = np.stack([np.conj(a) * b, np.conj(c) * d], -1)
    return np.concatenate([e11[:, None].real, e22[:, None].real, e12[:, None].real, e12[:, None].imag], axis=1)


def invariant_hermitian_form(
    generators: Sequence[MatrixLoop],
    exclude: Optional[np.ndarray] = None,
    cond_tol: float = 1e-6,
    K: Optional[int] = None,
) -> Unitarizer:
    """Positive diagonal ``H = diag[p, q]`` with ``M* H M = H`` for every generator.

    Per sample the equations are stacked and the null vector is read off
    the SVD.  Samples in ``exclude`` (and samples where no positive
    solution exists but which are flagged as excluded) are filled by
    periodic cubic interpolation in the angle.
    """
    grid = generators[0].grid
    N = grid.N
    E = np.concatenate([_form_equations(G.samples) for G in generators], axis=1)
    _, s, vt = np.linalg.svd(E)
    x, y = vt[:, -1, 0], vt[:, -1, 1]
    free = s[:, 0] < 1e-12  # every generator diagonal unitary here: any diagonal form works
    x, y = np.where(free, 1.0, x), np.where(free, 1.0, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(free, 0.0, s[:, -1] / s[:, 0])
    excl = np.zeros(N, dtype=bool) if exclude is None else np.asarray(exclude, dtype=bool).copy()
    positive = x * y > 0
    bad = ~positive & ~excl
    if np.any(bad):
        k = int(np.argmax(bad))
        raise UnitarizabilityError(
            f"no positive invariant Hermitian form at lambda={grid.points[k]:.6g}", grid.points[k]
        )
    weak = (rel > cond_tol) & ~excl
    if np.any(weak):
        k = int(np.argmax(np.where(weak, rel, -1)))
        raise UnitarizabilityError(
            f"no invariant Hermitian form at lambda={grid.points[k]:.6g} (relative singular value {rel[k]:.2e})",
            grid.points[k],
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.abs(x) / np.sqrt(np.abs(x * y))
    p = np.where(positive, p, np.nan)
    filled = excl | ~np.isfinite(p)
    if filled.all():
        raise UnitarizabilityError("every sample is excluded")
    if filled.any():
        theta = np.angle(grid.points) % (2 * np.pi)
        order = np.argsort(theta)
        th, lp, ok = theta[order], np.log(p[order]), ~filled[order]
        th_ext = np.concatenate([th[ok], [th[ok][0] + 2 * np.pi]])
        lp_ext = np.concatenate([lp[ok], [lp[ok][0]]])
        spline = CubicSpline(th_ext, lp_ext, bc_type="periodic")
        lp[~ok] = spline(np.where(th[~ok] < th_ext[0], th[~ok] + 2 * np.pi, th[~ok]))
        p = np.empty(N)
        p[order] = np.exp(lp)
    q = 1 / p
    h = np.zeros((N, 2, 2), dtype=complex)
    h[:, 0, 0], h[:, 1, 1] = np.sqrt(p), np.sqrt(q)
    loop = MatrixLoop(grid, h) if K is None else to_laurent(MatrixLoop(grid, h), K)
    return Unitarizer(loop, "hermitian_form", p=p, q=q, excluded=filled, meta={"relative_singular_value": rel})


# ---------------------------------------------------------------- orchestration


def unitarize(report, int_tol: float = INT_TOL) -> tuple:
    """Unitarizer for a monodromy report plus the residual table."""
    fam = report.family
    G = report.generators
    if fam in ("genus_g", "torus"):
        first = "M0" if fam == "genus_g" else "M1"
        try:
            v = v_function(G[first])
            U = diagonal_unitarizer(v, G[first].grid)
        except DiagonalCase:
            U = Unitarizer(MatrixLoop.constant(ID2, G[first].grid), "identity", v=np.ones(G[first].grid.N))
        if first in report.integrals:
            I = report.integrals[first]
            U.meta["v_at_1_limit"] = v_at_one(I["I0"], I["I2"])
        mask = None
    elif fam == "delaunay_chain":
        n, w = int(report.params["n"]), float(report.params["w"])
        lam = G["M0"].points
        mask = resonance_mask(lam, n, w, int_tol) | np.isclose(lam, 1.0)
        gens = [G[k] for k in sorted(G) if k.startswith("M")]
        U = invariant_hermitian_form(gens, exclude=mask)
        mask = U.excluded
    else:
        raise ValueError(f"no unitarizer for family {fam!r}")
    residuals = {k: unitarity_check(M, U, mask) for k, M in G.items()}
    U.meta["unitarity"] = residuals
    U.meta["pointwise"] = np.max([unitarity_residuals(M, U) for M in G.values()], axis=0)
    if fam in ("genus_g", "torus"):
        U.meta["lemma21"] = {k: lemma21_verify(M, U.conjugate(M)) for k, M in G.items()}
        U.meta["smoothness"] = smoothness(U)
    return U, residuals
