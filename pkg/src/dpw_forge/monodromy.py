"""Frame integration, monodromy generators and the closing/trace machinery.

The frame equation ``d Phi = Phi xi`` is integrated along each path
segment with every lambda sample carried in one state vector, so all
samples share the adaptive step.
"""

from __future__ import annotations

import cmath
import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .domains import (
    BranchRay,
    ChartArc,
    ChartLine,
    LiftedSegment,
    PathSpec,
    gamma_k_path,
    lift_path,
    polygon_loop,
    torus_paths,
)
from .errors import AccuracyError, IntegrationError
from .loops import (
    DET_TOL,
    ID2,
    CircleGrid,
    MatrixLoop,
    det2,
    dump_loop,
    inv2,
    lambda_derivatives_at,
    mat_norm,
    to_laurent,
)
from .potentials import (
    PotentialSpec,
    g_sigma,
    genus_g_forms,
    torus_forms,
    xi_delaunay_chain,
    xi_genus_g,
    xi_torus,
)
from .weierstrass import TorusData

RTOL = 1e-11
ATOL = 1e-13
METHOD = "DOP853"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DPW_FORGE_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- frames


@dataclass(frozen=True, eq=False)
class FrameField:
    """Frames ``Phi(s_i, lambda_j)`` recorded along a path.

    ``s_values[k]`` and ``frames[k]`` belong to segment ``k``; frames have
    shape ``(len(s_values[k]), N, 2, 2)``.
    """

    path: PathSpec
    grid: CircleGrid
    phi0: np.ndarray
    s_values: tuple
    frames: tuple
    det_drift: float = 0.0

    def endpoint(self, K: Optional[int] = None, laurent: bool = True) -> MatrixLoop:
        loop = MatrixLoop(self.grid, self.frames[-1][-1])
        return to_laurent(loop, K) if laurent else loop

    def loop_at(self, segment: int, index: int, K: Optional[int] = None) -> MatrixLoop:
        return to_laurent(MatrixLoop(self.grid, self.frames[segment][index]), K)


def _initial(phi0, grid: CircleGrid) -> np.ndarray:
    if phi0 is None:
        return np.broadcast_to(ID2, (grid.N, 2, 2)).astype(complex)
    if isinstance(phi0, MatrixLoop):
        if phi0.grid != grid:
            raise ValueError("initial condition lives on a different grid")
        return np.array(phi0.samples)
    arr = np.asarray(phi0, dtype=complex)
    return np.broadcast_to(arr, (grid.N, 2, 2)).astype(complex)


def _prepare_path(xi: PotentialSpec, path: PathSpec) -> PathSpec:
    if xi.domain == "hyperelliptic":
        n = xi.params["n"]
        if any(not isinstance(s, (BranchRay, ChartLine, ChartArc, LiftedSegment)) for s in path.segments):
            return lift_path(path, n)
    return path


def integrate_frame(
    xi: PotentialSpec,
    path: PathSpec,
    grid: CircleGrid,
    phi0=None,
    s_eval: Optional[Sequence] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float = np.inf,
    method: str = METHOD,
    det_tol: float = DET_TOL,
) -> FrameField:
    """Solve ``d Phi = Phi xi`` along ``path`` for every lambda sample of ``grid``.

    ``s_eval`` optionally lists, per segment, the parameters at which to
    record frames (the endpoints are always recorded).
    """
    path = _prepare_path(xi, path)
    lam = grid.points
    L = grid.N
    y = _initial(phi0, grid)
    det0 = det2(y)
    s_out, f_out = [], []
    drift = 0.0
    for k, seg in enumerate(path.segments):
        want = np.array([0.0, 1.0]) if s_eval is None else np.unique(np.concatenate([[0.0, 1.0], s_eval[k]]))

        def rhs(s, yv, seg=seg):
            smp = seg.sample(s)
            A = xi.pullback(smp, lam)
            return (yv.reshape(L, 2, 2) @ A).ravel()

        try:
            sol = solve_ivp(
                rhs, (0.0, 1.0), y.ravel(), method=method, t_eval=want, rtol=rtol, atol=atol, max_step=max_step
            )
        except IntegrationError:
            raise
        except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
            raise IntegrationError(f"integration failed on segment {k}: {exc}") from None
        if sol.status != 0 or not np.all(np.isfinite(sol.y)):
            s_fail = float(sol.t[-1]) if sol.t.size else 0.0
            z_fail = complex(seg.sample(s_fail).z)
            raise IntegrationError(f"step size underflow on segment {k} near z={z_fail:.6g}: {sol.message}")
        frames = sol.y.T.reshape(len(want), L, 2, 2)
        y = frames[-1]
        if xi.trace_free:
            # relative to |Phi|^2, the conditioning of the determinant itself
            scale = np.maximum(1.0, 0.5 * mat_norm(frames) ** 2)
            drift = max(drift, float(np.max(np.abs(det2(frames) - det0[None]) / scale)))
            if drift > det_tol:
                raise AccuracyError(f"det Phi drifted by {drift:.3e} (> {det_tol:g}) on segment {k}")
        s_out.append(want)
        f_out.append(frames)
    return FrameField(path, grid, _initial(phi0, grid), tuple(s_out), tuple(f_out), drift)


def monodromy(xi: PotentialSpec, path: PathSpec, grid: CircleGrid, K: Optional[int] = None, **kw) -> MatrixLoop:
    return integrate_frame(xi, path, grid, **kw).endpoint(K)


# ---------------------------------------------------------------- reports


@dataclass
class MonodromyReport:
    family: str
    params: dict
    grid: CircleGrid
    generators: dict
    derived: dict = field(default_factory=dict)
    symmetries: dict = field(default_factory=dict)
    closing: dict = field(default_factory=dict)
    integrals: dict = field(default_factory=dict)
    trace: dict = field(default_factory=dict)
    relations: dict = field(default_factory=dict)
    goldman: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json(self, include_loops: bool = False) -> str:
        def cx(v):
            v = complex(v)
            return [v.real, v.imag]

        data = {
            "family": self.family,
            "params": self.params,
            "grid": {"N": self.grid.N, "radius": self.grid.radius},
            "basepoint": self.meta.get("basepoint"),
            "closing": {k: {"value": v[0], "derivative": v[1]} for k, v in self.closing.items()},
            "integrals": {k: {kk: cx(vv) for kk, vv in v.items()} for k, v in self.integrals.items()},
            "trace": {k: v for k, v in self.trace.items() if not isinstance(v, np.ndarray)},
            "relations": self.relations,
            "goldman": {k: v for k, v in self.goldman.items() if not isinstance(v, np.ndarray)},
            "paths": self.paths,
            "meta": {k: v for k, v in self.meta.items() if k not in ("basepoint", "pointwise_relations")},
        }
        if include_loops:
            data["generators"] = {k: dump_loop(v) for k, v in self.generators.items()}
        return json.dumps(_clean(data), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """One row per lambda sample: ``lambda``, ``tau`` and the pointwise residuals."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        lam = self.grid.points
        first = next(iter(self.generators.values()))
        tau = 0.5 * (first.samples[:, 0, 0] + first.samples[:, 1, 1])
        cols = ["re_lambda", "im_lambda", "re_tau", "im_tau"]
        extra = {}
        if "pointwise" in self.goldman:
            extra["goldman"] = self.goldman["pointwise"]
        for name, res in self.meta.get("pointwise_relations", {}).items():
            extra[name] = res
        wr.writerow(cols + list(extra))
        for j in range(self.grid.N):
            row = [f"{lam[j].real:.17g}", f"{lam[j].imag:.17g}", f"{tau[j].real:.17g}", f"{tau[j].imag:.17g}"]
            row += [f"{float(np.real(v[j])):.17g}" for v in extra.values()]
            wr.writerow(row)
        return buf.getvalue()


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_, np.complexfloating)):
        return _clean(obj.item())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def family_setup(family: str, params: dict):
    """``(xi, {name: path}, symmetries)`` for one of the built-in families."""
    if family == "genus_g":
        n, c = int(params["n"]), float(params["c"])
        xi = xi_genus_g(n, c)
        paths = {f"M{k}": gamma_k_path(n, k) for k in range(n)}
        sym = {"g_sigma": g_sigma(n), "g_rho": np.diag([-1j, 1j])}
        return xi, paths, sym
    if family == "torus":
        torus = TorusData(float(params["omega1"])) if params.get("omega1") else TorusData()
        xi = xi_torus(float(params["c"]), torus)
        width = params.get("width")
        g1, g2, d1, d2 = torus_paths(torus, width)
        s = cmath.sqrt(1j)
        return xi, {"M1": g1, "M2": g2, "A1": d1, "A2": d2}, {"g": np.diag([1 / s, s])}
    if family == "delaunay_chain":
        n, w = int(params["n"]), float(params["w"])
        xi = xi_delaunay_chain(n, w, strict=bool(params.get("strict", True)))
        a = cmath.exp(1j * math.pi / n)
        return xi, {f"M{j}": polygon_loop(n, j) for j in range(n)}, {"g": np.diag([1 / a, a])}
    raise ValueError(f"unknown family {family!r}")


def monodromy_generators(
    family: str,
    params: dict,
    grid: Optional[CircleGrid] = None,
    K: Optional[int] = None,
    workers: Optional[int] = None,
    rtol: float = RTOL,
    atol: float = ATOL,
    only: Optional[Sequence[str]] = None,
) -> MonodromyReport:
    """Integrate every generator path of ``family`` from the basepoint with ``Phi_0 = Id``."""
    grid = grid or CircleGrid()
    xi, paths, sym = family_setup(family, params)
    if only is not None:
        paths = {k: v for k, v in paths.items() if k in only}
    names = list(paths)
    workers = workers or worker_count()

    def run(name):
        return monodromy(xi, paths[name], grid, K, rtol=rtol, atol=atol)

    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            loops = list(pool.map(run, names))
    else:
        loops = [run(nm) for nm in names]
    gens = dict(zip(names, loops))
    derived = {}
    if family == "genus_g" and len(gens) == int(params["n"]):
        prod = gens["M0"]
        for k in range(1, int(params["n"])):
            prod = prod @ gens[f"M{k}"]
        derived["N"] = to_laurent(prod, K)
    if family == "delaunay_chain" and "M0" in gens:
        n = int(params["n"])
        m = gens["M0"] @ np.linalg.inv(sym["g"])
        p = m
        for _ in range(n - 1):
            p = p @ m
        derived["M0ginv_pow_n"] = p
        derived["M0ginv"] = to_laurent(m, K)
        if len(gens) == n:
            prod = gens["M0"]
            for j in range(1, n):
                prod = prod @ gens[f"M{j}"]
            derived["product"] = prod
    basepoint = {"genus_g": "(z, w) = (0, 0)", "torus": "z = 0", "delaunay_chain": "z = 0"}[family]
    rep = MonodromyReport(
        family,
        dict(xi.params),
        grid,
        gens,
        derived,
        sym,
        paths={k: v.describe() for k, v in paths.items()},
        meta={"basepoint": basepoint, "rtol": rtol, "atol": atol, "method": METHOD},
    )
    return rep


# ---------------------------------------------------------------- closing


def closing_check(M: MatrixLoop, lam0: complex = 1.0, sign: int = 1):
    """``(|M(lam0) - sign Id|, |d_lambda M(lam0)|)`` in the Frobenius norm."""
    d = lambda_derivatives_at(M, lam0, 1)
    return float(mat_norm(d[0] - sign * ID2)), float(mat_norm(d[1]))


def closing_table(report: MonodromyReport, lam0: complex = 1.0, sign: int = 1) -> dict:
    out = {name: closing_check(M, lam0, sign) for name, M in report.generators.items()}
    for name, M in report.derived.items():
        if name == "N":
            out[name] = closing_check(M, lam0, sign)
    report.closing.update(out)
    return out


# ---------------------------------------------------------------- lemma machinery


def parameter_cascade(A: Sequence[Callable], B: Sequence, kmax: int, path: PathSpec, rtol: float = 1e-12):
    """Endpoint values of ``d X_k = sum_i binom(k, i) X_i A_(k-i)``, ``X_k(z0) = B_k``.

    ``A[j](sample)`` returns the ds-coefficient of the j-th parameter
    derivative of the coefficient form along a segment.
    """
    if kmax > 4:
        raise ValueError("kmax must be <= 4")
    m = kmax + 1
    X = np.array([np.asarray(B[k], dtype=complex) if k < len(B) else np.zeros((2, 2)) for k in range(m)])
    binom = np.array([[comb(k, i) if i <= k else 0 for i in range(m)] for k in range(m)], dtype=float)
    for seg in path.segments:

        def rhs(s, yv, seg=seg):
            smp = seg.sample(s)
            Xs = yv.reshape(m, 2, 2)
            Aj = [np.asarray(A[j](smp), dtype=complex) if j < len(A) else np.zeros((2, 2)) for j in range(m)]
            out = np.zeros_like(Xs)
            for k in range(m):
                for i in range(k + 1):
                    if binom[k, i]:
                        out[k] += binom[k, i] * Xs[i] @ Aj[k - i]
            return out.ravel()

        sol = solve_ivp(rhs, (0.0, 1.0), X.ravel(), method=METHOD, rtol=rtol, atol=1e-14)
        if sol.status != 0:
            raise IntegrationError(f"cascade integration failed: {sol.message}")
        X = sol.y[:, -1].reshape(m, 2, 2)
    return [X[k] for k in range(m)]


def iterated_integrals(f: Callable, g: Callable, path: PathSpec, rtol: float = 1e-12, atol: float = 1e-14) -> dict:
    """``I0 = int f``, ``I1 = int f G``, ``I2 = int g (int f G)`` with ``G = int g``.

    All five running integrals share one ODE pass.  Also returned: ``G``
    (the closed-path integral of ``g``) and ``I2_parts = G I1 - int f G^2``,
    which equals ``I2`` by integration by parts.
    """
    y = np.zeros(5, dtype=complex)  # G, I0, I1, I2, S = int f G^2
    for k, seg in enumerate(path.segments):

        def rhs(s, v, seg=seg):
            smp = seg.sample(s)
            fv, gv = complex(f(smp)), complex(g(smp))
            G, I1 = v[0], v[2]
            return np.array([gv, fv, fv * G, gv * I1, fv * G * G])

        sol = solve_ivp(rhs, (0.0, 1.0), y, method=METHOD, rtol=rtol, atol=atol)
        if sol.status != 0 or not np.all(np.isfinite(sol.y)):
            raise AccuracyError(f"iterated-integral quadrature failed on segment {k}: {sol.message}")
        y = sol.y[:, -1]
    G, I0, I1, I2, S = y
    return {"I0": I0, "I1": I1, "I2": I2, "G": G, "I2_parts": G * I1 - S}


def family_forms(family: str, params: dict):
    """``(f, g)`` of the ``off[f t, g]`` shape for the genus-g and torus families."""
    if family == "genus_g":
        return genus_g_forms(int(params["n"]), float(params["c"]))
    if family == "torus":
        torus = TorusData(float(params["omega1"])) if params.get("omega1") else TorusData()
        return torus_forms(float(params["c"]), torus)
    raise ValueError(f"{family} potentials are not of the off[f t, g] shape")


def integrals_table(report: MonodromyReport) -> dict:
    f, g = family_forms(report.family, report.params)
    xi, paths, _ = family_setup(report.family, report.params)
    out = {}
    for name in report.generators:
        out[name] = iterated_integrals(f, g, _prepare_path(xi, paths[name]))
    report.integrals.update(out)
    return out


def corollary_matrix(I0, I1, I2) -> np.ndarray:
    """``2 (diag[-I1, I1] + off[I0, I2])``."""
    return 2 * np.array([[-I1, I0], [I2, I1]], dtype=complex)


def second_derivative_check(M: MatrixLoop, I0, I1, I2) -> float:
    d2 = lambda_derivatives_at(M, 1.0, 2)[2]
    return float(mat_norm(d2 - corollary_matrix(I0, I1, I2)))


# ---------------------------------------------------------------- traces


def trace_scan(M: MatrixLoop, exclude: float = 0.05) -> dict:
    """Half-trace samples and the flags of the trace-bound lemma."""
    lam = M.points
    tau = 0.5 * (M.samples[:, 0, 0] + M.samples[:, 1, 1])
    away = np.abs(lam - 1) > exclude
    j1 = M.grid.index_of(1.0)
    tau1 = complex(tau[j1]) if j1 is not None else complex(np.nan)
    absmax = float(np.max(np.abs(tau[away]))) if away.any() else float("nan")
    return {
        "tau": tau,
        "max_abs_imag": float(np.max(np.abs(tau.imag))),
        "tau_at_1": tau1.real,
        "tau_at_1_imag": tau1.imag,
        "max_abs_tau_away": absmax,
        "margin": 1.0 - absmax,
        "bound_holds": bool(absmax < 1.0),
        "exclude": exclude,
    }


# ---------------------------------------------------------------- symmetry relations


def _conj_reflect(M: MatrixLoop) -> np.ndarray:
    """Samples of ``conj(M(1/conj(lambda)))``; on the unit circle this is ``conj(M)``."""
    if abs(M.grid.radius - 1.0) > 1e-15:
        raise ValueError("reality relations need the unit circle")
    return np.conj(M.samples)


def symmetry_relation_check(report: MonodromyReport) -> dict:
    """Max-over-samples residual of each monodromy symmetry of the family."""
    G = report.generators
    res, pointwise = {}, {}

    def put(name, diff):
        pw = mat_norm(diff) if diff.ndim == 3 else np.abs(diff)
        pointwise[name] = pw
        res[name] = float(pw.max())

    if report.family == "genus_g":
        n = int(report.params["n"])
        gs = report.symmetries["g_sigma"]
        M0 = G["M0"].samples
        for k in range(n):
            if f"M{k}" not in G:
                continue
            gk = np.linalg.matrix_power(gs, k)
            lhs = G[f"M{k}"].samples if k % 2 == 0 else inv2(G[f"M{k}"].samples)
            put(f"sigma_k{k}", lhs - np.linalg.inv(gk) @ M0 @ gk)
        gr = report.symmetries["g_rho"]
        put("rho", inv2(M0) - np.linalg.inv(gr) @ M0 @ gr)
        if abs(report.grid.radius - 1.0) < 1e-15:
            put("theta_real", _conj_reflect(G["M0"]) - M0)
    elif report.family == "torus":
        g = report.symmetries["g"]
        gi = np.linalg.inv(g)
        g2, g2i = g @ g, gi @ gi
        M1, M2, A1, A2 = (G[k].samples for k in ("M1", "M2", "A1", "A2"))
        put("M1_inverse", inv2(M1) - g2i @ M1 @ g2)
        put("A2_from_A1", A2 - g2i @ A1 @ g2)
        # Reality relations as they hold numerically: the antiholomorphic
        # symmetry intertwines with g rather than g^-1, which also flips the
        # signs in the b2/c2 relations and in the trace relation.
        put("M2_reality", _conj_reflect(G["M2"]) - g @ M1 @ gi)
        put("A1_reality", inv2(_conj_reflect(G["A1"])) - g @ A1 @ gi)
        put("M2_inverse", inv2(M2) - g2i @ M2 @ g2)
        a2, b2, c2, d2 = A1[:, 0, 0], A1[:, 0, 1], A1[:, 1, 0], A1[:, 1, 1]
        b1, c1 = M1[:, 0, 1], M1[:, 1, 0]
        put("a2_d2", np.conj(a2) - d2)
        put("b2", np.conj(b2) - 1j * b2)
        put("c2", np.conj(c2) + 1j * c2)
        put("trace_A1M2_A1M1inv", 0.5 * np.trace(A1 @ (M2 - inv2(M1)), axis1=1, axis2=2))
        put("c2b1_b2c1", c2 * (b1 + 1j * np.conj(b1)) + b2 * (c1 - 1j * np.conj(c1)))
        # printed forms, kept as diagnostics
        printed = {
            "M2_reality": mat_norm(_conj_reflect(G["M2"]) - gi @ M1 @ g).max(),
            "A1_reality": mat_norm(inv2(_conj_reflect(G["A1"])) - gi @ A1 @ g).max(),
            "b2": np.abs(np.conj(b2) + 1j * b2).max(),
            "c2": np.abs(np.conj(c2) - 1j * c2).max(),
            "c2b1_plus_ic1b2": np.abs(c2 * b1 + 1j * c1 * b2).max(),
            "M1_real": np.abs(M1.imag).max(),
        }
        report.meta["printed_form_residuals"] = {k: float(v) for k, v in printed.items()}
        report.meta["b2_identically_zero"] = bool(np.max(np.abs(b2)) < 1e-9)
    elif report.family == "delaunay_chain":
        n = int(report.params["n"])
        g = report.symmetries["g"]
        M0 = G["M0"].samples
        for j in range(1, n):
            if f"M{j}" in G:
                gj = np.linalg.matrix_power(g, j)
                put(f"rotation_j{j}", G[f"M{j}"].samples - np.linalg.inv(gj) @ M0 @ gj)
        if "M0ginv_pow_n" in report.derived:
            put("M0ginv_pow_n_plus_id", report.derived["M0ginv_pow_n"].samples + ID2)
        if "product" in report.derived:
            put("product_is_id", report.derived["product"].samples - ID2)
    report.relations.update(res)
    report.meta.setdefault("pointwise_relations", {}).update(pointwise)
    return res


def analyze(
    family: str,
    params: dict,
    grid: Optional[CircleGrid] = None,
    K: Optional[int] = None,
    workers: Optional[int] = None,
    rtol: float = RTOL,
) -> MonodromyReport:
    """Generators plus every diagnostic that applies to the family."""
    rep = monodromy_generators(family, params, grid, K, workers, rtol)
    symmetry_relation_check(rep)
    if family in ("genus_g", "torus"):
        closing_table(rep)
        integrals_table(rep)
        first = "M0" if family == "genus_g" else "M1"
        rep.trace = trace_scan(rep.generators[first])
        I = rep.integrals[first]
        rep.meta["corollary_residual"] = second_derivative_check(rep.generators[first], I["I0"], I["I1"], I["I2"])
        rep.meta["I0I2_plus_I1sq"] = complex(I["I0"] * I["I2"] + I["I1"] ** 2)
    return rep
