"""Experiment runner: ``run``, ``sweep``, ``verify`` and ``export`` subcommands.

Exit codes: 0 ok, 2 config, 3 integration, 4 closing condition / monodromy
checks, 5 unitarizability, 6 factorization and surface checks, 7 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import STAGES, ExperimentConfig
from .domains import Line, PathSpec
from .errors import ConfigError, DPWError
from .loops import CircleGrid, det2, mat_norm
from .mesh import export_mesh
from .monodromy import _clean, analyze, closing_check, monodromy
from .potentials import delaunay_window, xi_custom
from .special import gamma_identity_check, genus_closed_form_product
from .surface import build_surface
from .unitarize import eigenvalue_formula_check, goldman_scan, unitarize

log = logging.getLogger("dpw_forge")

STAGE_CODES = {"analyze": 4, "unitarize": 5, "build": 6, "export": 7, "verify": 4}
IO_EXIT = 7


@dataclass
class Check:
    stage: str
    name: str
    value: float
    threshold: float
    passed: bool
    condition: str
    exit_code: int = 0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} [{self.stage}] {self.condition}: {self.value:.3e} (threshold {self.threshold:.1e})"


@dataclass
class RunResult:
    exit_code: int = 0
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    error: Optional[str] = None
    report: object = None
    unitarizer: object = None
    mesh: object = None

    def summary(self) -> dict:
        return {
            "exit_code": self.exit_code,
            "error": self.error,
            "checks": [c.__dict__ for c in self.checks],
            "artifacts": sorted(self.artifacts),
        }


def _check(res: RunResult, stage: str, name: str, value, threshold: float, condition: str, le: bool = True):
    value = float(value)
    passed = math.isfinite(value) and (value <= threshold if le else value >= threshold)
    c = Check(stage, name, value, threshold, passed, condition, 0 if passed else STAGE_CODES[stage])
    res.checks.append(c)
    return c


def _write(res: RunResult, out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    res.artifacts.append(name)
    return path


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- stages


def _grid(cfg: ExperimentConfig) -> CircleGrid:
    return CircleGrid(cfg.grid_n, cfg.radius)


def stage_analyze(cfg: ExperimentConfig, res: RunResult, out: Path):
    thr = cfg.thresholds
    if cfg.family == "custom":
        return _analyze_custom(cfg, res, out)
    rep = analyze(cfg.family, cfg.params, grid=_grid(cfg), K=cfg.laurent_k, rtol=cfg.rtol)
    res.report = rep
    for name, (val, der) in sorted(rep.closing.items()):
        _check(res, "analyze", f"closing_{name}", val, thr["closing"], f"closing condition {name}(1) = Id")
        _check(res, "analyze", f"closing_d_{name}", der, thr["closing_derivative"],
               f"closing condition d{name}/dlambda(1) = 0")
    for name, val in sorted(rep.relations.items()):
        _check(res, "analyze", f"relation_{name}", val, thr["relations"], f"symmetry relation {name}")
    if "corollary_residual" in rep.meta:
        _check(res, "analyze", "corollary", rep.meta["corollary_residual"], thr["corollary"],
               "second lambda-derivative equals 2(diag[-I1, I1] + off[I0, I2])")
    if rep.trace:
        _check(res, "analyze", "trace_bound", rep.trace["margin"], 0.0,
               "half-trace bound |tau| < 1 away from lambda = 1 (margin)", le=False)
    if cfg.family == "delaunay_chain":
        eig = eigenvalue_formula_check(rep)
        rep.meta["eigenvalues"] = {k: v for k, v in eig.items() if not isinstance(v, np.ndarray)}
        _check(res, "analyze", "m0_eigenvalues", eig["eig_M0"], thr["eigenvalues"],
               "M0 eigenvalues match the closed form")
        gs = goldman_scan(rep)
        rep.goldman.update(gs)
        _check(res, "analyze", "goldman", gs["min"], -1e-9, "Goldman unitarizability inequality (minimum)", le=False)
    _write(res, out, "monodromy.json", rep.to_json() + "\n")
    _write(res, out, "monodromy.csv", rep.to_csv())


def _analyze_custom(cfg: ExperimentConfig, res: RunResult, out: Path):
    xi = xi_custom(cfg.entries)
    pts = [complex(*p) for p in cfg.loop]
    if pts[0] != pts[-1]:
        pts.append(pts[0])
    path = PathSpec(tuple(Line(a, b) for a, b in zip(pts[:-1], pts[1:])), "plane")
    M = monodromy(xi, path, _grid(cfg), cfg.laurent_k, rtol=cfg.rtol)
    val, der = closing_check(M)
    det_drift = float(np.max(np.abs(det2(M.samples) - 1))) if xi.trace_free else float("nan")
    data = {
        "family": "custom",
        "entries": list(cfg.entries),
        "loop": [[p.real, p.imag] for p in pts],
        "grid": {"N": M.grid.N, "radius": M.grid.radius},
        "closing": {"value": val, "derivative": der},
        "trace_free": xi.trace_free,
        "det_drift": det_drift,
        "max_norm": float(mat_norm(M.samples).max()),
    }
    _write(res, out, "monodromy.json", _dumps(data))


def stage_unitarize(cfg: ExperimentConfig, res: RunResult, out: Path):
    thr = cfg.thresholds
    U, residuals = unitarize(res.report)
    res.unitarizer = U
    for name, val in sorted(residuals.items()):
        _check(res, "unitarize", f"unitarity_{name}", val, thr["unitarity"], f"h {name} h^-1 unitary on the circle")
    for name, lem in sorted(U.meta.get("lemma21", {}).items()):
        worst = max(lem["post"].values())
        _check(res, "unitarize", f"lemma21_{name}", worst, thr["lemma21"],
               f"unitarized {name} is Id with vanishing lambda-derivative at lambda = 1")
    pointwise = U.meta["pointwise"]
    _write(res, out, "unitarizer.csv", U.to_csv(pointwise))
    meta = {k: v for k, v in U.meta.items() if k != "pointwise"}
    _write(res, out, "unitarizer.json", _dumps({"source": U.source, "grid_N": U.grid.N, "meta": meta}))


def stage_build(cfg: ExperimentConfig, res: RunResult, out: Path):
    thr = cfg.thresholds
    mesh = build_surface(
        cfg.family,
        cfg.params,
        resolution=cfg.resolution,
        H=cfg.H,
        avoid=cfg.avoid,
        surface_n=cfg.surface_n,
        report=res.report,
        unitarizer=res.unitarizer,
        thresholds={"closing": thr["closing"], "unitarity": thr["unitarity"]},
    )
    res.mesh = mesh
    m = mesh.meta
    if cfg.family == "genus_g":
        _check(res, "build", "rotation", m["rotation_residual"], thr["symmetry"],
               "rotation by pi/n self-coincidence (relative to diameter)")
        _check(res, "build", "reflection", m["reflection_residual"], thr["symmetry"],
               "reflection theta*f = -conj(f) self-coincidence (relative to diameter)")
        _check(res, "build", "period", m["period_residual"], thr["period"], "generator period closes (relative to diameter)")
    meta = {k: v for k, v in m.items() if k != "domain_points"}
    meta.update({"vertices": len(mesh.vertices), "faces": len(mesh.faces)})
    _write(res, out, "mesh.json", _dumps(meta))


def stage_export(cfg: ExperimentConfig, res: RunResult, out: Path):
    for fmt in cfg.formats:
        export_mesh(res.mesh, fmt, out / f"surface.{fmt}")
        res.artifacts.append(f"surface.{fmt}")


def stage_verify(cfg: ExperimentConfig, res: RunResult, out: Path):
    """Lemma suite: everything analyze and unitarize check plus the closed forms."""
    rep = res.report
    data = {"family": cfg.family, "params": cfg.params}
    if cfg.family == "genus_g":
        n, c = int(cfg.n), float(cfg.c)
        gam = {f"{r},{s},{n}": gamma_identity_check(r, s, n) for r, s in ((0.5, 0.5), (1.0, 0.5))}
        for key, val in gam.items():
            _check(res, "verify", f"gamma_{key}", val, 1e-8, f"beta integral equals its Gamma expression ({key})")
        I = rep.integrals["M0"]
        closed = genus_closed_form_product(n, c)
        prod = complex(I["I0"] * I["I2"] + I["I1"] ** 2)
        _check(res, "verify", "closed_form", abs(prod - closed) / abs(closed), 1e-6,
               "I0 I2 + I1^2 equals the closed form (relative)")
        _check(res, "verify", "I1_zero", abs(I["I1"]), 1e-9, "I1 = 0")
        data.update({"gamma": gam, "I0I2_plus_I1sq": prod, "closed_form": closed})
    if cfg.family == "delaunay_chain":
        val = rep.relations.get("M0ginv_pow_n_plus_id", float("nan"))
        _check(res, "verify", "power_identity", val, cfg.thresholds["power_identity"], "(M0 g^-1)^n = -Id")
    data["checks"] = [c.__dict__ for c in res.checks]
    _write(res, out, "verify.json", _dumps(data))


# ---------------------------------------------------------------- orchestration


def _plan(stages) -> list:
    """Stages to execute, with prerequisites added in pipeline order."""
    want = set(stages)
    if "export" in want:
        want |= {"build"}
    if "build" in want or "verify" in want:
        want |= {"unitarize"}
    if "unitarize" in want:
        want |= {"analyze"}
    return [s for s in STAGES if s in want]


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute the configured stages; failures become exit codes, never tracebacks."""
    res = RunResult()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write(res, out, "config.toml", cfg.to_toml())
    except OSError as exc:
        res.exit_code, res.error = IO_EXIT, f"cannot write to {out}: {exc}"
        return res
    runners = {"analyze": stage_analyze, "unitarize": stage_unitarize, "build": stage_build,
               "export": stage_export, "verify": stage_verify}
    for stage in _plan(cfg.stages):
        t0 = time.perf_counter()
        try:
            runners[stage](cfg, res, out)
        except DPWError as exc:
            res.exit_code, res.error = exc.exit_code, f"{stage}: {exc}"
            break
        except OSError as exc:
            res.exit_code, res.error = IO_EXIT, f"{stage}: {exc}"
            break
        except Exception as exc:  # a bug, but report it like any other failure
            res.exit_code, res.error = DPWError.exit_code, f"{stage}: {type(exc).__name__}: {exc}"
            log.debug("unexpected failure", exc_info=True)
            break
        log.info("stage %s done in %.2f s", stage, time.perf_counter() - t0)
        failed = [c for c in res.checks if not c.passed]
        if failed:
            res.exit_code = failed[0].exit_code
            res.error = f"{stage}: {failed[0].condition} residual {failed[0].value:.3e}"
            break
    try:
        _write(res, out, "summary.json", _dumps(res.summary()))
    except OSError as exc:
        res.exit_code, res.error = IO_EXIT, str(exc)
    return res


# ---------------------------------------------------------------- sweep


SWEEP_COLUMNS = ["value", "passed", "failed_check", "in_window", "closing_max", "relations_max", "unitarity_max",
                 "trace_margin", "goldman_min"]


def sweep(cfg: ExperimentConfig, parameter: str, values) -> dict:
    """Analyze and unitarize at every value of one parameter; failures are rows, not errors."""
    if parameter not in ("c", "w", "n", "omega1"):
        raise ConfigError(f"cannot sweep {parameter!r}; choose c, w, n or omega1")
    rows = []
    for v in values:
        params = dict(cfg.params)
        params[parameter] = int(v) if parameter == "n" else float(v)
        row = {k: None for k in SWEEP_COLUMNS}
        row["value"] = float(v)
        if cfg.family == "delaunay_chain":
            lo, hi = delaunay_window(int(params["n"]))
            row["in_window"] = bool(lo <= params["w"] < hi)
            params["strict"] = False
        try:
            rep = analyze(cfg.family, params, grid=_grid(cfg), K=cfg.laurent_k, rtol=cfg.rtol)
            fails = []
            if rep.closing:
                row["closing_max"] = max(max(v) for v in rep.closing.values())
                if row["closing_max"] > cfg.thresholds["closing"]:
                    fails.append("closing")
            if rep.relations:
                row["relations_max"] = max(rep.relations.values())
            if rep.trace:
                row["trace_margin"] = rep.trace["margin"]
                if not rep.trace["bound_holds"]:
                    fails.append("trace_bound")
            if cfg.family == "delaunay_chain":
                gs = goldman_scan(rep)
                row["goldman_min"] = gs["min"]
                if not gs["passed"]:
                    fails.append("goldman")
            if not fails:
                _, residuals = unitarize(rep)
                row["unitarity_max"] = max(residuals.values())
                if row["unitarity_max"] > cfg.thresholds["unitarity"]:
                    fails.append("unitarity")
            row["passed"] = not fails
            row["failed_check"] = fails[0] if fails else ""
        except DPWError as exc:
            row["passed"] = False
            row["failed_check"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return {"parameter": parameter, "rows": rows, "admissible": admissible_interval(rows)}


def admissible_interval(rows) -> Optional[list]:
    """Longest run of consecutive passing values (in sorted order), as ``[lo, hi]``."""
    ordered = sorted(rows, key=lambda r: r["value"])
    best, cur = [], []
    for r in ordered:
        cur = cur + [r["value"]] if r["passed"] else []
        if len(cur) > len(best):
            best = cur
    return [best[0], best[-1]] if best else None


def sweep_csv(result: dict) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, SWEEP_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for row in result["rows"]:
        wr.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------- command line


def _values(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("--range expects start:stop:count")
        return [float(x) for x in np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))]
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file; flags override it")
    common.add_argument("--family", choices=["genus_g", "torus", "delaunay_chain", "custom"])
    common.add_argument("--n", type=int)
    common.add_argument("--c", type=float)
    common.add_argument("--w", type=float)
    common.add_argument("--omega1", type=float, help="override the torus half period")
    common.add_argument("--grid-n", type=int, dest="grid_n")
    common.add_argument("--laurent-k", type=int, dest="laurent_k")
    common.add_argument("--radius", type=float, help="spectral circle radius r (analyze only for r < 1)")
    common.add_argument("--rtol", type=float)
    common.add_argument("--resolution", type=int, help="mesh resolution per fundamental piece")
    common.add_argument("--H", type=float, dest="H", help="mean curvature of the immersion")
    common.add_argument("--avoid", type=float, help="puncture/branch exclusion radius")
    common.add_argument("--surface-n", type=int, dest="surface_n")
    common.add_argument("--formats", help="comma separated mesh formats (obj, ply)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dpw-forge", description="DPW experiments for CMC surfaces")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run selected stages")
    r.add_argument("--stages", help=f"comma separated subset of {','.join(STAGES)}")
    sub.add_parser("verify", parents=[common], help="run the lemma suite on a family")
    sub.add_parser("export", parents=[common], help="build the surface and write meshes")
    s = sub.add_parser("sweep", parents=[common], help="scan one parameter")
    s.add_argument("--param", required=True, help="parameter to sweep (c, w, n, omega1)")
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--values", help="comma separated values")
    grp.add_argument("--range", dest="range_", help="start:stop:count")
    return p


def config_from_args(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if args.config else None
    over = {k: getattr(args, k, None) for k in ("family", "n", "c", "w", "omega1", "grid_n", "laurent_k", "radius",
                                                "rtol", "resolution", "H", "avoid", "surface_n", "out")}
    if getattr(args, "formats", None):
        over["formats"] = [f.strip() for f in args.formats.split(",") if f.strip()]
    if args.command == "run" and args.stages:
        over["stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
    elif args.command == "verify":
        over["stages"] = ["verify"]
    elif args.command == "export":
        over["stages"] = ["export"]
    elif args.command == "sweep":
        over["stages"] = ["analyze", "unitarize"]
    if base is None:
        kw = {k: v for k, v in over.items() if v is not None}
        return ExperimentConfig(**kw)
    return base.replace(**over)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "sweep":
            values = _values(args.values if args.values is not None else args.range_)
            result = sweep(cfg, args.param, values)
            out = Path(cfg.out)
            try:
                out.mkdir(parents=True, exist_ok=True)
                (out / "sweep.csv").write_text(sweep_csv(result))
                (out / "sweep.json").write_text(_dumps(result))
            except OSError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return IO_EXIT
            sys.stdout.write(sweep_csv(result))
            print(f"admissible interval: {result['admissible']}")
            return 0
    except DPWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    res = run(cfg)
    for c in res.checks:
        print(c.line())
    if res.error:
        print(f"error: {res.error}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
