"""One test per acceptance criterion; each prints a PASS/FAIL line at its tolerance."""

import math
import time

import numpy as np
import pytest
import scipy.special

from conftest import cached_report, cached_unitarizer
from dpw_forge.loops import ID2, CircleGrid, MatrixLoop, dagger, iwasawa, is_plus_loop, mat_norm
from dpw_forge.potentials import delaunay_window
from dpw_forge.special import beta_quadrature, genus_closed_form_product
from dpw_forge.unitarize import eigenvalue_formula_check, goldman_scan


def report(label, value, tol, ok=None):
    ok = value <= tol if ok is None else ok
    print(f"{'PASS' if ok else 'FAIL'} {label}: {value:.3e} (tolerance {tol:.1e})")
    return ok


def test_c01_gamma_identity():
    t0 = time.perf_counter()
    ok = True
    for r, s, n in [(0.5, 0.5, 2), (0.5, 0.5, 4), (1.0, 0.5, 2)]:
        oracle = scipy.special.gamma(r / n) * scipy.special.gamma(s) / (n * scipy.special.gamma(r / n + s))
        ok &= report(f"Beta quadrature vs Gamma expression (r,s,n)=({r},{s},{n})",
                     abs(beta_quadrature(r, s, n) - oracle), 1e-8)
    elapsed = time.perf_counter() - t0
    ok &= report("gamma identity runtime [s]", elapsed, 1.0)
    assert ok


def test_c02_closed_form_product():
    t0 = time.perf_counter()
    ok = True
    c = 0.05
    for n in (2, 4):
        rep = cached_report("genus_g", n=n, c=c)
        I = rep.integrals["M0"]
        # closed form typed in directly from the text, independent of the package helper
        closed = -8 * math.pi * c * c * (2 * n - 1) / math.tan(math.pi / (2 * n)) / ((n - 1) * (3 * n - 1) * (5 * n - 1))
        assert genus_closed_form_product(n, c) == pytest.approx(closed, rel=1e-14)
        prod = I["I0"] * I["I2"] + I["I1"] ** 2
        ok &= report(f"I0 I2 + I1^2 vs closed form, n={n} (relative)", abs(prod - closed) / abs(closed), 1e-6)
        ok &= report(f"I1 = 0, n={n}", abs(I["I1"]), 1e-9)
    ok &= report("closed-form runtime [s]", time.perf_counter() - t0, 10.0)
    assert ok


def test_c03_closing_conditions():
    t0 = time.perf_counter()
    ok = True
    for label, rep in [("genus n=2", cached_report("genus_g", n=2, c=0.05)),
                       ("genus n=4", cached_report("genus_g", n=4, c=0.05)),
                       ("torus", cached_report("torus", c=0.001))]:
        assert rep.closing
        for name, (val, der) in sorted(rep.closing.items()):
            ok &= report(f"{label} ||{name}(1) - Id||", val, 1e-6)
            ok &= report(f"{label} ||d{name}(1)||", der, 1e-5)
    ok &= report("closing runtime [s]", time.perf_counter() - t0, 60.0)
    assert ok


def test_c04_corollary_second_derivative():
    ok = True
    for label, rep in [("genus n=2", cached_report("genus_g", n=2, c=0.05)), ("torus", cached_report("torus", c=0.001))]:
        ok &= report(f"{label} second derivative vs 2(diag[-I1,I1] + off[I0,I2])", rep.meta["corollary_residual"], 1e-5)
    assert ok


def test_c05_trace_bound():
    rep = cached_report("genus_g", n=2, c=0.05)
    tr = rep.trace
    tau = tr["tau"]
    away = np.abs(rep.generators["M0"].points - 1) > 0.05
    ok = report("|Im tau|", tr["max_abs_imag"], 1e-7)
    ok &= report("|tau(1) - 1|", abs(tr["tau_at_1"] - 1), 1e-6)
    worst = float(np.abs(tau[away]).max())
    ok &= report("max |tau| with |lambda-1| > 0.05 (must be < 1)", worst, 1.0, ok=worst < 1.0)
    assert ok


def test_c06_symmetry_relations():
    ok = True
    for label, rep in [("genus n=2", cached_report("genus_g", n=2, c=0.05)),
                       ("genus n=4", cached_report("genus_g", n=4, c=0.05)),
                       ("torus", cached_report("torus", c=0.001))]:
        for name, val in sorted(rep.relations.items()):
            ok &= report(f"{label} relation {name}", val, 1e-6)
    assert ok


@pytest.mark.xfail(strict=True, reason="printed form c2 b1 + i c1 b2 = 0 does not hold numerically; see the corrected c2b1_b2c1 relation")
def test_c06_printed_relation_c2b1_plus_ic1b2():
    rep = cached_report("torus", c=0.001)
    val = rep.meta["printed_form_residuals"]["c2b1_plus_ic1b2"]
    assert report("torus printed relation c2 b1 + i c1 b2 = 0", val, 1e-6)


def test_c07_unitarization():
    ok = True
    for label, fam, params in [("genus n=2", "genus_g", {"n": 2, "c": 0.05}),
                               ("genus n=4", "genus_g", {"n": 4, "c": 0.05}),
                               ("torus", "torus", {"c": 0.001})]:
        U, residuals = cached_unitarizer(fam, **params)
        for name, val in sorted(residuals.items()):
            ok &= report(f"{label} unitarity of h {name} h^-1", val, 1e-5)
        for name, lem in sorted(U.meta["lemma21"].items()):
            for key, val in lem["post"].items():
                ok &= report(f"{label} {name} unitarized {key}", val, 1e-5)
    assert ok


def test_c08_delaunay_structure():
    ok = True
    for n in (3, 4):
        rep = cached_report("delaunay_chain", n=n, w=-1.0)
        ok &= report(f"n={n} ||(M0 g^-1)^n + Id||", rep.relations["M0ginv_pow_n_plus_id"], 1e-5)
        eig = eigenvalue_formula_check(rep)
        ok &= report(f"n={n} M0 eigenvalues vs closed form", eig["eig_M0"], 1e-5)
    for n in (3, 4, 6):
        lo, hi = delaunay_window(n)
        assert lo == pytest.approx(-8 * n / (n - 2) ** 2)
        for w in (lo, 0.5 * lo, -1e-3):
            gs = goldman_scan(cached_report("delaunay_chain", n=n, w=w, strict=False))
            ok &= report(f"n={n} w={w:.4g} inside: Goldman min (must be >= 0)", -gs["min"], 1e-9, ok=gs["passed"])
        for w in (lo - 0.5, hi + 0.5):
            gs = goldman_scan(cached_report("delaunay_chain", n=n, w=w, strict=False))
            ok &= report(f"n={n} w={w:.4g} outside: Goldman min (must be < 0)", gs["min"], 0.0, ok=not gs["passed"])
    assert ok


def _random_loop(rng, grid, K=8):
    coeffs = {}
    for k in range(-K, K + 1):
        scale = 0.15 * 0.5 ** abs(k)
        coeffs[k] = scale * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    coeffs[0] = coeffs[0] + 2 * ID2
    return MatrixLoop.from_laurent(coeffs, grid)


def test_c09_iwasawa(rng):
    grid = CircleGrid(256)
    worst_fb = worst_unit = 0.0
    plus = positive = True
    for _ in range(50):
        phi = _random_loop(rng, grid)
        F, B = iwasawa(phi)
        worst_fb = max(worst_fb, float(mat_norm(F.samples @ B.samples - phi.samples).max()))
        worst_unit = max(worst_unit, float(mat_norm(F.samples @ dagger(F.samples) - ID2).max()))
        plus &= is_plus_loop(B, tol=1e-9)
        B0 = B.coefficient(0)
        positive &= bool(abs(B0[1, 0]) < 1e-9 and np.all(np.abs(np.diag(B0).imag) < 1e-9) and np.all(np.diag(B0).real > 0))
    ok = report("max ||F B - Phi||", worst_fb, 1e-7)
    ok &= report("max ||F F* - Id||", worst_unit, 1e-7)
    ok &= report("B is a plus loop with B(0) upper triangular, positive diagonal", 0.0 if plus and positive else 1.0, 0.5)
    assert ok


@pytest.mark.slow
def test_c10_genus_surface():
    from dpw_forge.surface import build_surface

    t0 = time.perf_counter()
    mesh = build_surface("genus_g", {"n": 2, "c": 0.05})
    elapsed = time.perf_counter() - t0
    m = mesh.meta
    ok = report("interior discrete H relative spread", m["H_stats"]["relative_std"], 0.05)
    ok &= report("generator period closure / diameter", m["period_residual"], 1e-4)
    ok &= report("rotation by pi/2 self-coincidence / diameter", m["rotation_residual"], 1e-4)
    ok &= report("reflection theta*f = -conj(f) self-coincidence / diameter", m["reflection_residual"], 1e-4)
    ok &= report("surface runtime [s]", elapsed, 300.0)
    assert ok


@pytest.mark.filterwarnings("ignore::dpw_forge.errors.UnderResolvedWarning")
def test_c11_delaunay_diagnostics_reported():
    """Reported without thresholds; only their presence is checked."""
    from dpw_forge.surface import build_surface

    mesh = build_surface("delaunay_chain", {"n": 3, "w": -1.0}, resolution=18)
    m = mesh.meta
    assert m.get("experimental") is True
    for key in ("end_axis_spread", "boundary_planarity"):
        assert key in m
        print(f"INFO delaunay n=3 {key}: {m[key]:.3e} (diagnostic, no threshold)")
