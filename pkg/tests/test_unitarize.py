import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import cached_report, cached_unitarizer
from dpw_forge.errors import UnitarizabilityError
from dpw_forge.loops import ID2, CircleGrid, MatrixLoop, dagger, diag, mat_norm, off, to_laurent
from dpw_forge.unitarize import (
    DiagonalCase,
    Unitarizer,
    diagonal_unitarizer,
    eigenvalue_formula_check,
    goldman_scan,
    goldman_test,
    invariant_hermitian_form,
    lemma21_verify,
    m0_eigenvalues_closed_form,
    unitarity_check,
    v_at_one,
    v_function,
)

GRID = CircleGrid(64)


def su2_loop(grid):
    lam = grid.points
    a = np.cos(0.3) * lam ** 0
    b = np.sin(0.3) * (lam + 1 / lam) / 2
    s = np.zeros((grid.N, 2, 2), dtype=complex)
    norm = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
    s[:, 0, 0], s[:, 0, 1] = a / norm, b / norm
    s[:, 1, 0], s[:, 1, 1] = -np.conj(b) / norm, np.conj(a) / norm
    return MatrixLoop(grid, s)


def test_v_regular_through_one():
    # entries vanishing to second order at lambda = 1, real on the circle
    t = lambda lam: (lam - 1) ** 2 / lam
    M = MatrixLoop.from_function(lambda lam: np.moveaxis(
        np.array([[1 + 0 * lam, t(lam)], [-2 * t(lam), 1 + 0 * lam]]), (0, 1), (-2, -1)), GRID, K=16)
    v = v_function(M)
    assert np.allclose(v, 2, atol=1e-10)


def test_v_rejects_non_real_and_diagonal():
    with pytest.raises(DiagonalCase):
        v_function(MatrixLoop.constant(ID2, GRID))
    lam = GRID.points
    s = np.tile(ID2, (GRID.N, 1, 1)) * 2
    s[:, 0, 1] = 1.0
    s[:, 1, 0] = 1j * lam
    with pytest.raises(UnitarizabilityError):
        v_function(MatrixLoop(GRID, s))


def test_diagonal_unitarizer_examples():
    assert np.allclose(diagonal_unitarizer(np.ones(GRID.N), GRID).h.samples, ID2)
    assert np.allclose(diagonal_unitarizer(np.full(GRID.N, 16.0), GRID).h.samples, diag(2, 0.5))
    with pytest.raises(UnitarizabilityError):
        diagonal_unitarizer(np.full(GRID.N, -1.0), GRID)


def test_unitarity_check_su2():
    assert unitarity_check(su2_loop(GRID)) < 1e-14
    h = Unitarizer(MatrixLoop.constant(ID2, GRID), "identity")
    assert unitarity_check(su2_loop(GRID), h) < 1e-14


def test_lemma21_trivial_and_synthetic():
    U = to_laurent(su2_loop(GRID))
    E = off(1, 0)
    M = MatrixLoop.from_function(lambda lam: ((lam - 1) ** 2)[..., None, None] * E + ID2, GRID, K=16)
    rep = lemma21_verify(M, M)
    assert rep["passed"]
    hM = Unitarizer(MatrixLoop.constant(diag(1.7, 1 / 1.7), GRID), "test").conjugate(M)
    assert lemma21_verify(M, hM)["passed"]
    assert not lemma21_verify(U, U)["preconditions_hold"]  # U(1) != Id


def test_goldman_examples():
    assert goldman_test(0, 0, 0) == 1
    assert goldman_test(1, 1, 1) == 0
    c = np.cos(np.pi / 4)
    t3 = -np.cos(np.pi / 2 * np.sqrt(2))
    assert goldman_test(c, c, t3) == pytest.approx(0.2388, abs=1e-4)


def test_goldman_against_integrated_monodromy():
    rep = cached_report("delaunay_chain", n=4, w=-2.0)
    gs = goldman_scan(rep)
    j = rep.grid.index_of(1j)
    assert gs["values"][j].real == pytest.approx(0.2388, abs=1e-4)
    t3 = 0.5 * np.trace(rep.generators["M0"].samples[j])
    assert t3 == pytest.approx(-np.cos(np.pi / 2 * np.sqrt(2)), abs=1e-9)


def test_eigenvalue_closed_form_at_one():
    ev = m0_eigenvalues_closed_form(1.0, 3, -1.0)
    assert 0.5 * ev.sum() == pytest.approx(-0.5)
    eig = eigenvalue_formula_check(cached_report("delaunay_chain", n=3, w=-1.0))
    assert eig["eig_M0"] <= 1e-5 and eig["eig_M0_ginv"] <= 1e-5 and eig["half_trace"] <= 1e-5


def test_hermitian_form_examples():
    h = invariant_hermitian_form([su2_loop(GRID)])
    assert np.allclose(h.h.samples, ID2, atol=1e-10)
    with pytest.raises(UnitarizabilityError):
        invariant_hermitian_form([MatrixLoop.constant(np.array([[2, 1], [1, 1]], dtype=complex), GRID)])


def test_genus_unitarizer_limits(genus2):
    U, res = cached_unitarizer("genus_g", n=2, c=0.05)
    I = genus2.integrals["M0"]
    j1 = genus2.grid.index_of(1.0)
    assert U.v[j1] == pytest.approx(v_at_one(I["I0"], I["I2"]), rel=1e-6)
    assert max(res.values()) <= 1e-5
    csv = U.to_csv(U.meta["pointwise"]).splitlines()
    assert csv[0].startswith("re_lambda") and len(csv) == genus2.grid.N + 1


def test_delaunay_unitarizer():
    U, res = cached_unitarizer("delaunay_chain", n=3, w=-1.0)
    assert max(res.values()) <= 1e-5
    assert np.all(U.p > 0) and np.allclose(U.p * U.q, 1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-1.0, 1.0))
def test_diagonal_unitarizer_unitarizes(v, phase):
    """If M is unitary then h^-1 M h is unitarized back by h."""
    U = su2_loop(GRID)
    r = v ** 0.25
    hinv = MatrixLoop.constant(diag(1 / r, r), GRID)
    M = MatrixLoop(GRID, hinv.samples @ U.samples @ np.linalg.inv(hinv.samples))
    h = diagonal_unitarizer(np.full(GRID.N, v), GRID)
    C = h.conjugate(M).samples
    assert mat_norm(C @ dagger(C) - ID2).max() < 1e-9
