import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpw_forge.domains import (
    ChartArc,
    ChartLine,
    Line,
    PathSpec,
    concatenate,
    curve_residual,
    gamma_k_path,
    gamma_k_point,
    hyperelliptic_continue,
    lift_path,
    polygon_loop,
    torus_paths,
    winding_number,
)
from dpw_forge.errors import InvalidPathError
from dpw_forge.weierstrass import TorusData

SQUARE = [0.5, 0.5 + 0.5j, 1.5 + 0.5j, 1.5 - 0.5j, 0.5 - 0.5j, 0.5]


def polygon(pts, **kw):
    return PathSpec(tuple(Line(a, b) for a, b in zip(pts[:-1], pts[1:])), "hyperelliptic", **kw)


def test_continue_along_real_segment():
    pts = hyperelliptic_continue(PathSpec((Line(0, 1),), "hyperelliptic", 2, sheet=1), 2)
    mid = pts[len(pts) // 2]
    assert mid.z == pytest.approx(0.5)
    assert mid.w == pytest.approx(math.sqrt(3 / 8), abs=1e-12)


def test_gamma0_sign_flip_after_turn():
    p = gamma_k_point(2, 0, 0.75)
    assert p.z == pytest.approx(0.5)
    assert p.w == pytest.approx(-abs(cmath.sqrt(0.5 * 0.75)))


def test_loop_around_one_branch_point_flips_sheet():
    pts = hyperelliptic_continue(polygon(SQUARE, n=2, sheet=1), 2)
    assert pts[-1].w == pytest.approx(-pts[0].w, abs=1e-10)


def test_contractible_loop_returns_to_sheet():
    sq = [0.3 + 0.3j, 0.6 + 0.3j, 0.6 + 0.6j, 0.3 + 0.6j, 0.3 + 0.3j]
    pts = hyperelliptic_continue(polygon(sq, n=2, sheet=1), 2)
    assert pts[-1].w == pytest.approx(pts[0].w, abs=1e-9)


def test_loop_around_two_branch_points_keeps_sheet():
    # encloses 0 and 1 for n = 2 (branch points 0, 1, -1)
    rect = [0.5 - 0.5j, 1.5 - 0.5j, 1.5 + 0.5j, -0.5 + 0.5j, -0.5 - 0.5j, 0.5 - 0.5j]
    pts = hyperelliptic_continue(polygon(rect, n=2, sheet=1), 2)
    assert pts[-1].w == pytest.approx(pts[0].w, abs=1e-9)


def test_crossing_branch_point_inside_segment_is_error():
    with pytest.raises(InvalidPathError):
        hyperelliptic_continue(PathSpec((Line(0.5, 1.5),), "hyperelliptic", 2, sheet=1), 2)


def test_gamma_k_paths():
    assert gamma_k_path(2, 0).point(0.5) == pytest.approx(1)
    assert gamma_k_path(2, 1).point(0.5) == pytest.approx(-1)
    assert gamma_k_path(4, 3).point(0.5) == pytest.approx(cmath.exp(3j * math.pi / 2))
    for s in np.linspace(0.01, 0.99, 9):
        p = gamma_k_point(4, 3, s)
        assert curve_residual(p.z, p.w, 4) < 1e-12
    with pytest.raises(ValueError):
        gamma_k_path(3, 0)


def test_lifted_path_carries_curve_points():
    lifted = lift_path(polygon([0.2, 0.2 + 0.3j, 0.5 + 0.3j], n=4, sheet=1), 4)
    for seg in lifted.segments:
        smp = seg.sample(np.linspace(0, 1, 11))
        assert np.max(np.abs(smp.w ** 2 - smp.z * (1 - smp.z ** 4))) < 1e-12


@pytest.mark.parametrize("n", [2, 4, 6])
def test_chart_segments_on_curve(n):
    for seg in (ChartLine(n, 0.1, 0.4 + 0.2j), ChartArc(n, 0.6, 0.1, 1.2)):
        smp = seg.sample(np.linspace(0, 1, 9))
        assert np.max(np.abs(smp.w ** 2 - smp.z * (1 - smp.z ** n))) < 1e-12
        # dzw = dz / w along the chart
        assert np.allclose(smp.dzw, smp.dz / smp.w)


def test_torus_paths():
    t = TorusData()
    g1, g2, d1, d2 = torus_paths(t)
    assert g1.point(0.5) == pytest.approx(t.omega1)
    assert g2.point(1.0) == pytest.approx(2 * t.omega2)
    for s in np.linspace(0, 1, 13):
        assert d2.point(s) == pytest.approx(-d1.point(s))
    q = t.omega3 / 2
    assert winding_number(d1, q) == 1
    assert winding_number(d1, -q) == 0
    assert winding_number(d2, -q) == 1


@pytest.mark.parametrize("n", [3, 4, 6])
def test_polygon_loop(n):
    g0 = polygon_loop(n, 0)
    assert g0.point(0.5) == pytest.approx(2)
    roots = [cmath.exp(2j * math.pi * j / n) for j in range(n)]
    assert [winding_number(g0, r) for r in roots] == [1] + [0] * (n - 1)
    a2 = cmath.exp(2j * math.pi / n)
    g1 = polygon_loop(n, 1)
    for s in np.linspace(0, 1, 17):
        assert g1.point(s) == pytest.approx(a2 * g0.point(s))
    with pytest.raises(ValueError):
        polygon_loop(n, n)


def test_concatenate_and_describe():
    p = concatenate(polygon_loop(3, 0), polygon_loop(3, 1))
    assert len(p.segments) == 8
    d = p.describe()
    assert d["segments"][0]["type"] == "line"


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(0, 3))
def test_gamma_k_points_lie_on_curve(s, k):
    p = gamma_k_point(4, k, s)
    assert curve_residual(p.z, p.w, 4) < 1e-12
