import math

import numpy as np
import pytest

from anisopg.quadrature import (
    GraphJump,
    gauss_segment,
    integrate_flagged,
    integrate_jump_polygon,
    integrate_polygon,
    poly_quad,
    tri_points,
    tri_rule,
)

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def _mono_exact(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5])
def test_rule_exactness(degree):
    pts, w = tri_points(REF, degree)
    assert w.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            val = float(np.dot(pts[:, 0] ** a * pts[:, 1] ** b, w))
            assert val == pytest.approx(_mono_exact(a, b), abs=1e-14)


def test_rule_weights_positive():
    for degree in (1, 2, 3, 4, 5):
        _, w = tri_rule(degree)
        assert (w > 0).all()


def test_polygon_quadrature():
    val = integrate_polygon(lambda p: p[:, 0] * p[:, 1], SQUARE, degree=2)
    assert val == pytest.approx(0.25, abs=1e-14)
    pts, w = poly_quad(SQUARE, 4)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_gauss_segment():
    pts, w = gauss_segment(np.array([0.0, 0.0]), np.array([2.0, 0.0]), 3)
    assert w.sum() == pytest.approx(2.0, abs=1e-14)
    val = float(np.dot(pts[:, 0] ** 4, w))
    assert val == pytest.approx(32.0 / 5.0, abs=1e-12)


def test_jump_split_vertical_line():
    jump = GraphJump.from_function(lambda y: 0.5 * np.ones_like(y), n=9)
    val = integrate_jump_polygon(lambda p: np.zeros(len(p)), lambda p: np.ones(len(p)), jump, SQUARE)
    assert val == pytest.approx(0.5, abs=1e-14)


def test_jump_split_parabola():
    jump = GraphJump.from_function(lambda y: 0.5 * y**2, n=4097)
    val = integrate_jump_polygon(lambda p: np.ones(len(p)), lambda p: np.zeros(len(p)), jump, SQUARE)
    assert val == pytest.approx(1.0 / 6.0, abs=1e-8)


def test_flagged_recursion_matches_split():
    side = lambda p: np.where(p[:, 0] <= 0.5 * p[:, 1] ** 2, -1.0, 1.0)
    f = lambda p: np.where(side(p) < 0, 1.0, 0.25)
    # depth-12 quartering leaves O(leaf diameter) mass unresolved along the curve
    val = integrate_flagged(f, side, SQUARE, degree=4, max_depth=12, min_area=1e-10)
    exact = 1.0 / 6.0 + 0.25 * (1 - 1.0 / 6.0)
    assert val == pytest.approx(exact, abs=2e-3)
