import cmath
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcvoc.frame import (
    Mat2,
    Rot2,
    Vec2,
    apparent_power,
    mat_from_complex,
    mat_to_complex,
    rotate,
    rotated_power,
    vec_from_complex,
    vec_to_complex,
)

angles = st.floats(-2 * math.pi, 2 * math.pi)
coords = st.floats(-7, 7)


def test_rotate_identity():
    assert rotate(Rot2(0.0), (1.0, 0.0)) == (1.0, 0.0)


def test_rotate_quarter_turn():
    v = rotate(Rot2(math.pi / 2), (1.0, 0.0))
    assert v[0] == pytest.approx(0.0, abs=1e-15) and v[1] == pytest.approx(1.0)


def test_rotate_case2_line_angle():
    phig = math.atan2(0.25, 0.2)
    assert phig == pytest.approx(0.8961, abs=1e-4)
    # oracle: complex exponential
    z = cmath.exp(1j * phig)
    v = rotate(Rot2(phig), (1.0, 0.0))
    assert v == pytest.approx((z.real, z.imag), abs=1e-15)


def test_rot2_matrix_orthonormal():
    m = Rot2(0.7).matrix()
    assert m.det() == pytest.approx(1.0, abs=1e-12)
    assert m.m11 * m.m12 + m.m21 * m.m22 == pytest.approx(0.0, abs=1e-12)
    assert m.is_complex_form()


def test_apparent_power_examples():
    assert apparent_power((1, 0), (1, 0)) == (1, 0)
    assert apparent_power((0, 1), (1, 0)) == (0, 1)
    p, q = apparent_power((1.1388, 0.3559), (1.1388, 0.3559))
    assert p == pytest.approx(1.423, abs=1e-3) and q == 0


def test_apparent_power_matches_complex_conjugate():
    u, i = complex(0.3, -1.2), complex(-0.7, 0.4)
    s = u * i.conjugate()
    assert apparent_power((u.real, u.imag), (i.real, i.imag)) == pytest.approx((s.real, s.imag))


def test_rotated_power_examples():
    assert rotated_power(1, 0, math.pi / 2, 1) == pytest.approx((1, 0))
    assert rotated_power(0, 1, 0.0, 1) == pytest.approx((-1, 0), abs=1e-15)
    assert rotated_power(1, 0, math.pi / 2, 4) == pytest.approx((0.25, 0))


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_rotated_power_rejects_bad_scale(scale):
    with pytest.raises(ValueError):
        rotated_power(1, 0, 1.0, scale)


def test_complex_duality_round_trip():
    z = complex(0.4, -1.3)
    assert vec_to_complex(vec_from_complex(z)) == z
    assert mat_to_complex(mat_from_complex(z)) == z
    # matrix product equals complex product
    w = complex(-0.2, 0.9)
    assert vec_to_complex(mat_from_complex(z).matvec(vec_from_complex(w))) == pytest.approx(z * w)


def test_mat_to_complex_rejects_general_matrix():
    with pytest.raises(ValueError):
        mat_to_complex(Mat2(1, 2, 3, 4))


def test_mat2_solve_and_singular():
    m = Mat2(2, 1, 1, 3)
    x = m.solve((3, 5))
    assert m.matvec(x) == pytest.approx((3, 5))
    with pytest.raises(ZeroDivisionError):
        Mat2(1, 2, 2, 4).solve((1, 1))


def test_vec2_arithmetic():
    a, b = Vec2(1, 2), Vec2(3, -1)
    assert a + b == (4, 1) and a - b == (-2, 3) and -a == (-1, -2)
    assert a.dot(b) == 1 and a.scale(2) == (2, 4)
    assert Vec2(3, 4).norm() == 5


@given(angles, coords, coords)
def test_rotate_preserves_norm(theta, x, y):
    assert rotate(Rot2(theta), (x, y)).norm() == pytest.approx(math.hypot(x, y), abs=1e-12)


@given(angles, angles, coords, coords)
def test_rotate_composes(a, b, x, y):
    lhs = rotate(Rot2(a), rotate(Rot2(b), (x, y)))
    rhs = rotate(Rot2(a + b), (x, y))
    assert lhs == pytest.approx(rhs, abs=1e-12)


@given(coords, coords, coords, coords, st.floats(0.01, 100))
def test_apparent_power_scales_with_current(ua, ub, ia, ib, k):
    p, q = apparent_power((ua, ub), (ia, ib))
    pk, qk = apparent_power((ua, ub), (k * ia, k * ib))
    assert pk == pytest.approx(k * p, rel=1e-12, abs=1e-12)
    assert qk == pytest.approx(k * q, rel=1e-12, abs=1e-12)


@given(coords, coords, st.floats(0.1, 5), angles)
def test_q_phi_equals_uq_over_i(ua, ub, i_mag, ang):
    i = (i_mag * math.cos(ang), i_mag * math.sin(ang))
    p, q = apparent_power((ua, ub), i)
    _, q_phi = rotated_power(p, q, math.pi / 2, i_mag**2)
    # q-axis voltage in the frame aligned with i
    u_q = -ua * math.sin(ang) + ub * math.cos(ang)
    assert q_phi == pytest.approx(u_q / i_mag, abs=1e-12)
