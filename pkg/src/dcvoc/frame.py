"""Planar alpha-beta phasor algebra.

A complex number a + jb is carried either as the vector [a, b] or as the
matrix [[a, -b], [b, a]]. All angles are radians and never wrapped.
"""

from __future__ import annotations

import math
from typing import NamedTuple


class Vec2(NamedTuple):
    a1: float
    a2: float

    def norm(self) -> float:
        return math.hypot(self.a1, self.a2)

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.a1 + other[0], self.a2 + other[1])

    def __sub__(self, other):
        return Vec2(self.a1 - other[0], self.a2 - other[1])

    def __neg__(self):
        return Vec2(-self.a1, -self.a2)

    def scale(self, k: float) -> "Vec2":
        return Vec2(k * self.a1, k * self.a2)

    def dot(self, other) -> float:
        return self.a1 * other[0] + self.a2 * other[1]


class Mat2(NamedTuple):
    m11: float
    m12: float
    m21: float
    m22: float

    def matvec(self, v) -> Vec2:
        return Vec2(self.m11 * v[0] + self.m12 * v[1], self.m21 * v[0] + self.m22 * v[1])

    def det(self) -> float:
        return self.m11 * self.m22 - self.m12 * self.m21

    def solve(self, rhs) -> Vec2:
        """Cramer's rule; raises ZeroDivisionError on an exactly singular matrix."""
        d = self.det()
        if d == 0.0:
            raise ZeroDivisionError("singular 2x2 matrix")
        return Vec2((self.m22 * rhs[0] - self.m12 * rhs[1]) / d,
                    (self.m11 * rhs[1] - self.m21 * rhs[0]) / d)

    def __add__(self, other):  # type: ignore[override]
        return Mat2(*(a + b for a, b in zip(self, other)))

    def __sub__(self, other):
        return Mat2(*(a - b for a, b in zip(self, other)))

    def is_complex_form(self, tol: float = 0.0) -> bool:
        return abs(self.m11 - self.m22) <= tol and abs(self.m12 + self.m21) <= tol


class Rot2(NamedTuple):
    angle: float

    def matrix(self) -> Mat2:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return Mat2(c, -s, s, c)


def vec_from_complex(z: complex) -> Vec2:
    return Vec2(z.real, z.imag)


def vec_to_complex(v) -> complex:
    return complex(v[0], v[1])


def mat_from_complex(z: complex) -> Mat2:
    return Mat2(z.real, -z.imag, z.imag, z.real)


def mat_to_complex(m: Mat2) -> complex:
    if not m.is_complex_form(1e-12 * (1.0 + max(abs(x) for x in m))):
        raise ValueError(f"matrix {m} has no complex-number form")
    return complex(m.m11, m.m21)


def rotate(r: Rot2, v) -> Vec2:
    c, s = math.cos(r.angle), math.sin(r.angle)
    return Vec2(c * v[0] - s * v[1], s * v[0] + c * v[1])


def apparent_power(u, i) -> tuple[float, float]:
    """p + jq = (u_a + j u_b) * conj(i_a + j i_b)."""
    p = u[0] * i[0] + u[1] * i[1]
    q = u[1] * i[0] - u[0] * i[1]
    return p, q


def rotated_power(p: float, q: float, phi: float, scale: float) -> tuple[float, float]:
    """Rotate (p, q) by pi/2 - phi and divide by ``scale`` (i^2, i_ref^2 or u^2)."""
    if not scale > 0.0:
        raise ValueError(f"rotated power needs a positive scale, got {scale!r}")
    c, s = math.cos(math.pi / 2 - phi), math.sin(math.pi / 2 - phi)
    return (c * p - s * q) / scale, (s * p + c * q) / scale
