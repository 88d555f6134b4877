"""Small 3-vector kernel shared by the simulation modules.

Vectors are plain ``numpy`` arrays of shape ``(3,)`` in float64.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

WORLD_UP = np.array([0.0, 1.0, 0.0])


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


def norm(v: np.ndarray) -> float:
    return math.sqrt(float(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))


def normalized(v: np.ndarray, fallback: Optional[np.ndarray] = None) -> np.ndarray:
    """Unit vector along ``v``; ``fallback`` (default world-up) when ``v`` is ~0."""
    n = norm(v)
    if n < 1e-300:
        return (WORLD_UP if fallback is None else fallback).copy()
    return v / n


def rotate_about_axis(v: np.ndarray, axis: np.ndarray, theta: float, check: bool = True) -> np.ndarray:
    """Rotate ``v`` by ``theta`` radians about the unit ``axis`` (right-hand rule).

    Uses Rodrigues' formula.
    """
    if check and abs(norm(axis) - 1.0) > 1e-9:
        raise ValueError("rotation axis must be unit length")
    c = math.cos(theta)
    s = math.sin(theta)
    k_dot_v = float(np.dot(axis, v))
    return v * c + np.cross(axis, v) * s + axis * (k_dot_v * (1.0 - c))


def rotation_matrix(axis: np.ndarray, theta: float) -> np.ndarray:
    """3x3 matrix of :func:`rotate_about_axis`."""
    a = normalized(np.asarray(axis, dtype=np.float64))
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


class QuadraticCoeffs(NamedTuple):
    """Coefficients of ``a*s**2 + b*s + c``."""

    a: float
    b: float
    c: float

    def __call__(self, s: float) -> float:
        return (self.a * s + self.b) * s + self.c


def largest_root_in_unit_interval(q: QuadraticCoeffs, interval_end: float) -> Optional[float]:
    """Largest root of ``q`` in ``[0, interval_end]``, or ``None``.

    The quadratic formula is evaluated in its cancellation-free form.  Roots
    within a relative ``1e-12`` of the interval ends are clamped inside.
    """
    if interval_end <= 0.0:
        raise ValueError("interval_end must be positive")
    a, b, c = float(q.a), float(q.b), float(q.c)
    slack = 1e-12 * interval_end

    if a == 0.0:
        if b == 0.0:
            return interval_end if c == 0.0 else None
        roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        qq = -0.5 * (b + math.copysign(sq, b))
        if qq == 0.0:
            # b == 0 and disc == 0, so c == 0: double root at zero
            roots = [0.0]
        else:
            roots = [qq / a, c / qq]

    best = None
    for r in roots:
        if -slack <= r <= interval_end + slack:
            r = min(max(r, 0.0), interval_end)
            if best is None or r > best:
                best = r
    return best
