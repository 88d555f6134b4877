"""Root-to-tip position sweep: free flight while slack, exact rotation while taut."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import QuadraticCoeffs, largest_root_in_unit_interval, norm
from .rope_core import RopeChain

SLACK = "slack"
TAUT_ROTATED = "taut-rotated"
PROJECTED_ROTATED = "projected-then-rotated"

MIN_TANGENTIAL_SPEED = 1e-12

# which taut bones have their velocity turned along with their segment
NONE, ROOT, ALL = "none", "root", "all"


@dataclass
class PositionStepReport:
    branches: list = field(default_factory=list)
    s_roots: list = field(default_factory=list)


def advance_positions(chain: RopeChain, dt: float, rotate_velocity: str = "root") -> PositionStepReport:
    """Move bones ``1..m`` from ``t^n`` to ``t^{n+1}`` using their half-step velocities.

    The root must already sit at its ``t^{n+1}`` position.

    ``rotate_velocity`` picks the taut bones whose velocity turns with their
    segment: ``"all"``, ``"none"`` or ``"root"`` (only bone 1, whose anchor is
    kinematic, so the turn is exact there).  A velocity that is not turned is
    left for the next impulse solve, which removes the radial part it gained.
    Turning the absolute velocity of bones deeper in the chain over-rotates
    them whenever the parent moves and can feed energy into the chain.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if rotate_velocity not in (NONE, ROOT, ALL):
        raise ValueError(f"rotate_velocity must be one of none/root/all, got {rotate_velocity!r}")
    report = PositionStepReport()
    # plain floats: numpy overhead dominates for 3-vectors
    x = chain.x.tolist()
    v = chain.v.tolist()
    l_maxes = chain.l_max.tolist()
    for i in range(1, chain.m + 1):
        l_max = l_maxes[i - 1]
        ax, ay, az = x[i - 1]
        vx, vy, vz = v[i]
        rx, ry, rz = x[i][0] - ax, x[i][1] - ay, x[i][2] - az
        q = QuadraticCoeffs(vx * vx + vy * vy + vz * vz, 2.0 * (rx * vx + ry * vy + rz * vz),
                            rx * rx + ry * ry + rz * rz - l_max * l_max)
        if q(dt) <= 0.0:
            x[i] = [x[i][0] + dt * vx, x[i][1] + dt * vy, x[i][2] + dt * vz]
            report.branches.append(SLACK)
            report.s_roots.append(dt)
            continue

        s_root = largest_root_in_unit_interval(q, dt)
        if s_root is None:
            s_root = 0.0
            scale = l_max / math.sqrt(rx * rx + ry * ry + rz * rz)
            rx, ry, rz = rx * scale, ry * scale, rz * scale
            branch = PROJECTED_ROTATED
        else:
            branch = TAUT_ROTATED
        sx, sy, sz = rx + s_root * vx, ry + s_root * vy, rz + s_root * vz
        seg_len = math.sqrt(sx * sx + sy * sy + sz * sz)
        report.branches.append(branch)
        report.s_roots.append(s_root)
        if seg_len == 0.0:
            # passes through the anchor exactly at s_root; nothing to rotate
            x[i] = [ax + dt * vx, ay + dt * vy, az + dt * vz]
            continue
        lx, ly, lz = sx / seg_len, sy / seg_len, sz / seg_len
        radial = vx * lx + vy * ly + vz * lz
        tx, ty, tz = vx - radial * lx, vy - radial * ly, vz - radial * lz
        speed_t = math.sqrt(tx * tx + ty * ty + tz * tz)
        if speed_t >= MIN_TANGENTIAL_SPEED:
            theta = speed_t * (dt - s_root) / l_max
            # l_hat and v_t are orthogonal, so the axis is already unit length
            ux, uy, uz = tx / speed_t, ty / speed_t, tz / speed_t
            kx, ky, kz = ly * uz - lz * uy, lz * ux - lx * uz, lx * uy - ly * ux
            kn = math.sqrt(kx * kx + ky * ky + kz * kz)
            axis = (kx / kn, ky / kn, kz / kn)
            lx, ly, lz = _rotate((lx, ly, lz), axis, theta)
            if rotate_velocity == ALL or (rotate_velocity == ROOT and i == 1):
                v[i] = list(_rotate((vx, vy, vz), axis, theta))
        x[i] = [ax + l_max * lx, ay + l_max * ly, az + l_max * lz]
    chain.x[:] = x
    chain.v[:] = v
    return report


def _rotate(p, k, theta):
    """Rodrigues rotation on float triples (``k`` unit)."""
    c, s = math.cos(theta), math.sin(theta)
    px, py, pz = p
    kx, ky, kz = k
    kp = (kx * px + ky * py + kz * pz) * (1.0 - c)
    return (px * c + (ky * pz - kz * py) * s + kx * kp,
            py * c + (kz * px - kx * pz) * s + ky * kp,
            pz * c + (kx * py - ky * px) * s + kz * kp)


def evolve_and_project(anchor: np.ndarray, x: np.ndarray, v: np.ndarray, l_max: float, dt: float) -> np.ndarray:
    """Naive update: free step, then radial projection back onto the sphere."""
    moved = x + dt * v
    rel = moved - anchor
    length = norm(rel)
    if length <= l_max:
        return moved
    return anchor + rel * (l_max / length)


def arc_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two vectors, robust near 0 and pi."""
    return math.atan2(norm(np.cross(a, b)), float(a @ b))
