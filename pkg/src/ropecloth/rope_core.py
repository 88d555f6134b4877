"""Rope-chain state and the tension / impulse inequality solves.

A chain holds ``m + 1`` virtual bones; bone 0 is the kinematic root and
segment ``i`` (``1 <= i <= m``) joins bones ``i - 1`` and ``i``.  Arrays
that are indexed per segment have length ``m`` and store segment ``i`` at
position ``i - 1``.

Both solves are projected Gauss-Seidel sweeps over a tridiagonal system of
inequalities: tensions are swept tip to root so that a single sweep already
carries the weight of every bone below, impulses are swept root to tip.
Slack segments are pinned to zero and decouple the system into blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import WORLD_UP

log = logging.getLogger(__name__)

DEGENERATE_LENGTH = 1e-12
DEFAULT_TAUT_THRESHOLD = 1.0 - 1e-7


@dataclass
class RopeChain:
    """Positions, velocities and masses of one chain of virtual bones.

    ``mass[0]`` is ``inf``: the root follows its driver and ignores every
    force and impulse.
    """

    x: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    l_max: np.ndarray
    dir_cache: np.ndarray = field(default=None)  # type: ignore[assignment]
    tensions: np.ndarray = field(default=None)  # type: ignore[assignment]
    impulses: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.x = np.array(self.x, dtype=np.float64).reshape(-1, 3)
        self.v = np.array(self.v, dtype=np.float64).reshape(-1, 3)
        self.mass = np.array(self.mass, dtype=np.float64).reshape(-1)
        self.l_max = np.array(self.l_max, dtype=np.float64).reshape(-1)
        n = self.x.shape[0]
        if n < 2:
            raise ValueError("a rope chain needs a root and at least one bone")
        if self.v.shape != self.x.shape or self.mass.shape != (n,) or self.l_max.shape != (n - 1,):
            raise ValueError("inconsistent rope chain array shapes")
        if not np.isinf(self.mass[0]):
            raise ValueError("root mass must be inf (kinematic)")
        if np.any(~(self.mass[1:] > 0.0)) or np.any(np.isinf(self.mass[1:])):
            raise ValueError("bone masses must be positive and finite")
        if np.any(~(self.l_max > 0.0)):
            raise ValueError("maximal lengths must be positive")
        if self.dir_cache is None:
            self.dir_cache = np.full((n - 1, 3), np.nan)
        if self.tensions is None:
            self.tensions = np.zeros(n - 1)
        if self.impulses is None:
            self.impulses = np.zeros(n - 1)

    @classmethod
    def from_positions(cls, positions, mass=1.0, l_max=None, velocities=None) -> "RopeChain":
        """Chain at rest at ``positions``; ``l_max`` defaults to the rest distances."""
        x = np.array(positions, dtype=np.float64).reshape(-1, 3)
        n = x.shape[0]
        per_bone = np.asarray(mass, dtype=np.float64).reshape(-1)
        masses = np.empty(n)
        masses[0] = np.inf
        # accepts a scalar, one mass per bone, or one per bone plus an ignored root entry
        masses[1:] = per_bone[-(n - 1):] if per_bone.size > 1 else per_bone[0]
        if l_max is None:
            l_max = np.linalg.norm(np.diff(x, axis=0), axis=1)
        v = np.zeros_like(x) if velocities is None else velocities
        return cls(x=x, v=v, mass=masses, l_max=l_max)

    @property
    def m(self) -> int:
        """Number of segments (index of the tip bone)."""
        return self.x.shape[0] - 1

    @property
    def inv_mass(self) -> np.ndarray:
        inv = np.zeros_like(self.mass)
        inv[1:] = 1.0 / self.mass[1:]
        return inv

    def copy(self) -> "RopeChain":
        return RopeChain(self.x.copy(), self.v.copy(), self.mass.copy(), self.l_max.copy(),
                         self.dir_cache.copy(), self.tensions.copy(), self.impulses.copy())


@dataclass
class SolverPolicy:
    """How many Gauss-Seidel sweeps to run.

    ``mode`` is ``"sweeps"`` (exactly ``sweeps`` passes) or ``"tolerance"``
    (until the largest change of the iterate is below ``tolerance`` times its
    largest entry, capped at ``max_sweeps``).  Impulse solves in tolerance
    mode also wait until no taut segment is left separating faster than
    ``velocity_tolerance`` (m/s).
    """

    mode: str = "sweeps"
    sweeps: int = 1
    tolerance: float = 1e-6
    max_sweeps: int = 1000
    taut_threshold: float = DEFAULT_TAUT_THRESHOLD
    warm_start: bool = False
    velocity_tolerance: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("sweeps", "tolerance"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.sweeps < 1 or self.max_sweeps < 1:
            raise ValueError("sweep counts must be >= 1")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if not self.velocity_tolerance >= 0.0:
            raise ValueError("velocity tolerance must be >= 0")

    @classmethod
    def fixed(cls, sweeps: int, **kw) -> "SolverPolicy":
        return cls(mode="sweeps", sweeps=sweeps, **kw)

    @classmethod
    def converged(cls, tolerance: float = 1e-6, **kw) -> "SolverPolicy":
        return cls(mode="tolerance", tolerance=tolerance, **kw)


@dataclass
class SolveScratch:
    """Result of one tension or impulse solve (per-segment arrays)."""

    tensions: np.ndarray
    impulses: np.ndarray
    taut: np.ndarray
    sweeps: int = 0
    converged: bool = True
    complementarity: Optional[float] = None


@dataclass
class SegmentGeometry:
    dirs: np.ndarray
    lengths: np.ndarray
    degenerate: np.ndarray


def segment_geometry(chain: RopeChain, update_cache: bool = True) -> SegmentGeometry:
    """Unit directions and lengths of all segments.

    A segment shorter than 1e-12 m reuses its cached direction from the last
    call that saw it non-degenerate, or world-up if it never was.
    """
    d = chain.x[1:] - chain.x[:-1]
    lengths = np.sqrt(np.einsum("ij,ij->i", d, d))
    degenerate = lengths < DEGENERATE_LENGTH
    if not degenerate.any():
        dirs = d / lengths[:, None]
        if update_cache:
            chain.dir_cache[:] = dirs
        return SegmentGeometry(dirs, lengths, degenerate)
    dirs = np.empty_like(d)
    ok = ~degenerate
    dirs[ok] = d[ok] / lengths[ok, None]
    cached = chain.dir_cache[degenerate]
    missing = np.isnan(cached[:, 0])
    if np.any(missing):
        log.debug("degenerate segment without cached direction; using world-up")
        cached[missing] = WORLD_UP
    dirs[degenerate] = cached
    if update_cache:
        chain.dir_cache[ok] = dirs[ok]
    return SegmentGeometry(dirs, lengths, degenerate)


def segment_dir_len(chain: RopeChain, i: int) -> tuple[np.ndarray, float]:
    """``(l_hat_i, l_i)`` for segment ``i`` in ``1..m``."""
    if not 1 <= i <= chain.m:
        raise IndexError(f"segment index {i} outside 1..{chain.m}")
    d = chain.x[i] - chain.x[i - 1]
    length = float(np.linalg.norm(d))
    if length < DEGENERATE_LENGTH:
        cached = chain.dir_cache[i - 1]
        return (WORLD_UP.copy() if np.isnan(cached[0]) else cached.copy()), length
    direction = d / length
    chain.dir_cache[i - 1] = direction
    return direction, length


def taut_flags(chain: RopeChain, lengths: np.ndarray, threshold: float = DEFAULT_TAUT_THRESHOLD) -> np.ndarray:
    return lengths >= chain.l_max * threshold


def centripetal_magnitude(chain: RopeChain, i: int, direction: Optional[np.ndarray] = None) -> float:
    """Radial force keeping bones ``i - 1`` and ``i`` rotating about their center of mass.

    Uses the bone-``i`` form of the expression, which stays finite for the
    root segment where the center of mass sits on the infinitely heavy root.
    """
    if direction is None:
        direction, _ = segment_dir_len(chain, i)
    x_prev, x_i = chain.x[i - 1], chain.x[i]
    v_prev, v_i = chain.v[i - 1], chain.v[i]
    m_i = chain.mass[i]
    if i == 1:
        x_c, v_c = x_prev, v_prev
    else:
        m_prev = chain.mass[i - 1]
        total = m_prev + m_i
        x_c = (m_prev * x_prev + m_i * x_i) / total
        v_c = (m_prev * v_prev + m_i * v_i) / total
    rel = v_i - v_c
    tangential = rel - np.dot(rel, direction) * direction
    radius = float(np.linalg.norm(x_i - x_c))
    if radius < DEGENERATE_LENGTH:
        return 0.0
    return float(m_i * np.dot(tangential, tangential) / radius)


def _centripetal_all(chain: RopeChain, dirs: np.ndarray) -> np.ndarray:
    x, v, mass = chain.x, chain.v, chain.mass
    m_i = mass[1:]
    m_prev = mass[:-1].copy()
    x_c = np.empty_like(x[1:])
    v_c = np.empty_like(v[1:])
    x_c[0], v_c[0] = x[0], v[0]
    if chain.m > 1:
        mp, mi = m_prev[1:, None], m_i[1:, None]
        x_c[1:] = (mp * x[1:-1] + mi * x[2:]) / (mp + mi)
        v_c[1:] = (mp * v[1:-1] + mi * v[2:]) / (mp + mi)
    rel = v[1:] - v_c
    radial = np.einsum("ij,ij->i", rel, dirs)
    tangential = rel - radial[:, None] * dirs
    arm = x[1:] - x_c
    r = np.sqrt(np.einsum("ij,ij->i", arm, arm))
    speed2 = np.einsum("ij,ij->i", tangential, tangential)
    out = np.zeros(chain.m)
    ok = r >= DEGENERATE_LENGTH
    out[ok] = m_i[ok] * speed2[ok] / r[ok]
    return out


def _neighbour_dots(dirs: np.ndarray) -> np.ndarray:
    """``dots[k] = l_hat_{k+1} . l_hat_{k+2}`` for consecutive segments."""
    return np.einsum("ij,ij->i", dirs[:-1], dirs[1:])


def _gauss_seidel(const, lower, upper, active, order, initial, policy: SolverPolicy, residual_scale=None,
                  residual_tol: float = 0.0):
    """Projected Gauss-Seidel on ``y_k = max(0, const_k + lower_k y_{k-1} + upper_k y_{k+1})``.

    Inactive unknowns stay exactly zero.  In tolerance mode, when
    ``residual_scale`` is given, convergence additionally needs every
    ``|max(0, rhs_k) - y_k| * residual_scale_k`` at or below ``residual_tol``.
    """
    n = len(const)
    y = [float(initial[k]) if active[k] else 0.0 for k in range(n)]
    act = [bool(a) for a in active]
    limit = policy.sweeps if policy.mode == "sweeps" else policy.max_sweeps
    converged = policy.mode == "sweeps"
    sweeps = 0
    for sweeps in range(1, limit + 1):
        delta = 0.0
        for k in order:
            if not act[k]:
                continue
            rhs = const[k]
            if k > 0:
                rhs += lower[k] * y[k - 1]
            if k < n - 1:
                rhs += upper[k] * y[k + 1]
            new = rhs if rhs > 0.0 else 0.0
            change = abs(new - y[k])
            if change > delta:
                delta = change
            y[k] = new
        if policy.mode == "tolerance":
            scale = max(y) if y else 0.0
            if (delta <= policy.tolerance * scale or delta == 0.0) and (
                    residual_scale is None or _residual(const, lower, upper, act, y, residual_scale) <= residual_tol):
                converged = True
                break
    if not converged:
        log.warning("Gauss-Seidel hit the %d sweep cap without converging", limit)
    worst = max(0.0, -min(y)) if y else 0.0
    for k in range(n):
        if not act[k] and y[k] != 0.0:
            worst = max(worst, abs(y[k]))
    return np.array(y), sweeps, converged, worst


def _residual(const, lower, upper, act, y, scale) -> float:
    n = len(const)
    worst = 0.0
    for k in range(n):
        if not act[k]:
            continue
        rhs = const[k]
        if k > 0:
            rhs += lower[k] * y[k - 1]
        if k < n - 1:
            rhs += upper[k] * y[k + 1]
        r = abs((rhs if rhs > 0.0 else 0.0) - y[k]) * scale[k]
        if r > worst:
            worst = r
    return worst


def solve_tensions(chain: RopeChain, f_ext: np.ndarray, root_accel, policy: SolverPolicy,
                   geometry: Optional[SegmentGeometry] = None) -> SolveScratch:
    """Nonnegative tensions that preserve the rotation of every taut segment.

    ``f_ext`` has one row per bone (row 0, the root, is ignored).  Stores the
    result in ``chain.tensions`` as well.
    """
    geo = geometry if geometry is not None else segment_geometry(chain)
    m = chain.m
    dirs = geo.dirs
    taut = taut_flags(chain, geo.lengths, policy.taut_threshold)
    f_ext = np.asarray(f_ext, dtype=np.float64)
    root_accel = np.asarray(root_accel, dtype=np.float64)
    fc = _centripetal_all(chain, dirs)
    dots = _neighbour_dots(dirs)

    # F_ext,i . l_i and F_ext,i-1 . l_i for every segment
    f_own = np.einsum("ij,ij->i", f_ext[1:], dirs)
    f_parent = np.einsum("ij,ij->i", f_ext[:-1], dirs)

    const = np.empty(m)
    lower = np.zeros(m)
    upper = np.zeros(m)
    const[0] = f_own[0] + fc[0] - chain.mass[1] * float(np.dot(root_accel, dirs[0]))
    if m > 1:
        upper[0] = dots[0]
        const[1:] = 0.5 * (f_own[1:] - f_parent[1:]) + fc[1:]
        lower[1:] = 0.5 * dots
        upper[1:-1] = 0.5 * dots[1:]

    initial = chain.tensions if policy.warm_start else np.zeros(m)
    tensions, sweeps, converged, worst = _gauss_seidel(
        const.tolist(), lower.tolist(), upper.tolist(), taut, range(m - 1, -1, -1), initial, policy)
    chain.tensions = tensions
    return SolveScratch(tensions=tensions, impulses=np.zeros(m), taut=taut, sweeps=sweeps,
                        converged=converged, complementarity=worst)


def net_forces(chain: RopeChain, f_ext: np.ndarray, scratch: SolveScratch,
               geometry: Optional[SegmentGeometry] = None) -> np.ndarray:
    """External forces plus rope tensions; the root row is zero."""
    geo = geometry if geometry is not None else segment_geometry(chain, update_cache=False)
    pull = scratch.tensions[:, None] * geo.dirs
    out = np.array(f_ext, dtype=np.float64, copy=True)
    out[0] = 0.0
    out[1:] -= pull
    out[1:-1] += pull[1:]
    return out


def velocity_half_step(chain: RopeChain, f_net: np.ndarray, dt: float, root_velocity=None) -> None:
    """``v += dt/2 F/M`` for every non-kinematic bone; the root takes ``root_velocity``."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    chain.v[1:] += (0.5 * dt) * f_net[1:] / chain.mass[1:, None]
    if root_velocity is not None:
        chain.v[0] = root_velocity


def solve_impulses(chain: RopeChain, policy: SolverPolicy, apply: bool = True,
                   geometry: Optional[SegmentGeometry] = None) -> SolveScratch:
    """Nonnegative impulses removing separating velocity along taut segments.

    With ``apply`` the impulses are exchanged between the bones; the root's
    velocity is never changed.
    """
    geo = geometry if geometry is not None else segment_geometry(chain)
    m = chain.m
    dirs = geo.dirs
    taut = taut_flags(chain, geo.lengths, policy.taut_threshold)
    inv = chain.inv_mass
    dots = _neighbour_dots(dirs)

    reduced = 1.0 / (inv[:-1] + inv[1:])
    rel = np.einsum("ij,ij->i", chain.v[1:] - chain.v[:-1], dirs)
    const = reduced * rel
    lower = np.zeros(m)
    upper = np.zeros(m)
    if m > 1:
        lower[1:] = reduced[1:] * dots * inv[1:-1]
        upper[:-1] = reduced[:-1] * dots * inv[1:-1]

    initial = chain.impulses if policy.warm_start else np.zeros(m)
    # the residual of row k, divided by the reduced mass, is the separation speed it leaves behind
    impulses, sweeps, converged, worst = _gauss_seidel(
        const.tolist(), lower.tolist(), upper.tolist(), taut, range(m), initial, policy,
        (1.0 / reduced).tolist(), policy.velocity_tolerance)
    chain.impulses = impulses
    if apply:
        apply_impulses(chain, impulses, dirs)
    return SolveScratch(tensions=np.zeros(m), impulses=impulses, taut=taut, sweeps=sweeps,
                        converged=converged, complementarity=worst)


def apply_impulses(chain: RopeChain, impulses: np.ndarray, dirs: np.ndarray) -> None:
    push = impulses[:, None] * dirs
    dv = -push
    dv[:-1] += push[1:]
    chain.v[1:] += dv / chain.mass[1:, None]


def overstretch_rates(chain: RopeChain, geometry: Optional[SegmentGeometry] = None) -> np.ndarray:
    """``(v_i - v_{i-1}) . l_hat_i`` for every segment."""
    geo = geometry if geometry is not None else segment_geometry(chain, update_cache=False)
    return np.einsum("ij,ij->i", chain.v[1:] - chain.v[:-1], geo.dirs)


def complementarity_violation(scratch: SolveScratch) -> float:
    """Largest force/impulse carried by a slack segment, or negative entry."""
    if scratch.complementarity is not None:
        return scratch.complementarity
    worst = 0.0
    slack = ~scratch.taut
    has_slack = bool(slack.any())
    for arr in (scratch.tensions, scratch.impulses):
        if arr.size:
            worst = max(worst, -float(arr.min()))
            if has_slack:
                worst = max(worst, float(np.abs(arr[slack]).max()))
    return worst


def chain_length_violation(chain: RopeChain) -> float:
    """Largest ``l_i / l_max_i - 1`` (negative when everything is slack)."""
    lengths = np.linalg.norm(np.diff(chain.x, axis=0), axis=1)
    return float(np.max(lengths / chain.l_max) - 1.0)


def is_finite(chain: RopeChain) -> bool:
    return bool(np.all(np.isfinite(chain.x)) and np.all(np.isfinite(chain.v)))

