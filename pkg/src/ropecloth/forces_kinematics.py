"""External forces on virtual bones and the scripted kinematic root drivers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline


class KinematicDriver:
    """Root path through keyframed positions.

    Interpolation is a not-a-knot cubic spline (so paths that are polynomials
    of degree <= 3 are reproduced exactly); two keys give a straight line and a
    single key a fixed point.  Times outside the keys are clamped.
    """

    def __init__(self, times, positions):
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if self.times.size == 0 or self.times.size != self.positions.shape[0]:
            raise ValueError("driver needs one position per key time")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("driver key times must be strictly increasing")
        self._spline = CubicSpline(self.times, self.positions, axis=0) if self.times.size > 1 else None

    @classmethod
    def fixed(cls, position) -> "KinematicDriver":
        return cls([0.0], [position])

    @classmethod
    def from_function(cls, fn, t0: float, t1: float, n_keys: int) -> "KinematicDriver":
        ts = np.linspace(t0, t1, n_keys)
        return cls(ts, np.array([fn(t) for t in ts]))

    def position(self, t: float) -> np.ndarray:
        if self._spline is None:
            return self.positions[0].copy()
        tc = min(max(float(t), self.times[0]), self.times[-1])
        return np.asarray(self._spline(tc), dtype=np.float64)

    def sample(self, t: float, dt: float):
        """``(x, v, a)`` at ``t`` by central differences.

        The velocity stencil spans ``[t - dt/2, t + dt/2]`` so that the
        half-step velocity equals the root's displacement over the step; the
        acceleration uses ``t - dt, t, t + dt``.
        """
        x = self.position(t)
        if self._spline is None:
            return x, np.zeros(3), np.zeros(3)
        v = (self.position(t + 0.5 * dt) - self.position(t - 0.5 * dt)) / dt
        a = (self.position(t + dt) - 2.0 * x + self.position(t - dt)) / (dt * dt)
        return x, v, a


def sample_driver(driver: KinematicDriver, t: float, dt: float):
    return driver.sample(t, dt)


@dataclass(frozen=True)
class Gravity:
    g: tuple = (0.0, -9.81, 0.0)
    chains: Optional[tuple] = None


@dataclass(frozen=True)
class Wind:
    coefficient: float
    velocity: tuple = (0.0, 0.0, 0.0)
    chains: Optional[tuple] = None


@dataclass(frozen=True)
class LateralSpring:
    """Hookean spring between bone ``a = (chain, bone)`` and bone ``b``."""

    a: tuple
    b: tuple
    stiffness: float
    rest_length: float


@dataclass(frozen=True)
class RelativeDamping:
    """Force ``-c (v_i - v_parent)`` on bone ``i`` only; the parent feels no reaction."""

    coefficient: float
    chains: Optional[tuple] = None


@dataclass(frozen=True)
class RestAngle:
    """Placeholder for rest-angle preserving forces; no formula is defined for them yet."""

    stiffness: float = 0.0


class ForceConfigError(ValueError):
    pass


def validate_force_specs(specs: Sequence, chain_sizes: Sequence[int]) -> None:
    """Raise :class:`ForceConfigError` for bad coefficients or unknown bones."""
    n_chains = len(chain_sizes)

    def check_bone(ref, what):
        c, b = ref
        if not (0 <= c < n_chains and 1 <= b < chain_sizes[c]):
            raise ForceConfigError(f"{what} refers to nonexistent bone {tuple(ref)}")

    for spec in specs:
        if isinstance(spec, RestAngle):
            raise ForceConfigError("rest-angle forces are not implemented")
        chains = getattr(spec, "chains", None)
        if chains is not None and any(not 0 <= c < n_chains for c in chains):
            raise ForceConfigError(f"force refers to a nonexistent chain in {chains}")
        if isinstance(spec, Wind) and spec.coefficient < 0.0:
            raise ForceConfigError("wind coefficient must be >= 0")
        if isinstance(spec, RelativeDamping) and spec.coefficient < 0.0:
            raise ForceConfigError("damping coefficient must be >= 0")
        if isinstance(spec, LateralSpring):
            if spec.stiffness < 0.0 or spec.rest_length < 0.0:
                raise ForceConfigError("spring stiffness and rest length must be >= 0")
            check_bone(spec.a, "lateral spring")
            check_bone(spec.b, "lateral spring")


def eval_external_forces(chains: Sequence, specs: Sequence, t: float = 0.0) -> list:
    """Per-chain ``(m + 1, 3)`` force arrays; root rows are always zero.

    ``t`` is accepted for time-dependent forces; the current variants do not
    depend on it.
    """
    forces = [np.zeros_like(ch.x) for ch in chains]
    for spec in specs:
        if isinstance(spec, Gravity):
            g = np.asarray(spec.g, dtype=np.float64)
            for c in _targets(spec, chains):
                forces[c][1:] += chains[c].mass[1:, None] * g
        elif isinstance(spec, Wind):
            wv = np.asarray(spec.velocity, dtype=np.float64)
            for c in _targets(spec, chains):
                forces[c][1:] -= spec.coefficient * (chains[c].v[1:] - wv)
        elif isinstance(spec, RelativeDamping):
            for c in _targets(spec, chains):
                v = chains[c].v
                forces[c][1:] -= spec.coefficient * (v[1:] - v[:-1])
        elif isinstance(spec, LateralSpring):
            (ca, ba), (cb, bb) = spec.a, spec.b
            d = chains[cb].x[bb] - chains[ca].x[ba]
            length = float(np.linalg.norm(d))
            if length > 0.0:
                f = spec.stiffness * (length - spec.rest_length) * (d / length)
                forces[ca][ba] += f
                forces[cb][bb] -= f
        elif isinstance(spec, RestAngle):
            raise NotImplementedError("rest-angle forces are not implemented")
        else:
            raise TypeError(f"unknown force spec {spec!r}")
    for f in forces:
        f[0] = 0.0
    return forces


def _targets(spec, chains):
    return range(len(chains)) if spec.chains is None else spec.chains


def total_gravity(specs: Sequence) -> np.ndarray:
    """Sum of gravity accelerations applied to every chain (for energy bookkeeping)."""
    g = np.zeros(3)
    for spec in specs:
        if isinstance(spec, Gravity) and spec.chains is None:
            g += np.asarray(spec.g, dtype=np.float64)
    return g
