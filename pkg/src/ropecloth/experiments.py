"""Scaled experiments behind the command-line checks.

Each function returns a plain report object plus the rows the CLI writes as
CSV, and states the property it checks through an ``ok``/``passed`` method.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forces_kinematics import Gravity, KinematicDriver, LateralSpring, RelativeDamping, Wind
from .reference_cloth import LockingConfig, LockingReport, locking_experiment
from .rope_core import RopeChain, SolverPolicy
from .sdf_collision import (GRADIENT, HISTORY, AnalyticSdf, AttachedMotion, CollisionBody, CollisionPolicy,
                            KeyframedMotion, Sphere, resolve_particle)
from .sim_engine import Scene, run, single_driver_scene

G = 9.81


# -- pendulum ----------------------------------------------------------------------

def rk4_pendulum(theta0: float, length: float, g: float, dt: float, n_steps: int,
                 dt_oracle: float = 1e-5) -> np.ndarray:
    """Angles of ``theta'' = -(g/l) sin(theta)`` at ``dt, 2 dt, ...`` from rest at ``theta0``.

    Each output interval is split into ``ceil(dt / dt_oracle)`` equal RK4 steps.
    """
    sub = max(1, math.ceil(dt / dt_oracle - 1e-9))
    h = dt / sub
    w2 = g / length
    th, om = float(theta0), 0.0
    out = np.empty(n_steps)
    for k in range(n_steps):
        for _ in range(sub):
            a1 = -w2 * math.sin(th)
            th2, om2 = th + 0.5 * h * om, om + 0.5 * h * a1
            a2 = -w2 * math.sin(th2)
            th3, om3 = th + 0.5 * h * om2, om + 0.5 * h * a2
            a3 = -w2 * math.sin(th3)
            th4, om4 = th + h * om3, om + h * a3
            a4 = -w2 * math.sin(th4)
            th += h / 6.0 * (om + 2.0 * om2 + 2.0 * om3 + om4)
            om += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[k] = th
    return out


def measured_period(times: np.ndarray, angles: np.ndarray) -> float:
    """Mean spacing of upward zero crossings (linearly interpolated); nan if fewer than two."""
    a = np.asarray(angles)
    idx = np.flatnonzero((a[:-1] < 0.0) & (a[1:] >= 0.0))
    if idx.size < 2:
        return math.nan
    t = times[idx] + (times[idx + 1] - times[idx]) * (-a[idx] / (a[idx + 1] - a[idx]))
    return float(np.mean(np.diff(t)))


@dataclass
class PendulumReport:
    theta0: float
    length: float
    dt: float
    periods: float
    times: np.ndarray
    angles: np.ndarray
    oracle: np.ndarray
    energies: np.ndarray
    runtime: float
    max_error: float  # fraction of the release amplitude
    energy_drift: float  # worst per-period energy range over the swing energy
    period: float
    analytic_period: float

    error_tolerance: float = 0.02
    drift_tolerance: float = 0.01

    def passed(self) -> bool:
        return self.max_error < self.error_tolerance and self.energy_drift < self.drift_tolerance

    def rows(self) -> list:
        return [[f"{t!r}", f"{a!r}", f"{o!r}", f"{e!r}"]
                for t, a, o, e in zip(self.times, self.angles, self.oracle, self.energies)]


PENDULUM_HEADER = ["t", "angle", "oracle_angle", "energy"]


def pendulum_verify(dt: float = 1.0 / 600.0, periods: float = 5.0, theta0_deg: float = 30.0,
                    length: float = 1.0, mass: float = 1.0, g: float = G,
                    solver: Optional[SolverPolicy] = None, dt_oracle: float = 1e-5) -> PendulumReport:
    """Single rope pendulum released from rest against the RK4 oracle."""
    th0 = math.radians(theta0_deg)
    chain = RopeChain.from_positions([[0.0, 0.0, 0.0], [length * math.sin(th0), -length * math.cos(th0), 0.0]],
                                     mass=mass)
    scene = single_driver_scene([chain], KinematicDriver.fixed([0.0, 0.0, 0.0]), dt,
                                forces=[Gravity((0.0, -g, 0.0))], solver=solver or SolverPolicy.converged(1e-6))
    analytic = 2.0 * math.pi * math.sqrt(length / g)
    n = int(round(periods * analytic / dt))
    start = time.perf_counter()
    recs = run(scene, n)
    runtime = time.perf_counter() - start
    times = dt * np.arange(1, n + 1)
    angles = np.array([math.atan2(r.positions[0][1][0], -r.positions[0][1][1]) for r in recs])
    energies = np.array([r.energy for r in recs])
    oracle = rk4_pendulum(th0, length, g, dt, n, dt_oracle)
    amplitude = abs(th0) if th0 != 0.0 else 1.0
    err = float(np.max(np.abs(angles - oracle))) / amplitude if n else 0.0
    # energy of the swing itself; the full pendulum energy would hide drift behind m g l
    swing = mass * g * length * (1.0 - math.cos(th0)) if th0 != 0.0 else mass * g * length
    drift = 0.0
    per = analytic / dt
    e_all = np.concatenate([[-mass * g * length * math.cos(th0)], energies])
    for k in range(int(math.ceil(periods))):
        seg = e_all[int(k * per): int(min((k + 1) * per, n)) + 1]
        if seg.size:
            drift = max(drift, float(seg.max() - seg.min()) / swing)
    return PendulumReport(th0, length, dt, periods, times, angles, oracle, energies, runtime, err, drift,
                          measured_period(times, angles), analytic)


# -- Gauss-Seidel iterations study ---------------------------------------------------

def policy_from_label(label) -> SolverPolicy:
    """``"tol"`` (or ``"tol:1e-6"``) for tolerance mode, otherwise a positive sweep count."""
    s = str(label).strip().lower()
    if s.startswith("tol"):
        _, _, tol = s.partition(":")
        return SolverPolicy.converged(float(tol) if tol else 1e-6)
    n = int(s)
    if n < 1:
        raise ValueError("sweep counts must be >= 1")
    return SolverPolicy.fixed(n)


def equivalent_amplitude(chain: RopeChain, energy: float, g: float = G) -> float:
    """Angle (rad) at which the straight chain, held at rest, has mechanical energy ``energy``.

    Energy is measured with the root as the zero of height.  The result is a
    monotone function of the energy, so it reads like a swing amplitude
    without being thrown off by the chain's irregular (non-periodic) motion.
    """
    m = chain.mass[1:]
    arm = np.cumsum(chain.l_max)
    c = -energy / (g * float(np.sum(m * arm)))
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass
class IterationRow:
    label: str
    amplitude_deg: float
    energy: float


@dataclass
class IterationsReport:
    rows: list

    def non_decreasing(self) -> bool:
        a = [r.amplitude_deg for r in self.rows]
        return all(a[k] <= a[k + 1] for k in range(len(a) - 1))

    def strict_first_last(self) -> bool:
        return len(self.rows) < 2 or self.rows[0].amplitude_deg < self.rows[-1].amplitude_deg


ITERATIONS_HEADER = ["policy", "amplitude_deg", "energy"]


def iterations_study(labels: Sequence = (1, 5, 10, "tol"), bones: int = 8, length: float = 1.0,
                     bone_mass: float = 0.1, dt: float = 1.0 / 600.0, duration: float = 3.0) -> IterationsReport:
    """Chain released from horizontal; amplitude after ``duration`` for each solver policy."""
    if len(labels) == 0:
        raise ValueError("need at least one solver policy")
    rows = []
    for label in labels:
        policy = policy_from_label(label)
        pts = [[i * length / bones, 0.0, 0.0] for i in range(bones + 1)]
        chain = RopeChain.from_positions(pts, mass=bone_mass)
        scene = single_driver_scene([chain], KinematicDriver.fixed([0.0, 0.0, 0.0]), dt,
                                    forces=[Gravity((0.0, -G, 0.0))], solver=policy)
        rec = run(scene, int(round(duration / dt)))[-1]
        amp = math.degrees(equivalent_amplitude(chain, rec.energy))
        rows.append(IterationRow(str(label), amp, rec.energy))
    return IterationsReport(rows)


# -- push-out comparison -------------------------------------------------------------

@dataclass
class CollisionDemoReport:
    policy: str
    times: np.ndarray
    angles: np.ndarray  # (steps, particles) degrees off the motion axis, seen from the sphere center
    contact: np.ndarray  # (steps, particles) bool

    history_cone: float = 60.0
    slip_angle: float = 90.0

    def max_angles(self) -> np.ndarray:
        masked = np.where(self.contact.cumsum(axis=0) > 0, self.angles, -np.inf)
        return masked.max(axis=0)

    def passed(self) -> bool:
        worst = self.max_angles()
        if self.policy == HISTORY:
            return bool(np.all(worst <= self.history_cone))
        return bool(np.all(worst > self.slip_angle))

    def rows(self) -> list:
        out = []
        for k, t in enumerate(self.times):
            for p in range(self.angles.shape[1]):
                out.append([k, f"{t!r}", p, f"{self.angles[k, p]!r}", int(self.contact[k, p])])
        return out


COLLISION_HEADER = ["step", "t", "particle", "angle_deg", "in_contact"]


def demo_particles(n: int = 6, ahead: float = 1.0, radius: float = 0.5) -> np.ndarray:
    """Particles in front of the sphere, spread around the motion axis at growing offsets."""
    pts = []
    for k in range(n):
        rho = radius * (0.3 + 0.45 * k / max(n - 1, 1))
        az = 2.0 * math.pi * k / n
        pts.append([ahead, rho * math.cos(az), rho * math.sin(az)])
    return np.array(pts)


def collision_demo(policy: str = HISTORY, particles: int = 6, radius: float = 0.5, speed: float = 1.0,
                   distance: float = 8.0, dt: float = 1.0 / 120.0, epsilon: float = 1e-3,
                   friction: float = 0.0) -> CollisionDemoReport:
    """A sphere moving along +x through free particles at rest; records each particle's angle off-axis."""
    if policy not in (HISTORY, GRADIENT):
        raise ValueError(f"policy must be {HISTORY!r} or {GRADIENT!r}")
    duration = distance / speed
    body = CollisionBody(AnalyticSdf((Sphere((0.0, 0.0, 0.0), radius),)),
                         KeyframedMotion([0.0, duration], [[0.0, 0.0, 0.0], [distance, 0.0, 0.0]]))
    pol = CollisionPolicy(pushout_direction=policy, projection_normal=policy, epsilon=epsilon, friction=friction)
    x = demo_particles(particles, ahead=radius + 0.5, radius=radius)
    v = np.zeros_like(x)
    n = int(round(duration / dt))
    times = dt * np.arange(1, n + 1)
    angles = np.empty((n, particles))
    contact = np.zeros((n, particles), dtype=bool)
    axis = np.array([1.0, 0.0, 0.0])
    for k in range(n):
        bs = body.step(k * dt, (k + 1) * dt)
        for p in range(particles):
            res = resolve_particle(x[p], x[p] + dt * v[p], v[p], bs, pol)
            x[p], v[p] = res.x, res.v
            contact[k, p] = res.collided
        rel = x - bs.c1
        cosang = rel @ axis / np.linalg.norm(rel, axis=1)
        angles[k] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return CollisionDemoReport(policy, times, angles, contact)


# -- locking ---------------------------------------------------------------------------

FLAG_HEADER = ["model", "stiffness", "vertical_extent"]


def flag_compare(stiffness: Sequence[float], cfg: Optional[LockingConfig] = None) -> LockingReport:
    return locking_experiment(list(stiffness), cfg)


def flag_rows(report: LockingReport) -> list:
    rows = [["mass_spring", f"{k!r}", f"{e!r}"] for k, e in zip(report.stiffness, report.spring_extent)]
    rows.append(["rope_chain", "", f"{report.rope_extent!r}"])
    rows.append(["rope_length", "", f"{report.rope_length!r}"])
    return rows


def flag_passed(report: LockingReport) -> bool:
    ok = report.monotone() and report.rope_extent <= report.rope_length * (1.0 + 1e-9)
    if len(set(report.stiffness)) > 1:
        ok = ok and report.ordering_holds()
    return ok


# -- rope-chain analogue of the dataset scene --------------------------------------------

@dataclass
class DeskRopeConfig:
    """Rope-chain stand-in for the cloth patch used to drive inference."""

    total_mass: float = 0.2
    drag: float = 0.02  # wind-drag coefficient per bone (N s/m)
    relative_damping: float = 0.01
    lateral_stiffness: float = 2.0  # N/m between same-row bones of neighbouring chains; 0 disables
    solver: SolverPolicy = field(default_factory=lambda: SolverPolicy.fixed(10))
    rotate_velocity: str = "root"


def desk_rope_scene(rest_bones: np.ndarray, chain_sizes: Sequence[int], driver: KinematicDriver,
                    sdf: AnalyticSdf, dt: float, frames: int, epsilon: float = 1e-3,
                    cfg: Optional[DeskRopeConfig] = None) -> Scene:
    """Chains through the dataset's rest bones (chain-major, root first), rooted on the driver.

    The collision body follows the driver like the cloth's.  Maximal lengths
    are the rest distances between consecutive bones.
    """
    cfg = cfg or DeskRopeConfig()
    bones = np.asarray(rest_bones, dtype=np.float64)
    n_free = sum(n - 1 for n in chain_sizes)
    chains, start = [], 0
    for n in chain_sizes:
        chains.append(RopeChain.from_positions(bones[start:start + n], mass=cfg.total_mass / n_free))
        start += n
    forces = [Gravity(), Wind(cfg.drag), RelativeDamping(cfg.relative_damping)]
    if cfg.lateral_stiffness > 0.0:
        for c in range(len(chains) - 1):
            for b in range(1, min(chain_sizes[c], chain_sizes[c + 1])):
                rest = float(np.linalg.norm(chains[c + 1].x[b] - chains[c].x[b]))
                forces.append(LateralSpring((c, b), (c + 1, b), cfg.lateral_stiffness, rest))
    body = CollisionBody(sdf, AttachedMotion(driver))
    return Scene(chains=chains, drivers=[driver], chain_drivers=[0] * len(chains), dt=dt, frames=frames,
                 bodies=[body], forces=forces, solver=cfg.solver,
                 collision=CollisionPolicy(epsilon=epsilon), rotate_velocity=cfg.rotate_velocity)
