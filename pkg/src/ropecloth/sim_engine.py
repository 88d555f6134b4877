"""Four-stage central-differencing loop over all rope chains of a scene.

Per step: (1) tensions and the first velocity half-step, then impulses;
(2) the root-to-tip position sweep, then impulses; (3) the collision and
length sweep, then impulses; (4) tensions at the new positions, the second
half-step, then impulses.  Chains are advanced one after another inside each
stage, so results are bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rope_core as rc
from .forces_kinematics import KinematicDriver, eval_external_forces, total_gravity, validate_force_specs
from .position_update import advance_positions
from .sdf_collision import CollisionBody, CollisionPolicy, collide_chain

LENGTH_TOL = 1e-9
PHI_TOL = 1e-9


class SceneError(ValueError):
    """Invalid scene, reported before any frame is simulated."""


@dataclass
class Scene:
    chains: list
    drivers: list
    chain_drivers: list
    dt: float
    frames: int = 0
    bodies: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    solver: rc.SolverPolicy = field(default_factory=rc.SolverPolicy)
    collision: CollisionPolicy = field(default_factory=CollisionPolicy)
    t0: float = 0.0
    root_offsets: Optional[list] = None
    rotate_velocity: str = "root"

    def __post_init__(self):
        if self.root_offsets is None:
            self.root_offsets = [ch.x[0] - self.drivers[d].position(self.t0)
                                 for ch, d in zip(self.chains, self.chain_drivers)]

    def validate(self) -> None:
        if not self.dt > 0.0:
            raise SceneError("dt must be positive")
        if self.frames < 0:
            raise SceneError("frame count must be >= 0")
        if self.rotate_velocity not in ("none", "root", "all"):
            raise SceneError(f"unknown rotate_velocity {self.rotate_velocity!r}")
        if len(self.chain_drivers) != len(self.chains):
            raise SceneError("every chain root must be bound to a driver")
        for d in self.chain_drivers:
            if not 0 <= d < len(self.drivers):
                raise SceneError(f"chain bound to nonexistent driver {d}")
        try:
            validate_force_specs(self.forces, [ch.x.shape[0] for ch in self.chains])
        except ValueError as exc:
            raise SceneError(str(exc)) from exc

    def epsilon(self) -> float:
        """Collision offset: the policy's, or 1e-3 of the bones' bounding-box diagonal."""
        if self.collision.epsilon is not None:
            return float(self.collision.epsilon)
        pts = np.concatenate([ch.x for ch in self.chains])
        return 1e-3 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def root_position(self, c: int, t: float) -> np.ndarray:
        return self.drivers[self.chain_drivers[c]].position(t) + self.root_offsets[c]


@dataclass
class SimState:
    t: float
    chains: list
    frame: int = 0


@dataclass
class StepDiagnostics:
    max_complementarity: float = 0.0
    nonconverged: int = 0
    history_fallbacks: int = 0
    unresolved_length: int = 0
    min_phi_after_collision: float = math.inf
    min_normal_velocity: float = math.inf

    def absorb(self, scratch: rc.SolveScratch) -> None:
        self.max_complementarity = max(self.max_complementarity, rc.complementarity_violation(scratch))
        self.nonconverged += int(not scratch.converged)


@dataclass
class FrameRecord:
    frame: int
    t: float
    positions: list
    velocities: list
    tensions: list
    impulses: list
    phi: list
    energy: float
    max_phi_violation: float
    max_length_violation: float
    max_overstretch_rate: float
    diagnostics: StepDiagnostics


def initial_state(scene: Scene) -> SimState:
    chains = [ch.copy() for ch in scene.chains]
    for c, ch in enumerate(chains):
        drv = scene.drivers[scene.chain_drivers[c]]
        ch.x[0] = scene.root_position(c, scene.t0)
        ch.v[0] = drv.sample(scene.t0, scene.dt)[1]
    return SimState(scene.t0, chains, 0)


def _tension_half_step(scene, chains, forces, t, root_v, diag, policy):
    for c, ch in enumerate(chains):
        drv = scene.drivers[scene.chain_drivers[c]]
        a0 = drv.sample(t, scene.dt)[2]
        geo = rc.segment_geometry(ch)
        scratch = rc.solve_tensions(ch, forces[c], a0, policy, geo)
        diag.absorb(scratch)
        f_net = rc.net_forces(ch, forces[c], scratch, geo)
        rc.velocity_half_step(ch, f_net, scene.dt, root_velocity=root_v[c])
        # positions are unchanged, so the geometry is still valid
        diag.absorb(rc.solve_impulses(ch, policy, geometry=geo))


def step(scene: Scene, state: SimState, body_policy: Optional[CollisionPolicy] = None) -> StepDiagnostics:
    """Advance ``state`` by one time step in place."""
    dt = scene.dt
    t0, t1 = state.t, state.t + dt
    chains = state.chains
    policy = scene.solver
    coll = body_policy or scene.collision
    if coll.epsilon is None:
        coll = CollisionPolicy(**{**coll.__dict__, "epsilon": scene.epsilon()})
    diag = StepDiagnostics()

    # (1) tensions at x^n, v^n; first half step; impulses
    forces = eval_external_forces(chains, scene.forces, t0)
    half_v = [(scene.root_position(c, t1) - scene.root_position(c, t0)) / dt for c in range(len(chains))]
    _tension_half_step(scene, chains, forces, t0, half_v, diag, policy)

    # (2) positions, root first
    x_prev = [ch.x.copy() for ch in chains]
    for c, ch in enumerate(chains):
        ch.x[0] = scene.root_position(c, t1)
        advance_positions(ch, dt, scene.rotate_velocity)
        diag.absorb(rc.solve_impulses(ch, policy))

    # (3) collisions and lengths, then impulses
    if scene.bodies:
        steps = [b.step(t0, t1) for b in scene.bodies]
        for c, ch in enumerate(chains):
            report = collide_chain(ch, x_prev[c], steps, coll)
            diag.history_fallbacks += report.history_fallbacks
            diag.unresolved_length += report.unresolved_length
            diag.min_normal_velocity = min(diag.min_normal_velocity, report.min_normal_velocity)
            for bs in steps:
                phi, _ = bs.phi_grad(ch.x[1:])
                diag.min_phi_after_collision = min(diag.min_phi_after_collision, float(np.min(phi)))
            diag.absorb(rc.solve_impulses(ch, policy))

    # (4) tensions at x^{n+1}, v^{n+1/2}; second half step; impulses
    forces = eval_external_forces(chains, scene.forces, t1)
    end_v = [scene.drivers[scene.chain_drivers[c]].sample(t1, dt)[1] for c in range(len(chains))]
    _tension_half_step(scene, chains, forces, t1, end_v, diag, policy)

    state.t = t1
    state.frame += 1
    return diag


def mechanical_energy(chains: Sequence, g) -> float:
    """Kinetic plus gravitational potential energy of all non-kinematic bones."""
    g = np.asarray(g, dtype=np.float64)
    total = 0.0
    for ch in chains:
        m = ch.mass[1:]
        total += float(0.5 * np.sum(m * np.einsum("ij,ij->i", ch.v[1:], ch.v[1:])))
        total -= float(np.sum(m * (ch.x[1:] @ g)))
    return total


def _record(scene: Scene, state: SimState, diag: StepDiagnostics) -> FrameRecord:
    chains = state.chains
    bodies = [b for b in scene.bodies]
    phis = []
    worst_phi = 0.0
    for ch in chains:
        if bodies:
            vals = np.min(np.stack([b.phi_grad_at(ch.x, state.t)[0] for b in bodies]), axis=0)
            worst_phi = min(worst_phi, float(np.min(vals[1:])))
        else:
            vals = np.full(ch.x.shape[0], math.inf)
        phis.append(vals)
    length_violation = -1.0
    overstretch = -math.inf
    for ch in chains:
        geo = rc.segment_geometry(ch, update_cache=False)
        length_violation = max(length_violation, float(np.max(geo.lengths / ch.l_max)) - 1.0)
        taut = rc.taut_flags(ch, geo.lengths, scene.solver.taut_threshold)
        if np.any(taut):
            overstretch = max(overstretch, float(np.max(rc.overstretch_rates(ch, geo)[taut])))
    return FrameRecord(
        frame=state.frame,
        t=state.t,
        positions=[ch.x.copy() for ch in chains],
        velocities=[ch.v.copy() for ch in chains],
        tensions=[ch.tensions.copy() for ch in chains],
        impulses=[ch.impulses.copy() for ch in chains],
        phi=phis,
        energy=mechanical_energy(chains, total_gravity(scene.forces)),
        max_phi_violation=-worst_phi,
        max_length_violation=length_violation,
        max_overstretch_rate=overstretch,
        diagnostics=diag,
    )


def run(scene: Scene, frames: Optional[int] = None, callback=None) -> list:
    """Simulate ``frames`` steps (default ``scene.frames``) and return one record per step."""
    scene.validate()
    n = scene.frames if frames is None else frames
    state = initial_state(scene)
    records = []
    for _ in range(n):
        diag = step(scene, state)
        rec = _record(scene, state, diag)
        records.append(rec)
        if callback is not None:
            callback(state, rec)
    return records


def invariant_violations(rec: FrameRecord, length_tol: float = LENGTH_TOL, phi_tol: float = PHI_TOL) -> list:
    """Human-readable list of broken per-frame invariants (empty when all hold)."""
    problems = []
    if rec.max_length_violation > length_tol:
        problems.append(f"frame {rec.frame}: segment overstretched by {rec.max_length_violation:.3e}")
    if rec.max_phi_violation > phi_tol:
        problems.append(f"frame {rec.frame}: bone inside a body by {rec.max_phi_violation:.3e} m")
    if rec.diagnostics.min_normal_velocity < -phi_tol:
        problems.append(f"frame {rec.frame}: bone moving into a body at {-rec.diagnostics.min_normal_velocity:.3e} m/s")
    if rec.diagnostics.max_complementarity > 0.0:
        problems.append(f"frame {rec.frame}: slack segment carries force/impulse")
    for arr in rec.positions + rec.velocities:
        if not np.all(np.isfinite(arr)):
            problems.append(f"frame {rec.frame}: non-finite state")
            break
    return problems


CSV_HEADER = ["frame", "chain", "bone", "x", "y", "z", "vx", "vy", "vz", "tension_above", "impulse_above", "phi"]


def _fmt(v: float) -> str:
    return repr(float(v))


def write_frames_csv(records: Sequence[FrameRecord], path) -> None:
    """One row per bone per frame; floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in records:
            for c, x in enumerate(rec.positions):
                v = rec.velocities[c]
                for b in range(x.shape[0]):
                    ten = rec.tensions[c][b - 1] if b > 0 else 0.0
                    imp = rec.impulses[c][b - 1] if b > 0 else 0.0
                    w.writerow([rec.frame, c, b, *map(_fmt, x[b]), *map(_fmt, v[b]),
                                _fmt(ten), _fmt(imp), _fmt(rec.phi[c][b])])


def read_frames_csv(path) -> dict:
    """Parse a frame CSV into ``{column: list}`` with ints/floats restored."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a frame CSV (bad header)")
    cols = {name: [] for name in CSV_HEADER}
    for row in rows[1:]:
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"{path}: malformed row {row!r}")
        for name, val in zip(CSV_HEADER, row):
            cols[name].append(int(val) if name in ("frame", "chain", "bone") else float(val))
    return cols


def write_rows_csv(cols: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(cols["frame"])):
            w.writerow([cols[n][i] if n in ("frame", "chain", "bone") else _fmt(cols[n][i]) for n in CSV_HEADER])


def bone_positions_from_csv(cols: dict):
    """``(frames, positions)`` with positions shaped ``(F, total_bones, 3)`` in chain-major order."""
    frames = sorted(set(cols["frame"]))
    index = {f: k for k, f in enumerate(frames)}
    keys = sorted(set(zip(cols["chain"], cols["bone"])))
    slot = {k: j for j, k in enumerate(keys)}
    out = np.zeros((len(frames), len(keys), 3))
    for i in range(len(cols["frame"])):
        out[index[cols["frame"][i]], slot[(cols["chain"][i], cols["bone"][i])]] = (
            cols["x"][i], cols["y"][i], cols["z"][i])
    return frames, keys, out


def single_driver_scene(chains, driver: KinematicDriver, dt: float, **kw) -> Scene:
    return Scene(chains=list(chains), drivers=[driver], chain_drivers=[0] * len(chains), dt=dt, **kw)


__all__ = ["Scene", "SceneError", "SimState", "FrameRecord", "StepDiagnostics", "initial_state", "step", "run",
           "mechanical_energy", "invariant_violations", "write_frames_csv", "read_frames_csv", "write_rows_csv",
           "bone_positions_from_csv", "single_driver_scene", "CollisionBody"]
