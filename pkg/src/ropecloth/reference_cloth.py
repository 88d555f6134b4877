"""Small mass-spring cloth used as ground truth and as the locking baseline.

The integrator is the same central-differencing scheme as the rope engine
(half-step, position step, collisions, half-step) with Hookean springs plus
spring-axis damping.  Collisions use the conventional gradient push out.
Explicit springs are only conditionally stable, so each requested step is
split into enough substeps to stay below the critical step size.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

from . import rcf
from .forces_kinematics import Gravity, KinematicDriver, RelativeDamping, Wind
from .rope_core import RopeChain, SolverPolicy
from .sdf_collision import AnalyticSdf, AttachedMotion, CollisionBody, Sphere, resolve_points_gradient
from .sim_engine import Scene, run

GRAVITY = np.array([0.0, -9.81, 0.0])
STABILITY_SAFETY = 0.4


@dataclass
class SpringMesh:
    x: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    springs: np.ndarray  # (S, 2) vertex indices
    stiffness: np.ndarray
    rest: np.ndarray
    damping: np.ndarray
    pinned: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    uv: Optional[np.ndarray] = None

    def __post_init__(self):
        self.springs = np.asarray(self.springs, dtype=np.int64).reshape(-1, 2)
        s = self.springs.shape[0]
        self.stiffness = np.broadcast_to(np.asarray(self.stiffness, dtype=np.float64), (s,)).copy()
        self.rest = np.asarray(self.rest, dtype=np.float64).reshape(s)
        self.damping = np.broadcast_to(np.asarray(self.damping, dtype=np.float64), (s,)).copy()
        self.pinned = np.asarray(self.pinned, dtype=np.int64).reshape(-1)
        if np.any(self.rest <= 0.0):
            raise ValueError("spring rest lengths must be positive")
        self.pin_rest = self.x[self.pinned].copy()
        n, s_idx = self.x.shape[0], np.arange(s)
        # signed incidence: row v sums +f over springs starting at v and -f over springs ending there
        self.incidence = sparse.csr_matrix(
            (np.concatenate([np.ones(s), -np.ones(s)]),
             (np.concatenate([self.springs[:, 0], self.springs[:, 1]]), np.concatenate([s_idx, s_idx]))),
            shape=(n, s))
        self.difference = (-self.incidence.T).tocsr()  # row s gives x[j] - x[i]

    def copy(self) -> "SpringMesh":
        out = SpringMesh(self.x.copy(), self.v.copy(), self.mass.copy(), self.springs, self.stiffness,
                         self.rest, self.damping, self.pinned, self.faces, self.uv)
        out.pin_rest = self.pin_rest.copy()
        return out


def spring_forces(mesh: SpringMesh, x: Optional[np.ndarray] = None, v: Optional[np.ndarray] = None) -> np.ndarray:
    """Hookean plus axial damping forces, equal and opposite per spring."""
    x = mesh.x if x is None else x
    v = mesh.v if v is None else v
    d = mesh.difference @ x
    length = np.sqrt(np.einsum("ij,ij->i", d, d))
    u = d / np.maximum(length, 1e-15)[:, None]
    rate = np.einsum("ij,ij->i", mesh.difference @ v, u)
    mag = mesh.stiffness * (length - mesh.rest) + mesh.damping * rate
    return mesh.incidence @ (mag[:, None] * u)


def stable_substeps(mesh: SpringMesh, dt: float) -> int:
    """Substeps keeping the explicit update below its critical step (Gershgorin bound)."""
    load = np.zeros(mesh.x.shape[0])
    np.add.at(load, mesh.springs[:, 0], mesh.stiffness)
    np.add.at(load, mesh.springs[:, 1], mesh.stiffness)
    omega2 = float(np.max(2.0 * load / mesh.mass)) if load.size else 0.0
    if omega2 <= 0.0:
        return 1
    h_max = STABILITY_SAFETY * 2.0 / math.sqrt(omega2)
    return max(1, math.ceil(dt / h_max))


PinPath = Callable[[float], np.ndarray]


def step_mass_spring(mesh: SpringMesh, dt: float, t: float = 0.0, gravity=GRAVITY, drag: float = 0.0,
                     bodies: Sequence[CollisionBody] = (), eps: float = 0.0,
                     pin_offset: Optional[PinPath] = None, substeps: Optional[int] = None) -> None:
    """Advance ``mesh`` from ``t`` to ``t + dt`` in place.

    ``pin_offset(t)`` translates the pinned vertices away from their rest
    positions; ``drag`` is a linear velocity damping coefficient (N s/m).
    """
    n_sub = stable_substeps(mesh, dt) if substeps is None else substeps
    h = dt / n_sub
    g = np.asarray(gravity, dtype=np.float64)
    inv_m = 1.0 / mesh.mass[:, None]
    offset = (lambda s: np.zeros(3)) if pin_offset is None else pin_offset

    def accel(x, v):
        return (spring_forces(mesh, x, v) - drag * v) * inv_m + g

    free = np.ones(mesh.x.shape[0], dtype=bool)
    free[mesh.pinned] = False
    for k in range(n_sub):
        t0 = t + k * h
        t1 = t0 + h
        pin_v = (offset(t1) - offset(t0)) / h
        mesh.v += 0.5 * h * accel(mesh.x, mesh.v)
        mesh.v[mesh.pinned] = pin_v
        mesh.x += h * mesh.v
        mesh.x[mesh.pinned] = mesh.pin_rest + offset(t1)
        for body in bodies:
            bs = body.step(t0, t1)
            xs, vs, _ = resolve_points_gradient(mesh.x[free], mesh.v[free], bs, eps)
            mesh.x[free], mesh.v[free] = xs, vs
        mesh.v += 0.5 * h * accel(mesh.x, mesh.v)
        mesh.v[mesh.pinned] = pin_v


# -- mesh builders --------------------------------------------------------------

def grid_topology(nu: int, nv: int, wrap: bool = False):
    """Structural and shear springs plus two triangles per quad of an ``nu x nv`` vertex grid.

    Vertex ``(r, c)`` (row ``r < nv``, column ``c < nu``) has index ``r * nu + c``.
    Structural springs come first: all horizontal, then all vertical.  With
    ``wrap`` the last column is joined to the first (a closed ring).
    """
    idx = np.arange(nu * nv).reshape(nv, nu)
    right = np.roll(idx, -1, axis=1) if wrap else idx[:, 1:]
    left = idx if wrap else idx[:, :-1]
    springs = [
        np.stack([left.ravel(), right.ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
        np.stack([left[:-1].ravel(), right[1:].ravel()], axis=1),
        np.stack([right[:-1].ravel(), left[1:].ravel()], axis=1),
    ]
    a, b, c, d = left[:-1].ravel(), right[:-1].ravel(), left[1:].ravel(), right[1:].ravel()
    faces = np.concatenate([np.stack([a, c, b], axis=1), np.stack([b, c, d], axis=1)])
    return np.concatenate(springs), faces


def n_structural(nu: int, nv: int, wrap: bool = False) -> int:
    return (nu if wrap else nu - 1) * nv + nu * (nv - 1)


def grid_mesh(positions: np.ndarray, nu: int, nv: int, vertex_mass: float, stiffness: float,
              damping: float, pinned, wrap: bool = False) -> SpringMesh:
    springs, faces = grid_topology(nu, nv, wrap)
    x = np.asarray(positions, dtype=np.float64).reshape(nu * nv, 3)
    rest = np.linalg.norm(x[springs[:, 1]] - x[springs[:, 0]], axis=1)
    cols, rows = np.meshgrid(np.arange(nu, dtype=np.float64), np.arange(nv, dtype=np.float64))
    uv = np.stack([cols.ravel(), rows.ravel()], axis=1)
    return SpringMesh(x=x, v=np.zeros_like(x), mass=np.full(nu * nv, vertex_mass), springs=springs,
                      stiffness=stiffness, rest=rest, damping=damping, pinned=pinned, faces=faces, uv=uv)


# -- bone embedding ----------------------------------------------------------------

@dataclass
class BoneEmbedding:
    """Host triangle and barycentric weights of each virtual bone in the rest mesh."""

    triangles: np.ndarray  # (B, 3) vertex indices
    weights: np.ndarray  # (B, 3), rows nonnegative and summing to 1

    def positions(self, x: np.ndarray) -> np.ndarray:
        """Bone positions for vertex positions ``x`` of shape ``(..., V, 3)``."""
        return np.einsum("bk,...bkj->...bj", self.weights, x[..., self.triangles, :])


def embed_points_uv(mesh: SpringMesh, points_uv: np.ndarray) -> BoneEmbedding:
    """Barycentric embedding of parametric points ``(u, v)`` into the mesh faces."""
    tri_uv = mesh.uv[mesh.faces]
    tris, weights = [], []
    for p in np.asarray(points_uv, dtype=np.float64).reshape(-1, 2):
        for f, (a, b, c) in enumerate(tri_uv):
            m = np.array([b - a, c - a]).T
            l1, l2 = np.linalg.solve(m, p - a)
            w = np.array([1.0 - l1 - l2, l1, l2])
            if np.all(w >= -1e-12):
                w = np.clip(w, 0.0, None)
                tris.append(mesh.faces[f])
                weights.append(w / w.sum())
                break
        else:
            raise ValueError(f"point {p} lies outside the mesh")
    return BoneEmbedding(np.array(tris, dtype=np.int64), np.array(weights))


# -- locking experiment ----------------------------------------------------------

@dataclass
class LockingConfig:
    """Horizontal annulus (a flat skirt) pinned along its inner circle.

    Hanging straight down would need the outer circles to shorten, which a
    coarse spring mesh can only do by compressing its springs.  Rope chains
    along the radial columns have no such coupling.
    """

    inner_radius: float = 0.3
    radial_spacing: float = 0.1
    radial_segments: int = 5
    columns: int = 12
    vertex_mass: float = 0.02
    spring_damping: float = 0.02
    drag: float = 0.1
    settle_time: float = 5.0
    dt: float = 1.0 / 120.0
    rope_dt: float = 1.0 / 60.0


def sector_positions(cfg: LockingConfig) -> np.ndarray:
    radii = cfg.inner_radius + cfg.radial_spacing * np.arange(cfg.radial_segments + 1)
    angles = 2.0 * math.pi * np.arange(cfg.columns) / cfg.columns
    r, a = np.meshgrid(radii, angles, indexing="ij")
    return np.stack([r * np.cos(a), np.zeros_like(r), r * np.sin(a)], axis=-1).reshape(-1, 3)


def vertical_extent(points: np.ndarray, top: float = 0.0) -> float:
    return float(top - np.min(points[..., 1]))


def hang_mass_spring(cfg: LockingConfig, stiffness: float) -> np.ndarray:
    pos = sector_positions(cfg)
    mesh = grid_mesh(pos, cfg.columns, cfg.radial_segments + 1, cfg.vertex_mass, stiffness,
                     cfg.spring_damping, np.arange(cfg.columns), wrap=True)
    n = int(round(cfg.settle_time / cfg.dt))
    sub = stable_substeps(mesh, cfg.dt)
    for k in range(n):
        step_mass_spring(mesh, cfg.dt, k * cfg.dt, drag=cfg.drag, substeps=sub)
    return mesh.x


def hang_rope_chains(cfg: LockingConfig, solver: Optional[SolverPolicy] = None) -> np.ndarray:
    """Rope chains on the radial columns of the same sector; returns all bone positions."""
    pos = sector_positions(cfg).reshape(cfg.radial_segments + 1, cfg.columns, 3)
    chains = [RopeChain.from_positions(pos[:, c], mass=cfg.vertex_mass) for c in range(cfg.columns)]
    scene = Scene(chains=chains, drivers=[KinematicDriver.fixed([0.0, 0.0, 0.0])], chain_drivers=[0] * len(chains),
                  dt=cfg.rope_dt, frames=int(round(cfg.settle_time / cfg.rope_dt)),
                  forces=[Gravity(tuple(GRAVITY)), Wind(cfg.drag), RelativeDamping(cfg.spring_damping)],
                  solver=solver or SolverPolicy.converged(1e-6))
    rec = run(scene)[-1]
    return np.concatenate(rec.positions)


@dataclass
class LockingReport:
    stiffness: list
    spring_extent: list
    rope_extent: float
    rope_length: float

    def ordering_holds(self) -> bool:
        """Stiffest mesh locks above the rope chains, the weakest overstretches below them."""
        return (self.spring_extent[int(np.argmax(self.stiffness))] < self.rope_extent
                < self.spring_extent[int(np.argmin(self.stiffness))] and self.rope_extent <= self.rope_length)

    def monotone(self) -> bool:
        order = np.argsort(self.stiffness)
        ext = np.asarray(self.spring_extent)[order]
        return bool(np.all(np.diff(ext) <= 0.0))


def locking_experiment(stiffness: Sequence[float], cfg: Optional[LockingConfig] = None) -> LockingReport:
    cfg = cfg or LockingConfig()
    if len(stiffness) == 0:
        raise ValueError("need at least one stiffness")
    spring = [vertical_extent(hang_mass_spring(cfg, float(k))) for k in stiffness]
    rope = vertical_extent(hang_rope_chains(cfg))
    return LockingReport(list(map(float, stiffness)), spring, rope, cfg.radial_segments * cfg.radial_spacing)


# -- dataset generation ----------------------------------------------------------

@dataclass
class DeskScene:
    """Vertical cape patch hanging from a swaying bar, draped over a sphere that moves with the bar.

    The top row is pinned to the driver.  Chains run down columns
    ``chain_columns``; each has a bone on every row in ``bone_rows`` (row 0
    is the root).
    """

    nu: int = 20
    nv: int = 20
    width: float = 0.6
    height: float = 0.6
    total_mass: float = 0.2
    stiffness: float = 60.0
    spring_damping: float = 0.01
    drag: float = 0.004
    sphere_center: tuple = (0.0, -0.3, -0.13)
    sphere_radius: float = 0.15
    sway: tuple = (0.15, 0.03, 0.1)  # amplitudes along x, y, z (m)
    sway_freq: tuple = (0.4, 0.9, 0.65)  # Hz
    ramp_time: float = 1.0
    frame_dt: float = 1.0 / 60.0
    settle_time: float = 3.0
    chain_columns: tuple = (0, 5, 10, 14, 19)
    bone_rows: tuple = (0, 3, 6, 9, 12, 15, 19)
    epsilon: float = 1e-3

    def sway_offset(self, t: float) -> np.ndarray:
        s = min(max(t / self.ramp_time, 0.0), 1.0) if self.ramp_time > 0.0 else 1.0
        ramp = s * s * (3.0 - 2.0 * s)
        return ramp * np.array([a * math.sin(2.0 * math.pi * f * t) for a, f in zip(self.sway, self.sway_freq)])

    def driver(self, duration: float) -> KinematicDriver:
        n = max(2, int(math.ceil(duration / self.frame_dt)) + 3)
        return KinematicDriver.from_function(self.sway_offset, 0.0, (n - 1) * self.frame_dt, n)

    def sdf(self) -> AnalyticSdf:
        return AnalyticSdf((Sphere(self.sphere_center, self.sphere_radius),))

    def rest_positions(self) -> np.ndarray:
        xs = np.linspace(-0.5 * self.width, 0.5 * self.width, self.nu)
        ys = -np.linspace(0.0, self.height, self.nv)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy, np.zeros_like(gx)], axis=-1).reshape(-1, 3)

    def build_mesh(self) -> SpringMesh:
        return grid_mesh(self.rest_positions(), self.nu, self.nv, self.total_mass / (self.nu * self.nv),
                         self.stiffness, self.spring_damping, np.arange(self.nu))

    def bone_uv(self) -> np.ndarray:
        return np.array([[c, r] for c in self.chain_columns for r in self.bone_rows], dtype=np.float64)

    def chain_sizes(self) -> list:
        return [len(self.bone_rows)] * len(self.chain_columns)


@dataclass
class Dataset:
    vertices: np.ndarray  # (F, V, 3) world positions
    bones: np.ndarray  # (F, B, 3)
    translations: np.ndarray  # (F, 3) rigid frame (driver offset)
    times: np.ndarray
    split: np.ndarray  # 0 train, 1 validation, 2 holdout
    rest_vertices: np.ndarray
    rest_bones: np.ndarray
    faces: np.ndarray
    edges: np.ndarray
    meta: dict = field(default_factory=dict)

    TRAIN, VALIDATION, HOLDOUT = 0, 1, 2

    def indices(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.split == part)

    def sdf(self) -> AnalyticSdf:
        return AnalyticSdf.from_list(self.meta["sdf"])

    def save(self, path) -> None:
        rcf.write(path, {"kind": "dataset", **self.meta}, self._arrays())

    def _arrays(self) -> dict:
        return {"vertices": self.vertices, "bones": self.bones, "translations": self.translations,
                "times": self.times, "split": self.split, "rest_vertices": self.rest_vertices,
                "rest_bones": self.rest_bones, "faces": self.faces, "edges": self.edges}

    @classmethod
    def load(cls, path) -> "Dataset":
        meta, arr = rcf.read(path)
        if meta.get("kind") != "dataset":
            raise rcf.FormatError(f"{path}: not a dataset file")
        meta = {k: v for k, v in meta.items() if k != "kind"}
        return cls(meta=meta, **arr)


def split_frames(n: int, seed: int = 0) -> np.ndarray:
    """Deterministic 80/10/10 assignment ranked by a hash of ``(seed, frame)``.

    Validation and holdout get ``n // 10`` frames each; the rest train.
    """
    keys = [hashlib.sha256(f"{seed}:{i}".encode()).digest() for i in range(n)]
    order = sorted(range(n), key=lambda i: keys[i])
    split = np.zeros(n, dtype=np.int64)
    n_small = n // 10
    for rank, i in enumerate(order):
        if rank < n_small:
            split[i] = Dataset.VALIDATION
        elif rank < 2 * n_small:
            split[i] = Dataset.HOLDOUT
    return split


def settle(scene: DeskScene, mesh: SpringMesh) -> None:
    """Let the patch drape at rest over the sphere with the driver at its start pose."""
    body = CollisionBody(scene.sdf())
    n = int(round(scene.settle_time / scene.frame_dt))
    sub = stable_substeps(mesh, scene.frame_dt)
    for k in range(n):
        # extra drag while settling only speeds up convergence to the same static drape
        step_mass_spring(mesh, scene.frame_dt, k * scene.frame_dt, drag=20.0 * scene.drag, bodies=[body],
                         eps=scene.epsilon, substeps=sub)
    mesh.v[:] = 0.0


def generate_dataset(scene: DeskScene, n_frames: int, seed: int = 0) -> Dataset:
    """Simulate the desk scene and record ``n_frames`` frames (frame 0 is the rest drape)."""
    mesh = scene.build_mesh()
    settle(scene, mesh)
    rest = mesh.x.copy()
    embedding = embed_points_uv(mesh, scene.bone_uv())
    driver = scene.driver(n_frames * scene.frame_dt)
    body = CollisionBody(scene.sdf(), AttachedMotion(driver))
    sub = stable_substeps(mesh, scene.frame_dt)
    verts = np.empty((n_frames, rest.shape[0], 3))
    offsets = np.empty((n_frames, 3))
    times = scene.frame_dt * np.arange(n_frames)
    for f in range(n_frames):
        if f > 0:
            step_mass_spring(mesh, scene.frame_dt, times[f - 1], drag=scene.drag, bodies=[body],
                             eps=scene.epsilon, pin_offset=driver.position, substeps=sub)
        verts[f] = mesh.x
        offsets[f] = driver.position(times[f]) - driver.position(0.0)
    meta = {"sdf": scene.sdf().to_list(), "chain_sizes": scene.chain_sizes(), "frame_dt": scene.frame_dt,
            "epsilon": scene.epsilon, "seed": seed, "substeps": sub, "driver_times": driver.times.tolist(),
            "driver_positions": driver.positions.tolist()}
    structural = mesh.springs[: n_structural(scene.nu, scene.nv)]
    return Dataset(vertices=verts, bones=embedding.positions(verts), translations=offsets, times=times,
                   split=split_frames(n_frames, seed), rest_vertices=rest, rest_bones=embedding.positions(rest),
                   faces=mesh.faces, edges=structural, meta=meta)
