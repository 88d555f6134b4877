"""Analytic signed distance bodies and particle collision response.

Primitives are closed-form and evaluated in a body-local frame; a
:class:`CollisionBody` places an :class:`AnalyticSdf` in the world through a
rigid motion ``world = R @ local + c``.

Interpenetrating particles can be pushed out along the SDF gradient (the
conventional choice) or along the reverse of the path they travelled in the
body's moving frame ("history").  The history direction keeps particles from
sliding around curved bodies when time steps are large.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import WORLD_UP

log = logging.getLogger(__name__)

GRADIENT = "gradient"
HISTORY = "history"
BISECTION_STEPS = 60


def _as_points(x) -> tuple[np.ndarray, bool]:
    p = np.asarray(x, dtype=np.float64)
    return (p[None, :], True) if p.ndim == 1 else (p, False)


def _unit_rows(d: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    out = np.empty_like(d)
    ok = lengths > 0.0
    out[ok] = d[ok] / lengths[ok, None]
    out[~ok] = WORLD_UP
    return out


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("sphere radius must be positive")

    def phi_grad(self, p: np.ndarray):
        d = p - np.asarray(self.center, dtype=np.float64)
        dist = np.linalg.norm(d, axis=1)
        return dist - self.radius, _unit_rows(d, dist)

    def to_dict(self):
        return {"type": "sphere", "center": list(map(float, self.center)), "radius": float(self.radius)}


@dataclass(frozen=True)
class Capsule:
    p0: tuple
    p1: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("capsule radius must be positive")

    def phi_grad(self, p: np.ndarray):
        a = np.asarray(self.p0, dtype=np.float64)
        ab = np.asarray(self.p1, dtype=np.float64) - a
        denom = float(ab @ ab)
        if denom == 0.0:
            t = np.zeros(p.shape[0])
        else:
            t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
        d = p - (a + t[:, None] * ab)
        dist = np.linalg.norm(d, axis=1)
        return dist - self.radius, _unit_rows(d, dist)

    def to_dict(self):
        return {"type": "capsule", "p0": list(map(float, self.p0)), "p1": list(map(float, self.p1)),
                "radius": float(self.radius)}


@dataclass(frozen=True)
class RoundedBox:
    """Box with half extents ``half_extents`` inflated by ``radius``.

    ``rotation`` is a 3x3 matrix (rows as nested tuples) taking box axes to
    the body frame.
    """

    center: tuple
    half_extents: tuple
    radius: float
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    def __post_init__(self):
        if not self.radius > 0.0 or min(self.half_extents) <= 0.0:
            raise ValueError("rounded box needs positive radius and half extents")

    def phi_grad(self, p: np.ndarray):
        rot = np.asarray(self.rotation, dtype=np.float64)
        local = (p - np.asarray(self.center, dtype=np.float64)) @ rot
        q = np.abs(local) - np.asarray(self.half_extents, dtype=np.float64)
        outside = np.maximum(q, 0.0)
        out_len = np.linalg.norm(outside, axis=1)
        qmax = q.max(axis=1)
        phi = out_len + np.minimum(qmax, 0.0) - self.radius
        sign = np.where(local < 0.0, -1.0, 1.0)
        grad = np.zeros_like(local)
        ext = qmax > 0.0
        grad[ext] = sign[ext] * outside[ext] / out_len[ext, None]
        inner = np.nonzero(~ext)[0]
        axis = np.argmax(q[inner], axis=1)
        grad[inner, axis] = sign[inner, axis]
        return phi, grad @ rot.T

    def to_dict(self):
        return {"type": "rounded_box", "center": list(map(float, self.center)),
                "half_extents": list(map(float, self.half_extents)), "radius": float(self.radius),
                "rotation": [list(map(float, r)) for r in self.rotation]}


def primitive_from_dict(spec: dict):
    kind = spec["type"]
    if kind == "sphere":
        return Sphere(tuple(spec["center"]), float(spec["radius"]))
    if kind == "capsule":
        return Capsule(tuple(spec["p0"]), tuple(spec["p1"]), float(spec["radius"]))
    if kind == "rounded_box":
        rot = spec.get("rotation")
        if rot is None and "axis_angle" in spec:
            rot = Rotation.from_rotvec(spec["axis_angle"]).as_matrix()
        if rot is None:
            rot = np.eye(3)
        return RoundedBox(tuple(spec["center"]), tuple(spec["half_extents"]), float(spec["radius"]),
                          tuple(tuple(float(c) for c in row) for row in np.asarray(rot)))
    raise ValueError(f"unknown SDF primitive {kind!r}")


@dataclass(frozen=True)
class AnalyticSdf:
    """Union (pointwise minimum) of primitives.

    Inside overlaps the union value only bounds the true distance from
    below.  The gradient is that of the minimizing primitive, ties going to
    the lowest index; exact centers fall back to world-up.
    """

    primitives: tuple

    def phi_grad(self, x):
        p, single = _as_points(x)
        values = []
        grads = []
        for prim in self.primitives:
            v, g = prim.phi_grad(p)
            values.append(v)
            grads.append(g)
        values = np.stack(values)
        pick = np.argmin(values, axis=0)
        idx = np.arange(p.shape[0])
        phi = values[pick, idx]
        grad = np.stack(grads)[pick, idx]
        if single:
            return float(phi[0]), grad[0]
        return phi, grad

    def phi(self, x):
        return self.phi_grad(x)[0]

    def grad_phi(self, x):
        return self.phi_grad(x)[1]

    def to_list(self):
        return [p.to_dict() for p in self.primitives]

    @classmethod
    def from_list(cls, specs: Sequence[dict]) -> "AnalyticSdf":
        return cls(tuple(primitive_from_dict(s) for s in specs))


# -- rigid motion --------------------------------------------------------------

class StaticMotion:
    def pose(self, t: float):
        return np.eye(3), np.zeros(3)


class KeyframedMotion:
    """Translation keys linearly interpolated, rotation keys (axis-angle) slerped."""

    def __init__(self, times, translations, rotvecs=None):
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        if self.times.size == 0 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("motion key times must be strictly increasing")
        self.translations = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
        rv = np.zeros_like(self.translations) if rotvecs is None else np.asarray(rotvecs, dtype=np.float64)
        self.rotations = Rotation.from_rotvec(rv.reshape(-1, 3))
        self._slerp = Slerp(self.times, self.rotations) if self.times.size > 1 else None

    def pose(self, t: float):
        if self.times.size == 1:
            return self.rotations[0].as_matrix(), self.translations[0].copy()
        tc = min(max(t, self.times[0]), self.times[-1])
        c = np.array([np.interp(tc, self.times, self.translations[:, k]) for k in range(3)])
        return self._slerp([tc]).as_matrix()[0], c


class AttachedMotion:
    """Translates with a kinematic driver, relative to the driver's position at ``t_ref``."""

    def __init__(self, driver, t_ref: float = 0.0):
        self.driver = driver
        self.origin = driver.position(t_ref)

    def pose(self, t: float):
        return np.eye(3), self.driver.position(t) - self.origin


@dataclass
class CollisionBody:
    sdf: AnalyticSdf
    motion: object = field(default_factory=StaticMotion)

    def phi_grad_at(self, x, t: float):
        rot, c = self.motion.pose(t)
        p = np.asarray(x, dtype=np.float64)
        phi, grad = self.sdf.phi_grad((p - c) @ rot)
        return phi, grad @ rot.T

    def step(self, t0: float, t1: float) -> "BodyStep":
        r0, c0 = self.motion.pose(t0)
        r1, c1 = self.motion.pose(t1)
        return BodyStep(self.sdf, r0, c0, r1, c1, t1 - t0)


@dataclass
class BodyStep:
    """A body's poses at the two ends of a step."""

    sdf: AnalyticSdf
    r0: np.ndarray
    c0: np.ndarray
    r1: np.ndarray
    c1: np.ndarray
    dt: float

    def phi_grad(self, x):
        """SDF at the end of the step."""
        p = np.asarray(x, dtype=np.float64)
        phi, grad = self.sdf.phi_grad((p - self.c1) @ self.r1)
        return phi, grad @ self.r1.T

    def phi(self, x):
        return self.phi_grad(x)[0]

    def embed(self, x_n):
        """Carry a start-of-step point along with the body to the end of the step."""
        return (np.asarray(x_n, dtype=np.float64) - self.c0) @ self.r0 @ self.r1.T + self.c1

    def velocity(self, x):
        """Velocity of the body material at ``x`` (end of step), by finite displacement."""
        p = np.asarray(x, dtype=np.float64)
        back = (p - self.c1) @ self.r1 @ self.r0.T + self.c0
        return (p - back) / self.dt if self.dt > 0.0 else np.zeros_like(p)


def embed_point(x_n, body_step: BodyStep) -> np.ndarray:
    return body_step.embed(x_n)


@dataclass
class CollisionPolicy:
    """Collision response options.

    ``epsilon=None`` means the scene default (1e-3 of the bounding diagonal).
    ``line_search`` replaces the distance-based push out by bisection along
    the reverse path; ``ensure_exterior`` finishes an incomplete push out
    with that bisection; ``reconcile_length`` pulls a bone pushed beyond its
    rope length back toward its parent while staying outside every body.
    """

    pushout_direction: str = HISTORY
    projection_normal: str = HISTORY
    epsilon: Optional[float] = None
    pushout_iterations: int = 1
    friction: float = 0.0
    line_search: bool = False
    ensure_exterior: bool = True
    reconcile_length: bool = True

    def __post_init__(self):
        for name in (self.pushout_direction, self.projection_normal):
            if name not in (GRADIENT, HISTORY):
                raise ValueError(f"unknown direction policy {name!r}")
        if self.epsilon is not None and self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.pushout_iterations < 1:
            raise ValueError("pushout_iterations must be >= 1")
        if self.friction < 0.0:
            raise ValueError("friction must be >= 0")

    def eps(self) -> float:
        return 0.0 if self.epsilon is None else float(self.epsilon)


@dataclass
class ParticleResult:
    x: np.ndarray
    v: np.ndarray
    collided: bool = False
    normal: Optional[np.ndarray] = None
    body_velocity: Optional[np.ndarray] = None
    history_fallback: bool = False


def _bisect(body: BodyStep, inside: np.ndarray, outside: np.ndarray, level: float) -> np.ndarray:
    lo, hi = 0.0, 1.0  # parameter from outside (0) to inside (1)
    d = inside - outside
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if body.phi(outside + mid * d) >= level:
            lo = mid
        else:
            hi = mid
    return outside + lo * d


def project_velocity(v: np.ndarray, v_body: np.ndarray, normal: np.ndarray, friction: float) -> np.ndarray:
    """Remove relative velocity into the body and apply Coulomb-style friction."""
    vn = float(v @ normal)
    vbn = float(v_body @ normal)
    vn_new = max(vn, vbn)
    vb_t = v_body - vbn * normal
    v_rel_t = v - vn * normal - vb_t
    factor = 1.0
    if friction > 0.0:
        speed = math.sqrt(float(v_rel_t @ v_rel_t))
        if speed > 0.0:
            factor = max(0.0, 1.0 - friction * (vn_new - vn) / speed)
    return vn_new * normal + vb_t + factor * v_rel_t


def resolve_particle(x_n, x_np1, v, body: BodyStep, policy: CollisionPolicy) -> ParticleResult:
    """Resolve one particle against one body over a step.

    ``x_n`` is the particle's start-of-step position (assumed outside the
    body at that time), ``x_np1`` its predicted end-of-step position and
    ``v`` its velocity.  Returns inputs unchanged when ``phi(x_np1) >= eps``.
    """
    eps = policy.eps()
    x = np.array(x_np1, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    phi, grad = body.phi_grad(x)
    if phi >= eps:
        return ParticleResult(x, v)

    x_b = body.embed(x_n)
    phi_b = body.phi(x_b)
    r = x_b - x
    r_len = math.sqrt(float(r @ r))
    r_hat = r / r_len if r_len > 0.0 else None
    history_ok = r_hat is not None and phi_b >= 0.0
    fallback = False
    if not history_ok and HISTORY in (policy.pushout_direction, policy.projection_normal):
        log.debug("embedded start point is not exterior; falling back to the gradient direction")
        fallback = True

    use_history = policy.pushout_direction == HISTORY and history_ok
    if policy.line_search and history_ok:
        x = _bisect(body, x, x_b, min(eps, phi_b))
    else:
        for _ in range(policy.pushout_iterations):
            direction = r_hat if use_history else grad
            x = x + (eps - phi) * direction
            phi, grad = body.phi_grad(x)
            if phi >= 0.0:
                break
        if policy.ensure_exterior and phi < 0.0:
            if history_ok:
                x = _bisect(body, x, x_b, min(eps, phi_b))
            else:
                for _ in range(16):
                    x = x + (eps - phi) * grad
                    phi, grad = body.phi_grad(x)
                    if phi >= 0.0:
                        break

    _, grad = body.phi_grad(x)
    normal = r_hat if (policy.projection_normal == HISTORY and history_ok) else grad
    v_body = body.velocity(x)
    v_new = project_velocity(v, v_body, normal, policy.friction)
    return ParticleResult(x, v_new, True, normal, v_body, fallback)


def resolve_points_gradient(x_np1: np.ndarray, v: np.ndarray, body: BodyStep, eps: float,
                            friction: float = 0.0, iterations: int = 1):
    """Vectorized gradient push out and projection for many particles.

    Matches :func:`resolve_particle` with the gradient policy and no exterior
    fallback.  Returns ``(x, v, collided_mask)``.
    """
    x = np.array(x_np1, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    phi, grad = body.phi_grad(x)
    hit = phi < eps
    if not np.any(hit):
        return x, v, hit
    xs = x[hit]
    ph, gr = phi[hit], grad[hit]
    active = np.ones(xs.shape[0], dtype=bool)
    for _ in range(iterations):
        xs[active] += (eps - ph[active])[:, None] * gr[active]
        ph, gr = body.phi_grad(xs)
        active &= ph < 0.0
        if not np.any(active):
            break
    _, normal = body.phi_grad(xs)
    vb = body.velocity(xs)
    vs = v[hit]
    vn = np.einsum("ij,ij->i", vs, normal)
    vbn = np.einsum("ij,ij->i", vb, normal)
    vn_new = np.maximum(vn, vbn)
    vb_t = vb - vbn[:, None] * normal
    v_rel_t = vs - vn[:, None] * normal - vb_t
    factor = np.ones(xs.shape[0])
    if friction > 0.0:
        speed = np.linalg.norm(v_rel_t, axis=1)
        moving = speed > 0.0
        factor[moving] = np.maximum(0.0, 1.0 - friction * (vn_new[moving] - vn[moving]) / speed[moving])
    x[hit] = xs
    v[hit] = vn_new[:, None] * normal + vb_t + factor[:, None] * v_rel_t
    return x, v, hit


@dataclass
class ChainCollisionReport:
    collided: list = field(default_factory=list)
    reconciled: list = field(default_factory=list)
    history_fallbacks: int = 0
    unresolved_length: int = 0
    min_normal_velocity: float = math.inf  # (v' - v_body) . N right after each resolve


def collide_chain(chain, x_prev: np.ndarray, bodies: Sequence[BodyStep], policy: CollisionPolicy) -> ChainCollisionReport:
    """Root-to-tip sweep: length constraint first, then each body's collision check.

    ``x_prev`` holds the bones' start-of-step positions.
    """
    report = ChainCollisionReport()
    x, v = chain.x, chain.v
    for i in range(1, chain.m + 1):
        l_max = float(chain.l_max[i - 1])
        seg = x[i] - x[i - 1]
        length = math.sqrt(float(seg @ seg))
        if length > l_max:
            x[i] = x[i - 1] + seg * (l_max / length)
        hit = False
        for body in bodies:
            res = resolve_particle(x_prev[i], x[i], v[i], body, policy)
            if res.collided:
                hit = True
                x[i], v[i] = res.x, res.v
                report.history_fallbacks += int(res.history_fallback)
                rel = float((res.v - res.body_velocity) @ res.normal)
                report.min_normal_velocity = min(report.min_normal_velocity, rel)
        report.collided.append(hit)
        fixed = False
        if hit and policy.reconcile_length:
            seg = x[i] - x[i - 1]
            length = math.sqrt(float(seg @ seg))
            if length > l_max:
                fixed = _reconcile_length(chain, i, seg, length, bodies, policy)
                if not fixed:
                    report.unresolved_length += 1
        report.reconciled.append(fixed)
    return report


def _min_phi(bodies, p) -> float:
    return min(b.phi(p) for b in bodies)


def _reconcile_length(chain, i, seg, length, bodies, policy) -> bool:
    """Shorten segment ``i`` to at most its rope length without re-entering a body."""
    parent = chain.x[i - 1]
    target = parent + seg * (chain.l_max[i - 1] / length)
    if _min_phi(bodies, target) >= 0.0:
        chain.x[i] = target
        return True
    anchor = parent
    if _min_phi(bodies, parent) < 0.0:
        # a kinematic parent can sit inside a body; anchor on its nearest exterior point instead
        anchor = _exterior_near(bodies, parent, policy.eps())
        if anchor is None or np.linalg.norm(anchor - parent) > chain.l_max[i - 1]:
            return False
    lo, hi = 0.0, 1.0
    d = target - anchor
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _min_phi(bodies, anchor + mid * d) >= 0.0:
            lo = mid
        else:
            hi = mid
    chain.x[i] = anchor + lo * d
    return True


def _exterior_near(bodies, p, eps: float, iterations: int = 8):
    """Step ``p`` out along the gradient of the deepest body until it is outside all of them."""
    q = np.array(p, dtype=np.float64)
    for _ in range(iterations):
        vals = [b.phi_grad(q[None])[0][0] for b in bodies]
        k = int(np.argmin(vals))
        if vals[k] >= 0.0:
            return q
        grad = bodies[k].phi_grad(q[None])[1][0]
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            return None
        q = q + (eps - vals[k]) * grad / norm
    return q if _min_phi(bodies, q) >= 0.0 else None


def max_penetration(bodies: Sequence[BodyStep], points: np.ndarray) -> float:
    """Most negative SDF value over ``points`` (0 when nothing penetrates)."""
    worst = 0.0
    for b in bodies:
        phi, _ = b.phi_grad(np.asarray(points).reshape(-1, 3))
        worst = min(worst, float(np.min(phi)))
    return worst
