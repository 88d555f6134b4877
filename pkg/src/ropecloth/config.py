"""Scene files: JSON validated against ``schema/scene.schema.json``, then turned into a :class:`Scene`."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .forces_kinematics import Gravity, KinematicDriver, LateralSpring, RelativeDamping, Wind
from .rope_core import RopeChain, SolverPolicy
from .sdf_collision import AnalyticSdf, AttachedMotion, CollisionBody, CollisionPolicy, KeyframedMotion, StaticMotion
from .sim_engine import Scene, SceneError


class ConfigError(ValueError):
    """Invalid scene file; the message names the line or the offending field."""


@lru_cache(maxsize=1)
def scene_schema() -> dict:
    return json.loads(resources.files("ropecloth").joinpath("schema/scene.schema.json").read_text())


def _field(path) -> str:
    out = "$"
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def parse_scene_text(text: str, source: str = "<scene>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_scene_dict(data, source)
    return data


def validate_scene_dict(data, source: str = "<scene>") -> None:
    validator = jsonschema.Draft202012Validator(scene_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"{source}: field {_field(err.absolute_path)}: {err.message}")


def load_scene(path) -> tuple[Scene, dict]:
    """Read, validate and build a scene; returns ``(scene, raw_dict)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read scene file ({exc.strerror})") from exc
    data = parse_scene_text(text, str(path))
    return scene_from_dict(data, str(path)), data


def _motion(spec, drivers, where):
    kind = spec.get("type", "static")
    if kind == "static":
        return StaticMotion()
    if kind == "keyframed":
        times, trans = spec["times"], spec["translations"]
        rot = spec.get("rotations")
        if len(trans) != len(times) or (rot is not None and len(rot) != len(times)):
            raise ConfigError(f"{where}: one translation (and rotation) per key time required")
        return KeyframedMotion(times, trans, rot)
    if not spec["driver"] < len(drivers):
        raise ConfigError(f"{where}.driver: no driver {spec['driver']}")
    return AttachedMotion(drivers[spec["driver"]])


def _force(spec):
    kind = spec["type"]
    chains = tuple(spec["chains"]) if "chains" in spec else None
    if kind == "gravity":
        return Gravity(tuple(spec.get("g", (0.0, -9.81, 0.0))), chains)
    if kind == "wind":
        return Wind(spec["coefficient"], tuple(spec.get("velocity", (0.0, 0.0, 0.0))), chains)
    if kind == "lateral_spring":
        return LateralSpring(tuple(spec["a"]), tuple(spec["b"]), spec["stiffness"], spec["rest_length"])
    return RelativeDamping(spec["coefficient"], chains)


def scene_from_dict(data: dict, source: str = "<scene>") -> Scene:
    """Build a scene from an already schema-valid dict; semantic problems raise :class:`ConfigError`."""
    where = ""
    try:
        drivers = []
        for k, d in enumerate(data["drivers"]):
            where = f"{source}: field $.drivers[{k}]"
            if len(d["times"]) != len(d["positions"]):
                raise ConfigError(f"{where}: times and positions differ in length")
            drivers.append(KinematicDriver(d["times"], d["positions"]))
        chains, chain_drivers = [], []
        for k, c in enumerate(data["chains"]):
            where = f"{source}: field $.chains[{k}]"
            n = len(c["positions"])
            mass = c.get("mass", 1.0)
            if isinstance(mass, list) and len(mass) not in (n - 1, n):
                raise ConfigError(f"{where}.mass: expected {n - 1} bone masses, got {len(mass)}")
            if "l_max" in c and len(c["l_max"]) != n - 1:
                raise ConfigError(f"{where}.l_max: expected {n - 1} lengths, got {len(c['l_max'])}")
            if "velocities" in c and len(c["velocities"]) != n:
                raise ConfigError(f"{where}.velocities: expected {n} entries")
            driver = c.get("driver", 0)
            if not driver < len(drivers):
                raise ConfigError(f"{where}.driver: no driver {driver}")
            chains.append(RopeChain.from_positions(c["positions"], mass=mass, l_max=c.get("l_max"),
                                                   velocities=c.get("velocities")))
            chain_drivers.append(driver)
        bodies = []
        for k, b in enumerate(data.get("bodies", [])):
            where = f"{source}: field $.bodies[{k}]"
            bodies.append(CollisionBody(AnalyticSdf.from_list(b["primitives"]),
                                        _motion(b.get("motion", {"type": "static"}), drivers, where + ".motion")))
        where = f"{source}: field $.forces"
        forces = [_force(f) for f in data.get("forces", [])]
        where = f"{source}: field $.solver"
        solver = SolverPolicy(**data.get("solver", {}))
        where = f"{source}: field $.collision"
        collision = CollisionPolicy(**data.get("collision", {}))
        where = f"{source}"
        scene = Scene(chains=chains, drivers=drivers, chain_drivers=chain_drivers, dt=float(data["dt"]),
                      frames=int(data.get("frames", 0)), bodies=bodies, forces=forces, solver=solver,
                      collision=collision, t0=float(data.get("t0", 0.0)),
                      rotate_velocity=data.get("rotate_velocity", "root"))
        scene.validate()
    except ConfigError:
        raise
    except (SceneError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return scene


def _motion_dict(motion, drivers) -> dict:
    if isinstance(motion, StaticMotion):
        return {"type": "static"}
    if isinstance(motion, AttachedMotion):
        for k, d in enumerate(drivers):
            if d is motion.driver:
                return {"type": "attached", "driver": k}
        raise ValueError("attached body follows a driver that is not part of the scene")
    if isinstance(motion, KeyframedMotion):
        return {"type": "keyframed", "times": motion.times.tolist(), "translations": motion.translations.tolist(),
                "rotations": motion.rotations.as_rotvec().tolist()}
    raise ValueError(f"cannot serialize motion {motion!r}")


def _force_dict(f) -> dict:
    if isinstance(f, Gravity):
        out = {"type": "gravity", "g": list(map(float, f.g))}
    elif isinstance(f, Wind):
        out = {"type": "wind", "coefficient": float(f.coefficient), "velocity": list(map(float, f.velocity))}
    elif isinstance(f, LateralSpring):
        return {"type": "lateral_spring", "a": list(map(int, f.a)), "b": list(map(int, f.b)),
                "stiffness": float(f.stiffness), "rest_length": float(f.rest_length)}
    elif isinstance(f, RelativeDamping):
        out = {"type": "relative_damping", "coefficient": float(f.coefficient)}
    else:
        raise ValueError(f"cannot serialize force {f!r}")
    if f.chains is not None:
        out["chains"] = list(map(int, f.chains))
    return out


def scene_to_dict(scene: Scene) -> dict:
    """Inverse of :func:`scene_from_dict` for scenes built from the supported pieces."""
    chains = []
    for ch, d in zip(scene.chains, scene.chain_drivers):
        entry = {"positions": ch.x.tolist(), "mass": ch.mass[1:].tolist(), "l_max": ch.l_max.tolist(), "driver": d}
        if np.any(ch.v != 0.0):
            entry["velocities"] = ch.v.tolist()
        chains.append(entry)
    return {
        "dt": scene.dt,
        "frames": scene.frames,
        "t0": scene.t0,
        "rotate_velocity": scene.rotate_velocity,
        "chains": chains,
        "drivers": [{"times": d.times.tolist(), "positions": d.positions.tolist()} for d in scene.drivers],
        "bodies": [{"primitives": b.sdf.to_list(), "motion": _motion_dict(b.motion, scene.drivers)}
                   for b in scene.bodies],
        "forces": [_force_dict(f) for f in scene.forces],
        "solver": {k: getattr(scene.solver, k) for k in
                   ("mode", "sweeps", "tolerance", "max_sweeps", "taut_threshold", "warm_start",
                    "velocity_tolerance")},
        "collision": dict(scene.collision.__dict__),
    }


def dump_scene(scene: Scene, path) -> None:
    data = scene_to_dict(scene)
    validate_scene_dict(data, str(path))
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
