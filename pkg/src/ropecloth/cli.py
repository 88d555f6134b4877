"""``ropecloth`` command line: simulation, the scaled experiments, and the neural pipeline.

Exit codes: 0 success, 2 bad configuration or input, 3 an invariant or a
checked property failed.  ``ROPECLOTH_LOG`` sets the log level (default
WARNING).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import rcf
from .config import ConfigError, dump_scene, load_scene
from .forces_kinematics import KinematicDriver
from .neural.training import (LOG_HEADER, NeuralModel, RigidFrame, TrainConfig, TrainingDiverged, frame_metrics,
                              infer_mesh, model_from_dataset, train)
from .reference_cloth import Dataset, DeskScene, generate_dataset
from .sdf_collision import GRADIENT, HISTORY
from .sim_engine import bone_positions_from_csv, invariant_violations, read_frames_csv, run, write_frames_csv

log = logging.getLogger("ropecloth")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
LOG_ENV = "ROPECLOTH_LOG"


class InputError(ValueError):
    """Bad command-line input detected after argument parsing (exit 2)."""


# -- small file formats ----------------------------------------------------------------

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_obj(path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """``v x y z`` lines (shortest round-trip floats) then 1-based ``f a b c`` lines."""
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _float_list(text: str, what: str) -> list:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise InputError(f"{what}: empty list")
    return items


# -- subcommands -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    scene, raw = load_scene(args.scene)
    if args.frames is not None:
        scene.frames = args.frames
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = run(scene)
    csv_path = out / raw.get("output", {}).get("csv", "frames.csv")
    write_frames_csv(records, csv_path)
    print(f"wrote {len(records)} frames to {csv_path}")
    if args.model:
        n = _write_inference(NeuralModel.load(args.model), read_frames_csv(csv_path), out / "obj",
                             not args.no_shape)
        print(f"wrote {n} OBJ meshes to {out / 'obj'}")
    problems = [p for rec in records for p in invariant_violations(rec)]
    for p in problems[:20]:
        log.error(p)
    if problems:
        print(f"{len(problems)} invariant violations", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_pendulum_verify(args) -> int:
    rep = ex.pendulum_verify(dt=args.dt, periods=args.periods, theta0_deg=args.theta0, length=args.length)
    if args.out:
        write_csv(args.out, ex.PENDULUM_HEADER, rep.rows())
    print(f"max angle error: {100 * rep.max_error:.4f}% of amplitude (tolerance 2%)")
    print(f"energy drift per period: {100 * rep.energy_drift:.4f}% of swing energy (tolerance 1%)")
    measured = "n/a (fewer than two crossings)" if np.isnan(rep.period) else f"{rep.period:.6f} s"
    print(f"period: {measured} (small-angle 2*pi*sqrt(l/g) = {rep.analytic_period:.6f} s)")
    print(f"runtime: {rep.runtime:.2f} s")
    return EXIT_OK if rep.passed() else EXIT_INVARIANT


def cmd_iterations_study(args) -> int:
    labels = _float_list(args.sweeps, "--sweeps")
    try:
        for lab in labels:
            ex.policy_from_label(lab)
    except ValueError as exc:
        raise InputError(f"--sweeps: {exc}") from exc
    rep = ex.iterations_study(labels, bones=args.bones, dt=args.dt, duration=args.duration)
    rows = [[r.label, _num(r.amplitude_deg), _num(r.energy)] for r in rep.rows]
    if args.out:
        write_csv(args.out, ex.ITERATIONS_HEADER, rows)
    for r in rep.rows:
        print(f"{r.label:>8}: amplitude {r.amplitude_deg:.3f} deg, energy {r.energy:.6f} J")
    ok = rep.non_decreasing()
    print("amplitude non-decreasing with more iterations: " + ("yes" if ok else "NO"))
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_collision_demo(args) -> int:
    policies = [HISTORY, GRADIENT] if args.policy == "both" else [args.policy]
    rows, ok = [], True
    for pol in policies:
        rep = ex.collision_demo(pol, particles=args.particles)
        rows += [[pol] + r for r in rep.rows()]
        worst = rep.max_angles()
        passed = rep.passed()
        ok = ok and passed
        want = "<= 60" if pol == HISTORY else "> 90"
        print(f"{pol}: max angle per particle {np.round(worst, 2).tolist()} deg (want {want}): "
              + ("ok" if passed else "FAILED"))
    if args.out:
        write_csv(args.out, ["policy"] + ex.COLLISION_HEADER, rows)
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_flag_compare(args) -> int:
    try:
        stiffness = [float(s) for s in _float_list(args.stiffness, "--stiffness")]
    except ValueError as exc:
        raise InputError(f"--stiffness: {exc}") from exc
    if any(k <= 0.0 for k in stiffness):
        raise InputError("--stiffness: values must be positive")
    rep = ex.flag_compare(stiffness)
    if args.out:
        write_csv(args.out, ex.FLAG_HEADER, ex.flag_rows(rep))
    for k, e in zip(rep.stiffness, rep.spring_extent):
        print(f"mass-spring k={k:g}: extent {e:.4f} m")
    print(f"rope chains: extent {rep.rope_extent:.4f} m (rope length {rep.rope_length:.4f} m)")
    ok = ex.flag_passed(rep)
    print("locking/overstretch ordering: " + ("ok" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_INVARIANT


def desk_scene_from_dataset(ds: Dataset):
    driver = KinematicDriver(ds.meta["driver_times"], ds.meta["driver_positions"])
    return ex.desk_rope_scene(ds.rest_bones, ds.meta["chain_sizes"], driver, ds.sdf(), ds.meta["frame_dt"],
                              ds.vertices.shape[0] - 1, ds.meta["epsilon"])


def cmd_gen_data(args) -> int:
    ds = generate_dataset(DeskScene(), args.frames, args.seed)
    ds.save(args.out)
    counts = [int(np.sum(ds.split == k)) for k in (ds.TRAIN, ds.VALIDATION, ds.HOLDOUT)]
    print(f"wrote {args.frames} frames to {args.out} (train/validation/holdout {counts[0]}/{counts[1]}/{counts[2]})")
    if args.scene_out:
        dump_scene(desk_scene_from_dataset(ds), args.scene_out)
        print(f"wrote rope-chain scene to {args.scene_out}")
    if args.csv:
        rows = [[f, int(ds.split[f]), v, *map(_num, ds.vertices[f, v])]
                for f in range(ds.vertices.shape[0]) for v in range(ds.vertices.shape[1])]
        write_csv(args.csv, ["frame", "split", "vertex", "x", "y", "z"], rows)
    return EXIT_OK


def cmd_fit_pca(args) -> int:
    ds = Dataset.load(args.data)
    dim = 3 * ds.vertices.shape[1]
    if not 1 <= args.k <= dim:
        raise InputError(f"--k must lie in 1..{dim}")
    model = model_from_dataset(ds, args.k, args.eps)
    model.save(args.out)
    pca = model.skin_pca
    energy = float(np.sum(pca.singular_values ** 2))
    print(f"fitted {pca.k} components (padded {pca.padded}); captured energy {energy:.6e}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(data_weight=args.data_weight, pinn_weight=args.pinn_weight, lr=args.lr,
                           epochs=args.epochs, batch_size=args.batch_size, eps=args.eps, width=args.width,
                           seed=args.seed, activation=args.activation, shape_k=args.shape_k)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_train(args) -> int:
    ds = Dataset.load(args.data)
    model = NeuralModel.load(args.model)
    if args.lr is None:
        args.lr = 1e-4 if args.stage == "skinning" else 1e-5
    cfg = _train_config(args)
    if ds.bones.shape[1] != model.n_bones or ds.vertices.shape[1] != model.n_vertices:
        raise InputError("dataset dimensions do not match the model")
    if args.stage == "shape" and model.skin_net is None:
        raise InputError("the shape stage needs a model with a trained skinning network")
    try:
        result = train(ds, model, cfg, args.stage)
    except TrainingDiverged as exc:
        log.error("%s", exc)
        return EXIT_INVARIANT
    result.model.save(args.out)
    if args.log:
        write_csv(args.log, LOG_HEADER, [[_num(v) for v in row] for row in result.log])
    use_shape = args.stage == "shape"
    val = frame_metrics(result.model, ds, ds.indices(ds.VALIDATION), cfg, use_shape)
    hold = frame_metrics(result.model, ds, ds.indices(ds.HOLDOUT), cfg, use_shape)
    print(f"best epoch {result.best_epoch}; validation RMSE {val.rmse:.6e} m, "
          f"interpenetrating {val.interpenetrating}; holdout RMSE {hold.rmse:.6e} m")
    return EXIT_OK


def _rigid_frames(model: NeuralModel, keys, bones) -> list:
    """Translation-only frames located by the chain roots, which move rigidly with the driver."""
    roots = [j for j, (_, b) in enumerate(keys) if b == 0]
    rest_root = model.rest_bones[roots].mean(axis=0)
    return [RigidFrame(translation=pos[roots].mean(axis=0) - rest_root) for pos in bones]


def _load_bones(model: NeuralModel, cols: dict):
    frames, keys, bones = bone_positions_from_csv(cols)
    if bones.shape[1] != model.n_bones:
        raise InputError(f"simulation has {bones.shape[1]} bones, the model expects {model.n_bones}")
    sizes = model.meta.get("chain_sizes")
    if sizes is not None and keys != [(c, b) for c, n in enumerate(sizes) for b in range(n)]:
        raise InputError("simulation chain layout does not match the model's")
    return frames, bones, _rigid_frames(model, keys, bones)


def _write_inference(model: NeuralModel, cols: dict, out_dir: Path, use_shape: bool) -> int:
    frames, bones, rigid = _load_bones(model, cols)
    out_dir.mkdir(parents=True, exist_ok=True)
    for f, pos, frame in zip(frames, bones, rigid):
        write_obj(out_dir / f"frame_{f:05d}.obj", infer_mesh(model, pos, frame, use_shape), model.faces)
    return len(frames)


def cmd_infer(args) -> int:
    model = NeuralModel.load(args.model)
    try:
        cols = read_frames_csv(args.frames_csv)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    n = _write_inference(model, cols, out, not args.no_shape)
    print(f"wrote {n} OBJ meshes to {out}")
    if args.check_phi is not None:
        frac = phi_fraction(model, cols, out, args.check_phi)
        print(f"fraction of vertices with phi >= {-args.check_phi:g} m: {frac:.6f}")
    return EXIT_OK


def phi_fraction(model: NeuralModel, cols: dict, out_dir: Path, tol: float) -> float:
    """Share of written OBJ vertices with ``phi >= -tol`` against the body, which rides the rigid frame."""
    frames, _, rigid = _load_bones(model, cols)
    good = total = 0
    for f, frame in zip(frames, rigid):
        verts, _ = read_obj(out_dir / f"frame_{f:05d}.obj")
        phi = model.sdf.phi(frame.to_local(verts))
        good += int(np.sum(phi >= -tol))
        total += phi.size
    return good / max(total, 1)


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ropecloth", description="Rope-chain cloth simulation and neural skinning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scene file and write the frame CSV")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--frames", type=int, help="override the scene's frame count")
    s.add_argument("--seed", type=int, default=0, help="accepted for uniformity; simulation has no randomness")
    s.add_argument("--model", help="model file: also write an inferred OBJ per frame under OUT/obj")
    s.add_argument("--no-shape", action="store_true", help="skip the shape network during inference")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pendulum-verify", help="single pendulum against the RK4 oracle")
    s.add_argument("--dt", type=float, default=1.0 / 600.0)
    s.add_argument("--periods", type=float, default=5.0)
    s.add_argument("--theta0", type=float, default=30.0, help="release angle in degrees")
    s.add_argument("--length", type=float, default=1.0)
    s.add_argument("--out", help="CSV of angle, oracle angle and energy per step")
    s.set_defaults(func=cmd_pendulum_verify)

    s = sub.add_parser("iterations-study", help="swing amplitude after 3 s versus solver sweeps")
    s.add_argument("--sweeps", default="1,5,10,tol", help="comma list of sweep counts and/or 'tol'")
    s.add_argument("--bones", type=int, default=8)
    s.add_argument("--dt", type=float, default=1.0 / 600.0)
    s.add_argument("--duration", type=float, default=3.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_iterations_study)

    s = sub.add_parser("collision-demo", help="sphere sweeping through particles, per push-out policy")
    s.add_argument("--policy", choices=[HISTORY, GRADIENT, "both"], default="both")
    s.add_argument("--particles", type=int, default=6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_collision_demo)

    s = sub.add_parser("flag-compare", help="hanging extent: mass-spring stiffnesses versus rope chains")
    s.add_argument("--stiffness", default="3,30,300,3000", help="comma list of spring stiffnesses (N/m)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_flag_compare)

    s = sub.add_parser("gen-data", help="simulate the desk cloth scene and write a dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=600)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scene-out", help="also write the matching rope-chain scene file")
    s.add_argument("--csv", help="also write all vertex positions as CSV")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("fit-pca", help="fit the skinning PCA and write an (untrained) model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--eps", type=float, help="collision offset (default: the dataset's)")
    s.set_defaults(func=cmd_fit_pca)

    s = sub.add_parser("train", help="train the skinning or the shape network")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stage", choices=["skinning", "shape"], default="skinning")
    d = TrainConfig()
    s.add_argument("--data-weight", type=float, default=d.data_weight)
    s.add_argument("--pinn-weight", type=float, default=d.pinn_weight)
    s.add_argument("--lr", type=float, default=None, help="default 1e-4 (skinning) or 1e-5 (shape)")
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--batch-size", type=int, default=d.batch_size)
    s.add_argument("--eps", type=float, default=d.eps)
    s.add_argument("--width", type=int, default=d.width)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--activation", choices=["relu", "tanh"], default=d.activation)
    s.add_argument("--shape-k", type=int, default=d.shape_k)
    s.add_argument("--log", help="training log CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="reconstruct meshes from a simulation frame CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--frames-csv", required=True)
    s.add_argument("--out", required=True, help="directory for frame_%%05d.obj")
    s.add_argument("--no-shape", action="store_true")
    s.add_argument("--check-phi", type=float, metavar="TOL",
                   help="report the fraction of vertices with phi >= -TOL")
    s.set_defaults(func=cmd_infer)
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, rcf.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
