"""Skinning and shape networks: data preparation, training and inference.

All learning happens in the rigid frame of the driver (the key body part at
desk scale): vertex and bone positions have the frame's translation and
rotation removed, and the collision body, which moves with that frame, is
static there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import rcf
from ..sdf_collision import AnalyticSdf
from .losses import data_loss, pinn_collision_loss
from .mlp import Adam, Mlp2, cosine_lr
from .pca import PcaModel, fit_pca

log = logging.getLogger(__name__)

SKINNING = "skinning"
SHAPE = "shape"
MODEL_VERSION = 1


@dataclass
class RigidFrame:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.translation) @ self.rotation

    def to_world(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation


def nonrigid_displacement(positions, rest_positions, frame: RigidFrame) -> np.ndarray:
    """``R^T (x - t) - x_rest`` per point, flattened."""
    x = np.asarray(positions, dtype=np.float64)
    rest = np.asarray(rest_positions, dtype=np.float64)
    if x.shape != rest.shape:
        raise ValueError(f"position count {x.shape} does not match rest {rest.shape}")
    return (frame.to_local(x) - rest).reshape(-1)


@dataclass
class TrainConfig:
    data_weight: float = 0.1
    pinn_weight: float = 1000.0
    lr: float = 1e-4
    epochs: int = 500
    batch_size: int = 32
    eps: float = 1e-3
    width: int = 64
    seed: int = 0
    activation: str = "relu"
    shape_k: int = 16

    def __post_init__(self):
        if not self.data_weight > 0.0 or self.pinn_weight < 0.0:
            raise ValueError("data weight must be > 0 and PINN weight >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.width < 1:
            raise ValueError("epochs >= 0, batch size >= 1 and width >= 1 required")
        if not self.lr > 0.0 or self.eps < 0.0:
            raise ValueError("learning rate must be > 0 and eps >= 0")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NeuralModel:
    """Everything needed to turn bone positions into a cloth mesh."""

    rest_vertices: np.ndarray
    rest_bones: np.ndarray
    faces: np.ndarray
    sdf: AnalyticSdf
    eps: float
    skin_pca: PcaModel
    skin_net: Optional[Mlp2] = None
    shape_pca: Optional[PcaModel] = None
    shape_net: Optional[Mlp2] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return self.rest_vertices.shape[0]

    @property
    def n_bones(self) -> int:
        return self.rest_bones.shape[0]

    def save(self, path) -> None:
        arrays = {"rest_vertices": self.rest_vertices, "rest_bones": self.rest_bones, "faces": self.faces}
        arrays.update(self.skin_pca.arrays("skin_pca"))
        meta = {"kind": "model", "version": MODEL_VERSION, "sdf": self.sdf.to_list(), "eps": self.eps,
                "skin_padded": self.skin_pca.padded, "extra": self.meta}
        for name in ("skin_net", "shape_pca", "shape_net"):
            part = getattr(self, name)
            meta[f"has_{name}"] = part is not None
            if part is not None:
                arrays.update(part.arrays(name))
        for name in ("skin_net", "shape_net"):
            part = getattr(self, name)
            if part is not None:
                meta[f"{name}_activation"] = part.activation
        if self.shape_pca is not None:
            meta["shape_padded"] = self.shape_pca.padded
        rcf.write(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "NeuralModel":
        meta, arr = rcf.read(path)
        if meta.get("kind") != "model" or meta.get("version") != MODEL_VERSION:
            raise rcf.FormatError(f"{path}: not a version {MODEL_VERSION} model file")
        out = cls(arr["rest_vertices"], arr["rest_bones"], arr["faces"], AnalyticSdf.from_list(meta["sdf"]),
                  meta["eps"], PcaModel.from_arrays(arr, "skin_pca", meta["skin_padded"]), meta=meta["extra"])
        if meta["has_skin_net"]:
            out.skin_net = Mlp2.from_arrays(arr, "skin_net", meta["skin_net_activation"])
        if meta["has_shape_pca"]:
            out.shape_pca = PcaModel.from_arrays(arr, "shape_pca", meta["shape_padded"])
        if meta["has_shape_net"]:
            out.shape_net = Mlp2.from_arrays(arr, "shape_net", meta["shape_net_activation"])
        return out


# -- data preparation ------------------------------------------------------------

def dataset_frames(dataset):
    return [RigidFrame(translation=t) for t in dataset.translations]


def bone_inputs(bones: np.ndarray, translations: np.ndarray, rest_bones: np.ndarray) -> np.ndarray:
    """Network inputs: nonrigid bone displacements, one row per frame (translation-only frames)."""
    return (bones - translations[:, None, :] - rest_bones).reshape(bones.shape[0], -1)


def local_vertices(dataset) -> np.ndarray:
    return dataset.vertices - dataset.translations[:, None, :]


def model_from_dataset(dataset, k: int, eps: Optional[float] = None) -> NeuralModel:
    """Fit the skinning PCA on the training frames' nonrigid vertex displacements."""
    train = dataset.indices(dataset.TRAIN)
    disp = (local_vertices(dataset)[train] - dataset.rest_vertices).reshape(len(train), -1)
    return NeuralModel(dataset.rest_vertices.copy(), dataset.rest_bones.copy(), dataset.faces.copy(),
                       dataset.sdf(), float(dataset.meta.get("epsilon", 1e-3) if eps is None else eps),
                       fit_pca(disp, k), meta={"chain_sizes": dataset.meta.get("chain_sizes")})


def skinned_local(model: NeuralModel, inputs: np.ndarray) -> np.ndarray:
    """Skinning-network mesh in the rigid frame, ``(F, V, 3)``."""
    n = inputs.shape[0]
    if model.skin_net is None:
        coeffs = np.zeros((n, model.skin_pca.k))
    else:
        coeffs = model.skin_net.forward(inputs)[0]
    return model.rest_vertices + model.skin_pca.reconstruct(coeffs).reshape(n, -1, 3)


def predict_local(model: NeuralModel, inputs: np.ndarray, use_shape: bool = True) -> np.ndarray:
    out = skinned_local(model, inputs)
    if use_shape and model.shape_pca is not None and model.shape_net is not None:
        coeffs = model.shape_net.forward(inputs)[0]
        out = out + model.shape_pca.reconstruct(coeffs).reshape(out.shape)
    return out


def infer_mesh(model: NeuralModel, bone_positions: np.ndarray, frame: RigidFrame,
               use_shape: bool = True) -> np.ndarray:
    """World-space vertices for one frame of bone positions ``(B, 3)``."""
    bones = np.asarray(bone_positions, dtype=np.float64)
    if bones.shape != model.rest_bones.shape:
        raise ValueError(f"expected bones of shape {model.rest_bones.shape}, got {bones.shape}")
    inputs = nonrigid_displacement(bones, model.rest_bones, frame)[None, :]
    return frame.to_world(predict_local(model, inputs, use_shape)[0])


# -- training --------------------------------------------------------------------

@dataclass
class Metrics:
    data_loss: float  # mean per frame
    pinn_loss: float
    total: float
    rmse: float
    interpenetrating: int


def evaluate(pred: np.ndarray, truth: np.ndarray, sdf, cfg: TrainConfig) -> Metrics:
    n = max(pred.shape[0], 1)
    ld, _ = data_loss(pred, truth)
    lp, _, inside = pinn_collision_loss(pred, truth, sdf, cfg.eps)
    count = int(np.sum(sdf.phi(pred.reshape(-1, 3)) < 0.0))
    rmse = math.sqrt(ld / max(pred.shape[0] * pred.shape[1], 1))
    return Metrics(ld / n, lp / n, (cfg.data_weight * ld + cfg.pinn_weight * lp) / n, rmse, count)


@dataclass
class TrainResult:
    model: NeuralModel
    log: list
    best_epoch: int
    validation: Metrics


LOG_HEADER = ["epoch", "lr", "data_loss", "pinn_loss", "val_loss", "val_interpenetrating"]


def train(dataset, model: NeuralModel, cfg: TrainConfig, stage: str = SKINNING) -> TrainResult:
    """Train the skinning or the shape network; returns a new model with the best-validation net.

    The shape stage runs the (frozen) skinning net over the dataset, fits the
    residual PCA on the training frames, then fits the shape net to it.
    """
    if stage not in (SKINNING, SHAPE):
        raise ValueError(f"unknown stage {stage!r}")
    expected = 3 * model.n_bones
    inputs = bone_inputs(dataset.bones, dataset.translations, dataset.rest_bones)
    if inputs.shape[1] != expected or dataset.vertices.shape[1] != model.n_vertices:
        raise ValueError("dataset dimensions do not match the model")
    truth = local_vertices(dataset)
    train_idx = dataset.indices(dataset.TRAIN)
    val_idx = dataset.indices(dataset.VALIDATION)
    out = NeuralModel(model.rest_vertices, model.rest_bones, model.faces, model.sdf, model.eps, model.skin_pca,
                      model.skin_net, model.shape_pca, model.shape_net, dict(model.meta))

    if stage == SKINNING:
        base = np.broadcast_to(model.rest_vertices, truth.shape)
        pca = model.skin_pca
    else:
        if model.skin_net is None:
            raise ValueError("the shape stage needs a trained skinning network")
        base = skinned_local(model, inputs)
        residual = (truth - base)[train_idx].reshape(len(train_idx), -1)
        pca = fit_pca(residual, min(cfg.shape_k, residual.shape[1]))
        out.shape_pca = pca

    net = Mlp2.init(inputs.shape[1], pca.k, cfg.width, cfg.seed, cfg.activation)
    if stage == SHAPE:
        # start from "no correction": random residual coefficients would swamp the small residuals
        net.w3[:] = 0.0
        net.b3[:] = 0.0
    sdf = model.sdf
    n_v = model.n_vertices

    def predict(net_, idx):
        c = net_.forward(inputs[idx])[0]
        return base[idx] + pca.reconstruct(c).reshape(len(idx), n_v, 3)

    best = net.copy()
    best_epoch = -1
    best_metrics = evaluate(predict(net, val_idx), truth[val_idx], sdf, cfg) if len(val_idx) else None
    rng = np.random.default_rng(cfg.seed)
    adam = Adam()
    rows = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        order = rng.permutation(train_idx)
        sum_d = sum_p = 0.0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            c, cache = net.forward(inputs[b])
            pred = base[b] + pca.reconstruct(c).reshape(len(b), n_v, 3)
            ld, gd = data_loss(pred, truth[b])
            lp, gp, _ = pinn_collision_loss(pred, truth[b], sdf, cfg.eps)
            if not (math.isfinite(ld) and math.isfinite(lp)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (data {ld}, pinn {lp})")
            sum_d += ld
            sum_p += lp
            gx = (cfg.data_weight * gd + cfg.pinn_weight * gp) / len(b)
            grads = net.backward(cache, gx.reshape(len(b), -1) @ pca.basis)
            adam.update(net, grads, lr)
        n_train = max(len(order), 1)
        if len(val_idx):
            metrics = evaluate(predict(net, val_idx), truth[val_idx], sdf, cfg)
            if not math.isfinite(metrics.total):
                raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
            if metrics.total < best_metrics.total:
                best, best_epoch, best_metrics = net.copy(), epoch, metrics
            val_total, val_count = metrics.total, metrics.interpenetrating
        else:
            best, best_epoch = net.copy(), epoch
            val_total, val_count = float("nan"), 0
        rows.append([epoch, lr, sum_d / n_train, sum_p / n_train, val_total, val_count])
        log.debug("epoch %d lr %.3e data %.4e pinn %.4e val %.4e", epoch, lr, sum_d / n_train,
                  sum_p / n_train, val_total)

    if stage == SKINNING:
        out.skin_net = best
        # a new skinning net invalidates any residual model built on the old one
        out.shape_pca = out.shape_net = None
    else:
        out.shape_net = best
    out.meta[f"{stage}_config"] = asdict(cfg)
    out.meta[f"{stage}_best_epoch"] = best_epoch
    return TrainResult(out, rows, best_epoch, best_metrics)


def frame_metrics(model: NeuralModel, dataset, idx, cfg: TrainConfig, use_shape: bool = True) -> Metrics:
    inputs = bone_inputs(dataset.bones[idx], dataset.translations[idx], dataset.rest_bones)
    return evaluate(predict_local(model, inputs, use_shape), local_vertices(dataset)[idx], model.sdf, cfg)


def graph_laplacian_energy(basis: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """``sum_edges |b_i - b_j|^2`` for each column of a ``(3V, k)`` displacement basis."""
    b = np.asarray(basis).reshape(-1, 3, basis.shape[1])
    d = b[edges[:, 0]] - b[edges[:, 1]]
    return np.einsum("eck,eck->k", d, d)
