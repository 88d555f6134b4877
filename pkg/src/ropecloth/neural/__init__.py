"""PCA subspaces and the skinning / shape networks."""

from .losses import data_loss, pinn_collision_loss, pushout_targets
from .mlp import Adam, Mlp2, cosine_lr, mlp_forward, mlp_gradients
from .pca import PcaModel, fit_pca
from .training import (NeuralModel, RigidFrame, TrainConfig, TrainingDiverged, infer_mesh, model_from_dataset,
                       nonrigid_displacement, train)

__all__ = ["data_loss", "pinn_collision_loss", "pushout_targets", "Adam", "Mlp2", "cosine_lr", "mlp_forward",
           "mlp_gradients", "PcaModel", "fit_pca", "NeuralModel", "RigidFrame", "TrainConfig", "TrainingDiverged",
           "infer_mesh", "model_from_dataset", "nonrigid_displacement", "train"]
