"""Cascade amplifier regression network for spinal height estimation.

A self-contained stack: a small reverse-mode autodiff engine, the gated
amplifier-unit backbone with a linear regression head, simplex-constrained
local anchor embedding for manifold-regularized training, a synthetic
spine-phantom dataset, and a four-configuration benchmark harness exposed
through a CLI and an HTTP service.
"""

from .amplifier import AUParams, amplification_factor, au_forward
from .experiment import ExperimentConfig, load_config
from .lae import knn_targets, lae_solve, project_simplex, reconstruct
from .losses import LossConfig, ReconstructionTable, loss_l, loss_p, loss_t, \
    precompute_reconstructions
from .model import CARNConfig, ModelParams, build_model, embedding, forward
from .phantom import DatasetManifest, PhantomSpec, generate_dataset, \
    latent_to_indices, read_dataset, render_phantom
from .tensor import Tensor
from .training import Adam, MetricsReport, TrainingDivergence, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AUParams", "amplification_factor", "au_forward",
    "ExperimentConfig", "load_config",
    "knn_targets", "lae_solve", "project_simplex", "reconstruct",
    "LossConfig", "ReconstructionTable", "loss_l", "loss_p", "loss_t",
    "precompute_reconstructions",
    "CARNConfig", "ModelParams", "build_model", "embedding", "forward",
    "DatasetManifest", "PhantomSpec", "generate_dataset", "latent_to_indices",
    "read_dataset", "render_phantom",
    "Tensor",
    "Adam", "MetricsReport", "TrainingDivergence", "evaluate", "train",
    "__version__",
]
