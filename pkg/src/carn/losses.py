"""Training losses: mean-absolute-error with weight-norm regularization,
the manifold term pulling predictions toward the local linear
reconstruction of their target, and their weighted sum.

Reconstructions depend only on the training targets, so they are computed
once up front and treated as constants during backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from . import tensor as T
from .lae import knn_targets, lae_solve, reconstruct
from .tensor import Tensor


@dataclass
class LossConfig:
    """Weights of the loss terms and the neighbor count for reconstructions.

    ``lambda_l`` = 0 reduces the total loss to the preliminary loss exactly.
    ``squared_weight_norm`` switches the regularizer from summed Euclidean
    norms (the default reading) to summed squared norms (standard weight
    decay).
    """

    lambda_l: float = 1.0
    lambda_p: float = 1e-4
    k: int = 5
    squared_weight_norm: bool = False

    def __post_init__(self):
        if self.lambda_l < 0 or self.lambda_p < 0:
            raise ValueError("loss weights must be non-negative")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass
class ReconstructionTable:
    """Per-sample local linear reconstructions of the training targets.

    Row i is built from sample i's neighbors with i itself excluded, so the
    table never degenerates to the identity.
    """

    y_tilde: np.ndarray
    alphas: np.ndarray
    neighbors: np.ndarray

    def save(self, path):
        checkpoint.write_container(
            path,
            {"kind": "reconstruction_table", "k": int(self.alphas.shape[1])},
            {"y_tilde": self.y_tilde, "alphas": self.alphas,
             "neighbors": self.neighbors.astype(np.int64)},
        )

    @classmethod
    def load(cls, path):
        meta, arrays = checkpoint.read_container(path)
        if meta.get("kind") != "reconstruction_table":
            raise ValueError(f"container {path} does not hold a reconstruction table")
        return cls(arrays["y_tilde"], arrays["alphas"], arrays["neighbors"])


def _as_constant(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=like.data.dtype)


def weight_penalty(weights, lambda_p, squared=False):
    """lambda_p times the sum of (squared) Euclidean norms of the weights."""
    if lambda_p == 0 or not weights:
        return None
    terms = []
    for w in weights:
        terms.append(T.sum_all(T.mul(w, w)) if squared else T.l2_norm(w))
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return T.scale(total, lambda_p)


def loss_p(pred, target, weights, lambda_p, squared_weight_norm=False):
    """Mean absolute error plus weight-norm regularization.

    ``weights`` should contain only the trainable weight matrices/kernels
    (no biases, no batch-norm parameters).
    """
    target = _as_constant(target, pred)
    if target.data.shape != pred.data.shape:
        raise ValueError(f"pred {pred.data.shape} vs target {target.data.shape}")
    mae = T.mean_all(T.absolute(T.sub(pred, target)))
    penalty = weight_penalty(weights, lambda_p, squared_weight_norm)
    return mae if penalty is None else T.add(mae, penalty)


def loss_l(pred, y_tilde):
    """Mean absolute distance to the manifold reconstructions (constants)."""
    y_tilde = _as_constant(y_tilde, pred)
    if y_tilde.data.shape != pred.data.shape:
        raise ValueError(f"pred {pred.data.shape} vs y_tilde {y_tilde.data.shape}")
    return T.mean_all(T.absolute(T.sub(pred, y_tilde)))


def loss_t(pred, target, y_tilde, weights, cfg):
    """loss_p + lambda_l * loss_l; the lambda_l = 0 case is exactly loss_p."""
    base = loss_p(pred, target, weights, cfg.lambda_p, cfg.squared_weight_norm)
    if cfg.lambda_l == 0:
        return base
    return T.add(base, T.scale(loss_l(pred, y_tilde), cfg.lambda_l))


def precompute_reconstructions(Y, k):
    """Build the reconstruction table for all N training targets.

    Deterministic for fixed (Y, k); independent of images and model state.
    """
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if n <= k:
        raise ValueError(f"need more samples than neighbors: N={n}, k={k}")
    y_tilde = np.empty_like(Y)
    alphas = np.empty((n, k))
    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        ns = knn_targets(Y, i, k)
        alpha = lae_solve(Y[i], ns.targets)
        y_tilde[i] = reconstruct(ns.targets, alpha)
        alphas[i] = alpha
        neighbors[i] = ns.indices
    return ReconstructionTable(y_tilde=y_tilde, alphas=alphas, neighbors=neighbors)
