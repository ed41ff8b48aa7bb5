"""Local linear representation of regression targets.

For each target vector, find its k nearest neighbors in label space and
solve for the simplex-constrained least-squares coefficients that best
reconstruct it from them (local anchor embedding). The solver is
accelerated projected gradient with an exact Euclidean simplex projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_ITERS = 500
POWER_STEPS = 50
STOP_TOL = 1e-10


@dataclass
class NeighborSet:
    """k training-sample indices sorted by distance to the query (ties by
    ascending index), with their target vectors."""

    indices: np.ndarray
    targets: np.ndarray


def knn_targets(Y, i, k):
    """The k targets nearest to Y[i] in Euclidean distance, excluding i itself."""
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    if not 0 <= i < n:
        raise ValueError(f"query index {i} out of range for {n} samples")
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n_samples={n}, got {k}")
    dist = np.linalg.norm(Y - Y[i], axis=1)
    dist[i] = np.inf
    order = np.argsort(dist, kind="stable")[:k]
    return NeighborSet(indices=order, targets=Y[order])


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort + threshold)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex expects a non-empty 1-d vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css - 1.0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _objective(alpha, B, y):
    r = y - B.T @ alpha
    return 0.5 * float(r @ r)


def lae_solve(y, B):
    """Minimize 0.5 * ||y - B.T @ alpha||^2 over the probability simplex.

    ``B`` holds the k neighbor targets as rows. Accelerated projected
    gradient with step 1/L, L estimated by power iteration on B @ B.T;
    stops when the objective change drops below 1e-10 or after 500
    iterations. Returns the best iterate seen.
    """
    y = np.asarray(y, dtype=np.float64)
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    k = B.shape[0]
    if k == 0:
        raise ValueError("lae_solve needs at least one neighbor")
    if B.shape[1] != y.shape[0]:
        raise ValueError(f"neighbor dim {B.shape[1]} != target dim {y.shape[0]}")

    G = B @ B.T
    c = B @ y
    v = np.ones(k) / np.sqrt(k)
    for _ in range(POWER_STEPS):
        w = G @ v
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            break
        v = w / norm
    L = float(v @ G @ v)
    alpha = np.ones(k) / k
    if L <= 1e-12:
        return alpha  # degenerate neighbors (all ~zero); any simplex point ties

    z = alpha.copy()
    t = 1.0
    best = alpha.copy()
    best_obj = _objective(alpha, B, y)
    prev_obj = best_obj
    for _ in range(MAX_ITERS):
        grad = G @ z - c
        alpha_next = project_simplex(z - grad / L)
        obj = _objective(alpha_next, B, y)
        if obj < best_obj:
            best, best_obj = alpha_next, obj
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = alpha_next + ((t - 1.0) / t_next) * (alpha_next - alpha)
        alpha, t = alpha_next, t_next
        if abs(prev_obj - obj) < STOP_TOL:
            break
        prev_obj = obj

    best = np.maximum(best, 0.0)
    best /= best.sum()
    return best


def reconstruct(B, alpha):
    """Convex combination of the neighbor rows: sum_j alpha_j * B[j]."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[0] != B.shape[0]:
        raise ValueError(f"{alpha.shape[0]} coefficients for {B.shape[0]} neighbors")
    return B.T @ alpha
