from __future__ import annotations

import logging
import math
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .exceptions import FeatureDimensionError, InsufficientDataError, TrainingDivergedError

logger = logging.getLogger(__file__)

VARIANCE_FLOOR = 1e-4
CONVERGENCE_TOL = 1e-6
LOG_2PI = math.log(2.0 * math.pi)

# A component whose total responsibility falls below this is treated as dead
# and keeps its previous mean and variance.
DEAD_COMPONENT_MASS = 1e-8


def _component_log_densities(
    x: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    """log w_k + log N(x_t; mu_k, diag var_k) as a (T, K) matrix."""
    log_norm = -0.5 * (means.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1))
    diff = x[:, None, :] - means[None, :, :]
    quad = -0.5 * np.sum(diff * diff / variances[None, :, :], axis=2)
    with np.errstate(divide="ignore"):
        log_weights = np.log(weights)
    return log_weights[None, :] + log_norm[None, :] + quad


class Gmm(BaseModel):
    """
    Diagonal-covariance Gaussian mixture.

    :param weights: (K,) mixture weights summing to one.
    :param means: (K, D) component means.
    :param variances: (K, D) positive component variances.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @model_validator(mode="before")
    @classmethod
    def _as_arrays(cls, data):
        if isinstance(data, dict):
            data = {
                key: np.array(data[key], dtype=np.float64) if key in data else None
                for key in ("weights", "means", "variances")
            }
        return data

    @model_validator(mode="after")
    def _check(self) -> "Gmm":
        w, mu, var = self.weights, self.means, self.variances
        if w.ndim != 1 or w.shape[0] < 1:
            raise ValueError("weights must be a non-empty vector")
        if mu.ndim != 2 or mu.shape[0] != w.shape[0] or var.shape != mu.shape:
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, variances {var.shape}"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ValueError("GMM parameters must be finite")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1, got sum {math.fsum(w)!r}")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        for array in (w, mu, var):
            array.flags.writeable = False
        return self

    @property
    def num_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_likelihood(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame log-likelihoods of a (T, D) matrix, computed in log space."""
        x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise FeatureDimensionError(f"expected {self.dim}-dimensional frames, got {x.shape[1]}")
        return logsumexp(
            _component_log_densities(x, self.weights, self.means, self.variances), axis=1
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        components = rng.choice(self.num_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[components] + np.sqrt(self.variances[components]) * noise


class GmmFit(BaseModel):
    """A fitted mixture with the total log-likelihood after every EM step."""

    gmm: Gmm
    history: List[float]
    iterations: int
    converged: bool


def _initial_parameters(x: np.ndarray, K: int, rng: np.random.Generator, variance_floor: float):
    n, D = x.shape
    global_var = np.maximum(x.var(axis=0), variance_floor)
    if K == 1:
        return np.ones(1), x.mean(axis=0, keepdims=True), global_var[None, :].copy()

    centroids, labels = kmeans2(x, K, minit="++", seed=rng, missing="warn")
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    weights = counts / n
    means = np.array(centroids, dtype=np.float64)
    variances = np.tile(global_var, (K, 1))
    for k in range(K):
        members = x[labels == k]
        if len(members) > 1:
            variances[k] = np.maximum(members.var(axis=0), variance_floor)
    return weights, means, variances


def fit_gmm(
    frames: np.ndarray,
    K: int,
    iters: int = 100,
    seed: int = 0,
    variance_floor: float = VARIANCE_FLOOR,
    name: str = "",
    tol: float = CONVERGENCE_TOL,
    callback: Optional[Callable[[int, float], None]] = None,
) -> GmmFit:
    """
    Fit a diagonal GMM by k-means-seeded EM.

    Stops after ``iters`` EM steps or once the per-frame log-likelihood
    improvement drops below ``tol``. ``history[0]`` is the log-likelihood of
    the k-means initialization.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise FeatureDimensionError("training frames must be a (T, D) matrix")
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if iters < 1:
        raise ValueError(f"iters must be at least 1, got {iters}")
    n, D = x.shape
    if n < K * D:
        raise InsufficientDataError(name, n, K * D)

    rng = np.random.default_rng(seed)
    weights, means, variances = _initial_parameters(x, K, rng, variance_floor)

    log_px = logsumexp(_component_log_densities(x, weights, means, variances), axis=1)
    history = [math.fsum(log_px)]
    converged = False
    iteration = 0
    for iteration in range(1, iters + 1):
        # E-step
        log_joint = _component_log_densities(x, weights, means, variances)
        resp = np.exp(log_joint - log_px[:, None])

        # M-step
        mass = resp.sum(axis=0)
        alive = mass >= DEAD_COMPONENT_MASS
        new_means = means.copy()
        new_variances = variances.copy()
        new_means[alive] = (resp[:, alive].T @ x) / mass[alive, None]
        for k in np.flatnonzero(alive):
            diff = x - new_means[k]
            new_variances[k] = (resp[:, k] @ (diff * diff)) / mass[k]
        new_variances = np.maximum(new_variances, variance_floor)
        new_weights = mass / mass.sum()

        if not (
            np.all(np.isfinite(new_weights))
            and np.all(np.isfinite(new_means))
            and np.all(np.isfinite(new_variances))
        ):
            raise TrainingDivergedError(name, iteration)
        weights, means, variances = new_weights, new_means, new_variances

        log_px = logsumexp(_component_log_densities(x, weights, means, variances), axis=1)
        total = math.fsum(log_px)
        if not math.isfinite(total):
            raise TrainingDivergedError(name, iteration)
        improvement = total - history[-1]
        history.append(total)
        if callback is not None:
            callback(iteration, total)
        if improvement / n < tol:
            converged = True
            break

    logger.debug(
        "EM for '%s': %d iterations, log-likelihood %.6f", name, iteration, history[-1]
    )
    return GmmFit(
        gmm=Gmm(weights=weights, means=means, variances=variances),
        history=history,
        iterations=iteration,
        converged=converged,
    )
