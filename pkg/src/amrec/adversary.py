"""Feature-space perturbations under an L2 budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, ModelParams
from .objective import grad_perturbation


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    budget: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.delta, dtype=dtype)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))


def _check_eps(epsilon):
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")


def fgm_directions(gamma: np.ndarray, epsilon: float) -> np.ndarray:
    """Row-wise ``epsilon * g / |g|``; rows with zero gradient stay zero."""
    _check_eps(epsilon)
    gamma = np.asarray(gamma, dtype=np.float64)
    norms = np.linalg.norm(gamma, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, epsilon * gamma / safe, 0.0)


def fgm_perturbation(gamma, epsilon: float) -> Perturbation:
    return Perturbation(fgm_directions(gamma, epsilon), epsilon)


def sign_perturbation(gamma, epsilon: float) -> Perturbation:
    """``epsilon * sign(gamma)``. Bounds the L-inf norm, so the L2 norm can exceed epsilon."""
    _check_eps(epsilon)
    return Perturbation(epsilon * np.sign(np.asarray(gamma, dtype=np.float64)), epsilon)


def random_directions(shape, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform directions on the epsilon-sphere, one per row of ``shape``."""
    _check_eps(epsilon)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return epsilon * g / norms


def random_perturbation(dim: int, epsilon: float, rng: np.random.Generator) -> Perturbation:
    return Perturbation(random_directions((dim,), epsilon, rng), epsilon)


def attack_instance(params: ModelParams, triple, feats: FeatureMatrix,
                    epsilon: float) -> tuple[Perturbation, Perturbation]:
    """Worst-case (linearized) perturbations of the positive and negative item."""
    g = grad_perturbation(params, triple, feats)
    return fgm_perturbation(g.gamma_i, epsilon), fgm_perturbation(g.gamma_j, epsilon)


def batch_item_perturbations(items_i, items_j, gamma_i, gamma_j, epsilon: float):
    """Mini-batch adversary.

    The perturbed loss of a batch is the sum over its triples, so an item that
    shows up in several triples (as positive or negative) gets the sum of its
    gradients before normalisation. Returns per-instance (delta_i, delta_j).
    """
    items = np.concatenate([items_i, items_j])
    grads = np.concatenate([gamma_i, gamma_j])
    uniq, inv = np.unique(items, return_inverse=True)
    total = np.zeros((uniq.size, grads.shape[1]))
    np.add.at(total, inv, grads)
    deltas = fgm_directions(total, epsilon)
    B = len(items_i)
    return deltas[inv[:B]], deltas[inv[B:]]
