"""Preference scoring for MF, DUIF and the single-embedding visual model."""

from __future__ import annotations

import enum

import numpy as np

from .data import FeatureMatrix, ModelParams


class ModelKind(str, enum.Enum):
    MF = "MF"
    DUIF = "DUIF"
    VBPR_ADJ = "VBPR_ADJ"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        value = str(value).upper()
        aliases = {"VBPR": cls.VBPR_ADJ, "AMR": cls.VBPR_ADJ}
        return aliases.get(value) or cls(value)


def _c(feats: FeatureMatrix, i) -> np.ndarray:
    return np.asarray(feats.rows[i], dtype=np.float64)


def item_latent(params: ModelParams, i: int, feats: FeatureMatrix, cold: bool = False) -> np.ndarray:
    """``q_i + E c_i``; the ID embedding is dropped for cold items."""
    z = params.E @ _c(feats, i)
    if not cold:
        z = z + params.Q[i]
    return z


def item_latents(params: ModelParams, feats: FeatureMatrix, kind=ModelKind.VBPR_ADJ,
                 cold_mask: np.ndarray | None = None) -> np.ndarray:
    """Latent vectors for every item, shape (num_items, K)."""
    kind = ModelKind.parse(kind)
    if kind is ModelKind.DUIF:
        return np.asarray(feats.rows, dtype=np.float64) @ params.E.T
    Q = params.Q
    if cold_mask is not None and cold_mask.any():
        Q = np.where(cold_mask[:, None], 0.0, Q)
    if kind is ModelKind.MF:
        return Q.copy()
    return Q + np.asarray(feats.rows, dtype=np.float64) @ params.E.T


def predict(params: ModelParams, u: int, i: int, feats: FeatureMatrix,
            kind=ModelKind.VBPR_ADJ, cold: bool = False) -> float:
    kind = ModelKind.parse(kind)
    p = params.P[u]
    if kind is ModelKind.MF:
        return 0.0 if cold else float(p @ params.Q[i])
    if kind is ModelKind.DUIF:
        return float(p @ (params.E @ _c(feats, i)))
    return float(p @ item_latent(params, i, feats, cold))


def predict_perturbed(params: ModelParams, u: int, i: int, feats: FeatureMatrix,
                      delta_i: np.ndarray, cold: bool = False) -> float:
    """Score with the item's features shifted by ``delta_i``."""
    delta_i = np.asarray(delta_i, dtype=np.float64)
    if delta_i.shape != (params.D,):
        raise ValueError(f"perturbation must have shape ({params.D},)")
    z = params.E @ (_c(feats, i) + delta_i)
    if not cold:
        z = z + params.Q[i]
    return float(params.P[u] @ z)
