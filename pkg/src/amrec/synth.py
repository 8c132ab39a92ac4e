"""Synthetic implicit-feedback data with linearly generated item content features."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import FeatureMatrix, InteractionDataset, write_fmat


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 500
    num_items: int = 1000
    latent_dim: int = 8
    feature_dim: int = 16
    noise_std: float = 0.1
    interactions_per_user: int = 10
    seed: int = 0
    temperature: float = 0.1     # sharpness of choice among top-scoring items
    popularity: float = 0.0      # std of a per-item log-popularity offset

    def __post_init__(self):
        for name in ("num_users", "num_items", "latent_dim", "feature_dim", "interactions_per_user"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.interactions_per_user > self.num_items:
            raise ValueError("interactions_per_user exceeds num_items")
        if self.noise_std < 0 or self.temperature <= 0:
            raise ValueError("noise_std must be >= 0 and temperature > 0")


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    interactions: InteractionDataset
    features: FeatureMatrix
    user_latents: np.ndarray
    item_latents: np.ndarray
    projection: np.ndarray


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Users and items get Gaussian latent vectors (unit expected norm); item
    features are ``projection @ item_latent`` plus Gaussian noise. Each user
    picks ``interactions_per_user`` distinct items by Gumbel-top-k over
    ``score / temperature``, i.e. sampling without replacement from a softmax
    concentrated on its top-scoring items."""
    rng = np.random.default_rng(spec.seed)
    k = spec.latent_dim
    W = rng.normal(0.0, 1.0 / np.sqrt(k), size=(spec.num_users, k))
    V = rng.normal(0.0, 1.0 / np.sqrt(k), size=(spec.num_items, k))
    M = rng.normal(0.0, 1.0 / np.sqrt(spec.feature_dim), size=(spec.feature_dim, k))
    feats = V @ M.T + rng.normal(0.0, spec.noise_std, size=(spec.num_items, spec.feature_dim))

    logits = (W @ V.T) / spec.temperature
    if spec.popularity > 0:
        logits = logits + rng.normal(0.0, spec.popularity, size=spec.num_items)
    logits = logits + rng.gumbel(size=logits.shape)
    n = spec.interactions_per_user
    top = np.argpartition(-logits, n - 1, axis=1)[:, :n]
    top = np.take_along_axis(top, np.argsort(-np.take_along_axis(logits, top, axis=1), axis=1), axis=1)
    users = np.repeat(np.arange(spec.num_users), n)
    data = InteractionDataset(spec.num_users, spec.num_items, users, top.reshape(-1),
                              tuple(f"u{u:05d}" for u in range(spec.num_users)),
                              tuple(f"i{i:05d}" for i in range(spec.num_items)))
    return SyntheticData(spec, data, FeatureMatrix(feats), W, V, M)


def write_synthetic(spec: SyntheticSpec, out_dir) -> SyntheticData:
    """Write ``interactions.tsv``, ``items.txt`` (feature row order),
    ``features.fmat``, ``truth.npy`` and ``synth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    syn = generate(spec)
    d = syn.interactions
    with open(out / "interactions.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(d.users, d.items):
            fh.write(f"{d.user_ids[u]}\t{d.item_ids[i]}\n")
    (out / "items.txt").write_text("".join(f"{s}\n" for s in d.item_ids), encoding="utf-8")
    write_fmat(out / "features.fmat", syn.features.rows)
    with open(out / "truth.npy", "wb") as fh:
        # three concatenated .npy records; np.savez would stamp zip entries with mtimes
        for arr in (syn.user_latents, syn.item_latents, syn.projection):
            np.save(fh, arr)
    (out / "synth.json").write_text(json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return syn


def read_truth(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        return np.load(fh), np.load(fh), np.load(fh)
