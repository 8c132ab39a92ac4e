"""Test-time feature attacks: performance drop and rank-shift analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adversary import random_directions
from .data import FeatureMatrix, ModelParams, SplitDataset
from .evaluate import (NUM_NEGATIVES, MetricsReport, build_trials, rank_from_scores,
                       score_candidates)
from .model import ModelKind, item_latents

ATTACK_MODES = ("fgm", "sign", "random")


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "fgm"
    epsilon: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def _feature_direction(params: ModelParams, u: int, kind: ModelKind) -> np.ndarray:
    # gradient of the score p_u^T E (c + delta) w.r.t. delta
    if kind is ModelKind.MF:
        return np.zeros(params.D)
    return params.P[u] @ params.E


def perturb_scores(scores: np.ndarray, direction: np.ndarray, cfg: AttackConfig,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Shift candidate scores (held-out item first) by the attack's feature perturbations.

    A perturbation ``delta`` on item k moves its score by ``direction . delta``.
    The gradient modes push the held-out item down and every negative up.
    """
    if cfg.epsilon == 0.0:
        return scores.copy()
    out = np.asarray(scores, dtype=np.float64).copy()
    if cfg.mode == "random":
        if rng is None:
            raise ValueError("random attack needs an rng")
        deltas = random_directions((out.size, direction.size), cfg.epsilon, rng)
        return out + deltas @ direction
    if cfg.mode == "fgm":
        gain = cfg.epsilon * np.linalg.norm(direction)
    else:
        gain = cfg.epsilon * np.abs(direction).sum()
    out[0] -= gain
    out[1:] += gain
    return out


def _attack_rng(cfg: AttackConfig, u: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, u, 0xA77])


def attacked_rank(params: ModelParams, u: int, candidates: np.ndarray, feats: FeatureMatrix,
                  cfg: AttackConfig, kind=ModelKind.VBPR_ADJ,
                  cold_mask: Optional[np.ndarray] = None) -> int:
    kind = ModelKind.parse(kind)
    candidates = np.asarray(candidates)
    Z = item_latents(params, feats, kind, cold_mask)[candidates]
    scores = Z @ params.P[u]
    direction = _feature_direction(params, u, kind)
    return rank_from_scores(perturb_scores(scores, direction, cfg, _attack_rng(cfg, u)))


def _ranks(params, split, feats, kind, cfg: Optional[AttackConfig], seed, count):
    trials = build_trials(split, seed, "test", count)
    Z = item_latents(params, feats, kind, split.cold_mask)
    clean, attacked = [], []
    for u, scores in score_candidates(Z, params.P, trials):
        clean.append(rank_from_scores(scores))
        if cfg is not None:
            direction = _feature_direction(params, u, kind)
            attacked.append(rank_from_scores(perturb_scores(scores, direction, cfg, _attack_rng(cfg, u))))
    return trials, np.array(clean, dtype=np.int64), np.array(attacked, dtype=np.int64)


def attack_eval(params: ModelParams, split: SplitDataset, feats: FeatureMatrix, kind,
                cfg: AttackConfig, Ns: Sequence[int] = (5, 10, 20), seed: int = 0,
                count: int = NUM_NEGATIVES, name: Optional[str] = None) -> MetricsReport:
    """Evaluate under attack using the same candidate sets as clean evaluation."""
    kind = ModelKind.parse(kind)
    trials, _, attacked = _ranks(params, split, feats, kind, cfg, seed, count)
    extra = {"attack": {"mode": cfg.mode, "epsilon": cfg.epsilon, "seed": cfg.seed}}
    return MetricsReport(name or kind.value, seed, trials.users, attacked, tuple(Ns), extra)


def perf_drop(clean: MetricsReport, attacked: MetricsReport, metric: str = "NDCG@10") -> Optional[float]:
    """Signed relative change (attacked - clean) / clean; ``None`` if clean is 0."""
    if not np.array_equal(clean.users, attacked.users):
        raise ValueError("reports cover different users")
    c = clean.metrics[metric]
    if c == 0:
        return None
    return (attacked.metrics[metric] - c) / c


@dataclass
class RankShift:
    shifts: np.ndarray
    edges: np.ndarray
    counts: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.shifts.mean()) if self.shifts.size else 0.0

    @property
    def var(self) -> float:
        return float(self.shifts.var()) if self.shifts.size else 0.0


def rank_shift_distribution(params: ModelParams, split: SplitDataset, feats: FeatureMatrix, kind,
                            cfg: AttackConfig, seed: int = 0, count: int = NUM_NEGATIVES,
                            bins: int = 40) -> RankShift:
    """Per-trial ``rank_after - rank_before`` plus a histogram over
    [-count, count]."""
    kind = ModelKind.parse(kind)
    _, clean, attacked = _ranks(params, split, feats, kind, cfg, seed, count)
    shifts = attacked - clean
    edges = np.linspace(-count, count, bins + 1)
    counts, _ = np.histogram(shifts, bins=edges)
    return RankShift(shifts, edges, counts)


def write_drop_table(rows, path) -> None:
    """Rows of (model, mode, epsilon, metric, clean, attacked, drop)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mode", "epsilon", "metric", "clean", "attacked", "drop"])
        for r in rows:
            w.writerow(["" if v is None else v for v in r])


def write_histogram(rs: RankShift, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(rs.edges[:-1], rs.edges[1:], rs.counts):
            w.writerow([float(lo), float(hi), int(c)])
