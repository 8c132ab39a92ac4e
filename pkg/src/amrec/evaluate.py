"""Leave-one-out ranking evaluation against sampled negatives."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .data import FeatureMatrix, ModelParams, SplitDataset
from .model import ModelKind, item_latents

NUM_NEGATIVES = 999


def hr_at_n(rank: int, n: int) -> int:
    return int(rank <= n)


def ndcg_at_n(rank: int, n: int) -> float:
    return 1.0 / np.log2(rank + 1) if rank <= n else 0.0


def sample_negatives(split: SplitDataset, u: int, count: int = NUM_NEGATIVES,
                     seed: int = 0) -> tuple[np.ndarray, bool]:
    """Uniform negatives for ``u`` without replacement.

    Anything the user touched in train, validation or test is excluded; cold
    items are allowed. Returns ``(items, short)`` where ``short`` flags a pool
    smaller than ``count`` (all of it is returned then).
    """
    eligible = np.setdiff1d(np.arange(split.num_items), split.interacted(u), assume_unique=True)
    if eligible.size == 0:
        raise ValueError(f"user {u} has no eligible negative items")
    if eligible.size <= count:
        return eligible, eligible.size < count
    rng = np.random.default_rng([seed, u])
    return rng.choice(eligible, size=count, replace=False), False


@dataclass(frozen=True)
class Trials:
    """Per-user candidate lists; ``candidates[k][0]`` is the held-out item."""

    users: np.ndarray
    candidates: tuple
    short: np.ndarray

    @property
    def targets(self) -> np.ndarray:
        return np.array([c[0] for c in self.candidates], dtype=np.int64)


def build_trials(split: SplitDataset, seed: int = 0, target: str = "test",
                 count: int = NUM_NEGATIVES) -> Trials:
    """Candidate sets for every held-out user; cached on the split so that
    repeated evaluations (and different models) share them."""
    cache = split.__dict__.setdefault("_trial_cache", {})
    key = (seed, target, count)
    if key not in cache:
        held = getattr(split, target)
        users = np.array(sorted(held), dtype=np.int64)
        cands, short = [], []
        for u in users:
            neg, s = sample_negatives(split, int(u), count, seed)
            cands.append(np.concatenate([[held[int(u)]], neg]).astype(np.int64))
            short.append(s)
        cache[key] = Trials(users, tuple(cands), np.array(short, dtype=bool))
    return cache[key]


def rank_from_scores(scores: np.ndarray) -> int:
    """1-based rank of ``scores[0]``; ties go to the held-out item."""
    return 1 + int(np.count_nonzero(scores[1:] > scores[0]))


def rank_test_item(params: ModelParams, u: int, candidates: np.ndarray, feats: FeatureMatrix,
                   kind=ModelKind.VBPR_ADJ, cold_mask: Optional[np.ndarray] = None) -> int:
    """Rank of ``candidates[0]`` among ``candidates`` for user ``u``."""
    candidates = np.asarray(candidates)
    sub = FeatureMatrix(np.asarray(feats.rows)[candidates])
    sub_params = ModelParams(params.P, params.Q[candidates], params.E)
    mask = None if cold_mask is None else cold_mask[candidates]
    Z = item_latents(sub_params, sub, kind, mask)
    return rank_from_scores(Z @ params.P[u])


@dataclass
class MetricsReport:
    model: str
    seed: int
    users: np.ndarray
    ranks: np.ndarray
    Ns: tuple = (5, 10, 20)
    extra: dict = field(default_factory=dict)

    @property
    def metrics(self) -> dict:
        out = {}
        for n in self.Ns:
            out[f"HR@{n}"] = float(np.mean(self.per_user(f"HR@{n}"))) if self.ranks.size else 0.0
        for n in self.Ns:
            out[f"NDCG@{n}"] = float(np.mean(self.per_user(f"NDCG@{n}"))) if self.ranks.size else 0.0
        return out

    def per_user(self, name: str) -> np.ndarray:
        metric, n = name.split("@")
        n = int(n)
        if metric == "HR":
            return (self.ranks <= n).astype(np.float64)
        if metric == "NDCG":
            return np.where(self.ranks <= n, 1.0 / np.log2(self.ranks + 1.0), 0.0)
        raise KeyError(name)

    def to_dict(self) -> dict:
        d = {"model": self.model, "seed": self.seed, "metrics": self.metrics,
             "users": int(self.users.size)}
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def score_candidates(Z: np.ndarray, P: np.ndarray, trials: Trials):
    """Yield (user, candidate scores) in user order."""
    for u, cands in zip(trials.users, trials.candidates):
        yield int(u), Z[cands] @ P[u]


def evaluate(params: ModelParams, split: SplitDataset, feats: FeatureMatrix, kind=ModelKind.VBPR_ADJ,
             Ns: Sequence[int] = (5, 10, 20), seed: int = 0, target: str = "test",
             count: int = NUM_NEGATIVES, name: Optional[str] = None) -> MetricsReport:
    kind = ModelKind.parse(kind)
    trials = build_trials(split, seed, target, count)
    Z = item_latents(params, feats, kind, split.cold_mask)
    ranks = np.array([rank_from_scores(s) for _, s in score_candidates(Z, params.P, trials)],
                     dtype=np.int64)
    return MetricsReport(name or kind.value, seed, trials.users, ranks, tuple(Ns))


def pop_rank(split: SplitDataset, u: int, candidates: np.ndarray) -> int:
    """Rank of ``candidates[0]`` by train popularity, ties broken by lower index."""
    del u  # non-personalised
    counts = split.train.item_counts()
    candidates = np.asarray(candidates)
    t = candidates[0]
    rest = candidates[1:]
    ahead = (counts[rest] > counts[t]) | ((counts[rest] == counts[t]) & (rest < t))
    return 1 + int(np.count_nonzero(ahead))


def evaluate_pop(split: SplitDataset, Ns=(5, 10, 20), seed: int = 0, target: str = "test",
                 count: int = NUM_NEGATIVES) -> MetricsReport:
    trials = build_trials(split, seed, target, count)
    ranks = np.array([pop_rank(split, int(u), c) for u, c in zip(trials.users, trials.candidates)],
                     dtype=np.int64)
    return MetricsReport("POP", seed, trials.users, ranks, tuple(Ns))


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on per-user differences ``a - b``.

    With zero variance in the differences p is 1 when the mean difference is
    zero and 0 otherwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    if np.all(d == d[0]):
        mean = float(d[0])
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, mean)), 0.0
    res = stats.ttest_rel(a, b)
    return float(res.statistic), float(res.pvalue)
