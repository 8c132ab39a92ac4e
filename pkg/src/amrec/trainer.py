"""Mini-batch Adagrad training for MF-BPR, DUIF, VBPR and AMR."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import adversary
from .data import (FeatureMatrix, HyperParams, ModelParams, SplitDataset, _TripleSampler,
                   init_params, load_params, save_params)
from .objective import batch_loss_and_grads, batch_perturbation_grads

logger = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8
TRAIN_KINDS = ("mf", "duif", "vbpr", "amr")


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    kind: str
    hp: HyperParams
    pretrain: Optional[str] = None   # snapshot directory to start from
    eval_every: int = 0              # epochs between validation evaluations, 0 = never
    patience: int = 0                # 0 disables early stopping
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.kind not in TRAIN_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {TRAIN_KINDS}")

    @property
    def score_kind(self) -> str:
        return {"mf": "MF", "duif": "DUIF"}.get(self.kind, "VBPR_ADJ")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    seconds: float
    hr10: Optional[float] = None
    ndcg10: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "loss": self.loss, "seconds": self.seconds,
                           "HR@10": self.hr10, "NDCG@10": self.ndcg10})


def adagrad_update(theta, grad, accumulator, eta: float):
    """One Adagrad step. Returns new ``(theta, accumulator)``."""
    accumulator = accumulator + grad * grad
    theta = theta - eta * grad / (np.sqrt(accumulator) + ADAGRAD_EPS)
    return theta, accumulator


def _adagrad_rows(theta, acc, rows, grads, eta):
    """In-place Adagrad on the rows of ``theta`` hit by the batch; repeated rows
    have their gradients summed first."""
    uniq, inv = np.unique(rows, return_inverse=True)
    g = np.zeros((uniq.size, theta.shape[1]))
    np.add.at(g, inv, grads)
    theta[uniq], acc[uniq] = adagrad_update(theta[uniq], g, acc[uniq], eta)


def train_epoch(params: ModelParams, split: SplitDataset, feats: FeatureMatrix,
                config: TrainConfig, rng: np.random.Generator,
                sampler: Optional[_TripleSampler] = None) -> EpochStats:
    """One pass of ceil(|train| / batch_size) sampled mini-batches; updates ``params`` in place."""
    hp = config.hp
    sampler = sampler or _TripleSampler(split)
    use_ids = config.kind != "duif"
    use_features = config.kind != "mf"
    adversarial = config.kind == "amr"
    lam = hp.lam if adversarial else 0.0
    C = np.asarray(feats.rows, dtype=np.float64)

    n = len(split.train)
    n_batches = math.ceil(n / hp.batch_size)
    start = time.perf_counter()
    total = 0.0
    for b in range(n_batches):
        size = min(hp.batch_size, n - b * hp.batch_size)
        u, i, j = sampler.sample(size, rng)
        pu, qi, qj = params.P[u], params.Q[i], params.Q[j]
        ci, cj = C[i], C[j]
        di = dj = None
        if adversarial:
            gi, gj = batch_perturbation_grads(pu, qi, qj, params.E, ci, cj)
            di, dj = adversary.batch_item_perturbations(i, j, gi, gj, hp.epsilon)
        t = batch_loss_and_grads(pu, qi, qj, params.E, ci, cj, di, dj, lam=lam, beta=hp.beta,
                                 use_ids=use_ids, use_features=use_features)
        batch_loss = float(t.loss.sum())
        if not math.isfinite(batch_loss):
            raise NumericalError(f"non-finite loss in batch {b}: kind={config.kind} "
                                 f"max|P|={np.abs(params.P).max():.3g} max|E|={np.abs(params.E).max():.3g}")
        total += batch_loss
        _adagrad_rows(params.P, params.acc_P, u, t.g_pu, hp.eta)
        if use_ids:
            _adagrad_rows(params.Q, params.acc_Q, np.concatenate([i, j]),
                          np.concatenate([t.g_qi, t.g_qj]), hp.eta)
        if use_features:
            params.E, params.acc_E = adagrad_update(params.E, t.g_E, params.acc_E, hp.eta)
    return EpochStats(epoch=0, loss=total / n, seconds=time.perf_counter() - start)


def should_stop(history: list[EpochStats], patience: int, max_epochs: Optional[int] = None) -> bool:
    """True once validation NDCG@10 has not improved for ``patience`` evaluations
    or the epoch budget is spent."""
    if not history:
        raise ValueError("history is empty")
    if max_epochs is not None and history[-1].epoch >= max_epochs:
        return True
    if patience <= 0:
        return False
    scores = [h.ndcg10 for h in history if h.ndcg10 is not None]
    if len(scores) <= patience:
        return False
    best_at = int(np.argmax(scores))
    return len(scores) - 1 - best_at >= patience


def initial_params(split: SplitDataset, feats: FeatureMatrix, config: TrainConfig) -> ModelParams:
    if config.pretrain:
        params, _ = load_params(config.pretrain)
        return params
    if config.kind == "amr":
        raise ValueError("AMR training needs a pretrained snapshot (set pretrain)")
    return init_params(config.hp, split.num_users, split.num_items, feats.dim)


def train(split: SplitDataset, feats: FeatureMatrix, config: TrainConfig,
          params: Optional[ModelParams] = None, rng: Optional[np.random.Generator] = None,
          log: Optional[Callable[[EpochStats], None]] = None,
          checkpoint_dir=None) -> tuple[ModelParams, list[EpochStats]]:
    """Run ``config.hp.epochs`` epochs, optionally with validation-based early stopping.

    ``params`` is modified in place when given. With early stopping the
    parameters of the best validation epoch are returned.
    """
    from .evaluate import evaluate  # evaluate imports nothing from here

    if params is None:
        params = initial_params(split, feats, config)
    if rng is None:
        rng = np.random.default_rng(config.hp.seed)
    sampler = _TripleSampler(split)
    validate = config.eval_every > 0 and len(split.validation) > 0
    history: list[EpochStats] = []
    best, best_score = None, -np.inf
    for epoch in range(1, config.hp.epochs + 1):
        stats = train_epoch(params, split, feats, config, rng, sampler)
        stats.epoch = epoch
        if validate and epoch % config.eval_every == 0:
            report = evaluate(params, split, feats, config.score_kind, Ns=(10,),
                              seed=config.hp.seed, target="validation")
            stats.hr10, stats.ndcg10 = report.metrics["HR@10"], report.metrics["NDCG@10"]
            if config.patience and stats.ndcg10 > best_score:
                best, best_score = params.copy(), stats.ndcg10
        history.append(stats)
        if log is not None:
            log(stats)
        if checkpoint_dir and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_params(params, checkpoint_dir, kind=config.kind, epoch=epoch,
                        hyperparameters=config.hp.to_dict())
        if validate and should_stop(history, config.patience):
            logger.info("early stop at epoch %d", epoch)
            break
    if best is not None:
        params = best
    if checkpoint_dir:
        save_params(params, checkpoint_dir, kind=config.kind, epoch=history[-1].epoch if history else 0,
                    seed=config.hp.seed, hyperparameters=config.hp.to_dict())
    return params, history


def vbpr_from_mf(mf: ModelParams, dim: int, hp: HyperParams, std: float = 0.01) -> ModelParams:
    """VBPR start point: ID embeddings from MF, fresh feature projection, fresh accumulators."""
    rng = np.random.default_rng([hp.seed, 1])
    E = rng.normal(0.0, std, size=(hp.K, dim))
    return ModelParams(mf.P.copy(), mf.Q.copy(), E)


def pretrain_pipeline(split: SplitDataset, feats: FeatureMatrix, hp: HyperParams,
                      budgets=(50, 50, 50), out_dir=None, vbpr_snapshot=None,
                      eval_every: int = 0, patience: int = 0, log=None) -> ModelParams:
    """MF-BPR -> VBPR (initialised from MF) -> AMR (initialised from VBPR).

    Each stage trains for its entry in ``budgets``. ``vbpr_snapshot`` skips
    the first two stages. Snapshots go to ``out_dir/{mf,vbpr,amr}``.
    """
    mf_epochs, vbpr_epochs, amr_epochs = budgets
    out = Path(out_dir) if out_dir else None

    def stage(kind, epochs, params, rng_tag):
        cfg = TrainConfig(kind, replace(hp, epochs=epochs), eval_every=eval_every, patience=patience)
        rng = np.random.default_rng([hp.seed, rng_tag])
        stage_log = (lambda s: log(kind, s)) if log else None
        params, _ = train(split, feats, cfg, params=params, rng=rng, log=stage_log,
                          checkpoint_dir=out / kind if out else None)
        return params

    if vbpr_snapshot is not None:
        vbpr, _ = load_params(vbpr_snapshot)
    else:
        mf = stage("mf", mf_epochs, init_params(hp, split.num_users, split.num_items, feats.dim), 11)
        vbpr = stage("vbpr", vbpr_epochs, vbpr_from_mf(mf, feats.dim, hp), 12)
    return stage("amr", amr_epochs, vbpr.copy(), 13)
