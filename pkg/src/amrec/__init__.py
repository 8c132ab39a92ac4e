"""Adversarially trained visual pairwise-ranking recommenders."""

from .data import (DataError, FeatureMatrix, HyperParams, InteractionDataset, ModelParams,
                   SplitDataset, init_params, leave_one_out_split, load_features,
                   load_interactions, load_params, sample_triple, sample_triples, save_params)
from .model import ModelKind, item_latent, predict, predict_perturbed
from .evaluate import MetricsReport, evaluate, evaluate_pop, paired_t_test
from .trainer import TrainConfig, pretrain_pipeline, train, train_epoch
from .robustness import AttackConfig, attack_eval, perf_drop, rank_shift_distribution
from .synth import SyntheticSpec, generate

__version__ = "0.1.0"
