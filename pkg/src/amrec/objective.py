"""Pairwise ranking losses and their closed-form gradients.

All heavy lifting is done by :func:`batch_loss_and_grads`, which works on a
stack of ``B`` triples; the per-instance functions are thin views of it.
With ``s`` the clean margin and ``s'`` the perturbed margin, the per-instance
objective is::

    softplus(-s) + lam * softplus(-s') + beta * (|p_u|^2 + |q_i|^2 + |q_j|^2 + |E|^2)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import FeatureMatrix, ModelParams


@dataclass
class ParamGrads:
    g_pu: np.ndarray
    g_qi: np.ndarray
    g_qj: np.ndarray
    g_E: np.ndarray


@dataclass
class PerturbGrads:
    gamma_i: np.ndarray
    gamma_j: np.ndarray


def neg_log_sigmoid(s):
    """-ln sigma(s), evaluated as softplus(-s) so it never overflows."""
    return np.logaddexp(0.0, -np.asarray(s, dtype=np.float64))


def _dloss_dmargin(s):
    # d/ds [-ln sigma(s)] = -(1 - sigma(s)) = -sigma(-s)
    return -expit(-s)


@dataclass
class BatchTerms:
    loss: np.ndarray        # (B,) ranking loss incl. the perturbed term, no regularizer
    margin: np.ndarray      # (B,) clean margin s
    g_pu: np.ndarray        # (B, K)
    g_qi: np.ndarray        # (B, K)
    g_qj: np.ndarray        # (B, K)
    g_E: np.ndarray | None  # (K, D), summed over the batch


def batch_loss_and_grads(pu, qi, qj, E, ci, cj, di=None, dj=None, lam=0.0, beta=0.0,
                         use_ids=True, use_features=True) -> BatchTerms:
    """Loss and gradients for a stack of triples.

    ``pu``, ``qi``, ``qj`` are (B, K) rows; ``ci``, ``cj`` (B, D) features and
    ``di``, ``dj`` (B, D) perturbations (``None`` means zero). ``use_ids`` /
    ``use_features`` select MF (ids only), DUIF (features only) or the full
    model. Regularizer gradients are included; ``g_E`` is ``None`` when
    features are unused.
    """
    # difference of item latents, clean and perturbed
    dz = np.zeros_like(pu)
    if use_ids:
        dz = qi - qj
    if use_features:
        dc = ci - cj
        dz = dz + dc @ E.T
    s = np.einsum("bk,bk->b", pu, dz)
    a = _dloss_dmargin(s)
    loss = neg_log_sigmoid(s)

    perturbed = lam != 0.0 or di is not None or dj is not None
    if perturbed and use_features:
        dd = np.zeros_like(dc)
        if di is not None:
            dd = dd + di
        if dj is not None:
            dd = dd - dj
        dc_adv = dc + dd
        dz_adv = dz + dd @ E.T
        s_adv = np.einsum("bk,bk->b", pu, dz_adv)
        a_adv = _dloss_dmargin(s_adv)
        loss = loss + lam * neg_log_sigmoid(s_adv)
    else:
        dc_adv, dz_adv, a_adv = (dc if use_features else None), dz, a

    w = a + lam * a_adv
    g_pu = a[:, None] * dz + (lam * a_adv)[:, None] * dz_adv + 2.0 * beta * pu
    g_qi = w[:, None] * pu + 2.0 * beta * qi
    g_qj = -w[:, None] * pu + 2.0 * beta * qj
    g_E = None
    if use_features:
        weights = a[:, None] * dc + (lam * a_adv)[:, None] * dc_adv
        g_E = pu.T @ weights + 2.0 * beta * pu.shape[0] * E
    return BatchTerms(loss, s, g_pu, g_qi, g_qj, g_E)


def batch_perturbation_grads(pu, qi, qj, E, ci, cj, di=None, dj=None):
    """Gradient of the perturbed loss w.r.t. each instance's feature
    perturbations. Returns (gamma_i, gamma_j), each (B, D); gamma_j == -gamma_i."""
    dz = qi - qj + (ci - cj) @ E.T
    if di is not None:
        dz = dz + di @ E.T
    if dj is not None:
        dz = dz - dj @ E.T
    s_adv = np.einsum("bk,bk->b", pu, dz)
    gamma_i = _dloss_dmargin(s_adv)[:, None] * (pu @ E)
    return gamma_i, -gamma_i


def _stack(params: ModelParams, triple, feats: FeatureMatrix):
    u, i, j = triple
    rows = np.asarray(feats.rows, dtype=np.float64)
    return (params.P[[u]], params.Q[[i]], params.Q[[j]], params.E, rows[[i]], rows[[j]])


def _as_row(delta, D):
    if delta is None:
        return None
    return np.asarray(delta, dtype=np.float64).reshape(1, D)


def bpr_instance_loss(params: ModelParams, triple, feats: FeatureMatrix) -> float:
    return float(batch_loss_and_grads(*_stack(params, triple, feats)).loss[0])


def perturbed_instance_loss(params: ModelParams, triple, feats: FeatureMatrix,
                            delta_i, delta_j) -> float:
    pu, qi, qj, E, ci, cj = _stack(params, triple, feats)
    D = E.shape[1]
    s = np.einsum("bk,bk->b", pu, qi - qj + (ci + _as_row(delta_i, D) - cj - _as_row(delta_j, D)) @ E.T)
    return float(neg_log_sigmoid(s)[0])


def amr_instance_loss(params: ModelParams, triple, feats: FeatureMatrix, delta_i, delta_j,
                      lam: float, beta: float) -> float:
    u, i, j = triple
    data = bpr_instance_loss(params, triple, feats)
    if lam:
        data += lam * perturbed_instance_loss(params, triple, feats, delta_i, delta_j)
    reg = (params.P[u] @ params.P[u] + params.Q[i] @ params.Q[i]
           + params.Q[j] @ params.Q[j] + np.sum(params.E * params.E))
    return float(data + beta * reg)


def grad_params(params: ModelParams, triple, feats: FeatureMatrix, delta_i, delta_j,
                lam: float, beta: float) -> ParamGrads:
    pu, qi, qj, E, ci, cj = _stack(params, triple, feats)
    D = E.shape[1]
    t = batch_loss_and_grads(pu, qi, qj, E, ci, cj, _as_row(delta_i, D), _as_row(delta_j, D),
                             lam=lam, beta=beta)
    return ParamGrads(t.g_pu[0], t.g_qi[0], t.g_qj[0], t.g_E)


def grad_perturbation(params: ModelParams, triple, feats: FeatureMatrix,
                      delta_i=None, delta_j=None) -> PerturbGrads:
    pu, qi, qj, E, ci, cj = _stack(params, triple, feats)
    D = E.shape[1]
    gi, gj = batch_perturbation_grads(pu, qi, qj, E, ci, cj, _as_row(delta_i, D), _as_row(delta_j, D))
    return PerturbGrads(gi[0], gj[0])


def finite_diff_check(f: Callable[[np.ndarray], float], x, analytic, h: float = 1e-4,
                      floor: float = 1e-8) -> float:
    """Max relative error between ``analytic`` and central differences of ``f`` at ``x``.

    Coordinates where both gradients are below ``floor`` in magnitude are
    compared by absolute error instead.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    numeric = np.empty_like(x)
    flat, num = x.reshape(-1), numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        num[k] = (fp - fm) / (2.0 * h)
    scale = np.maximum(np.abs(numeric), np.abs(analytic))
    err = np.abs(numeric - analytic)
    rel = np.where(scale > floor, err / np.where(scale > floor, scale, 1.0), err)
    return float(rel.max()) if rel.size else 0.0
