r"""
Gradient check
==============

Compare the closed-form gradients of the adversarial pairwise loss with
central finite differences on one random instance.
"""

import numpy as np

from amrec.data import FeatureMatrix, ModelParams
from amrec.objective import amr_instance_loss, finite_diff_check, grad_params, grad_perturbation
from amrec.objective import perturbed_instance_loss

rng = np.random.default_rng(0)
K, D = 4, 8
params = ModelParams(rng.normal(0, 0.5, (1, K)), rng.normal(0, 0.5, (2, K)), rng.normal(0, 0.5, (K, D)))
feats = FeatureMatrix(rng.normal(size=(2, D)))
triple = (0, 0, 1)          # user 0 prefers item 0 over item 1
di, dj = rng.normal(0, 0.1, D), rng.normal(0, 0.1, D)
lam, beta = 1.0, 0.01

g = grad_params(params, triple, feats, di, dj, lam, beta)


def loss_at(block, row):
    def f(x):
        p = params.copy()
        getattr(p, block)[row] = x
        return amr_instance_loss(p, triple, feats, di, dj, lam, beta)
    return f


print("relative error per block")
print("  p_u ", finite_diff_check(loss_at("P", 0), params.P[0], g.g_pu))
print("  q_i ", finite_diff_check(loss_at("Q", 0), params.Q[0], g.g_qi))
print("  q_j ", finite_diff_check(loss_at("Q", 1), params.Q[1], g.g_qj))
print("  E   ", finite_diff_check(loss_at("E", slice(None)), params.E, g.g_E))

# gradients with respect to the feature perturbations
gp = grad_perturbation(params, triple, feats, di, dj)
print("  d_i ", finite_diff_check(lambda x: perturbed_instance_loss(params, triple, feats, x, dj), di, gp.gamma_i))
print("  d_j ", finite_diff_check(lambda x: perturbed_instance_loss(params, triple, feats, di, x), dj, gp.gamma_j))
