r"""
Quickstart
==========

Generate a small synthetic dataset, run the MF -> VBPR -> AMR pipeline and
compare the models with the item-popularity baseline.
"""

from dataclasses import replace

from amrec import (HyperParams, SyntheticSpec, evaluate, evaluate_pop, generate, leave_one_out_split,
                   pretrain_pipeline)
from amrec.trainer import TrainConfig, train

syn = generate(SyntheticSpec(num_users=300, num_items=600, seed=0))
split = leave_one_out_split(syn.interactions, seed=0)
feats = syn.features
print(f"{len(split.train)} train interactions, {len(split.test)} test users, "
      f"{len(split.cold_items)} cold items")

hp = HyperParams(K=32, epsilon=0.1, lam=1.0, beta=0.01, eta=0.05, seed=0)
mf, _ = train(split, feats, TrainConfig("mf", replace(hp, epochs=40)))
amr = pretrain_pipeline(split, feats, hp, budgets=(40, 40, 40))

rows = [evaluate_pop(split, Ns=(10,)),
        evaluate(mf, split, feats, "MF", Ns=(10,), name="MF-BPR"),
        evaluate(amr, split, feats, Ns=(10,), name="AMR")]
for r in rows:
    m = r.metrics
    print(f"{r.model:8s} HR@10 {m['HR@10']:.3f}  NDCG@10 {m['NDCG@10']:.3f}")
