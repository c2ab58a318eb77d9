"""
Monte-Carlo dropout and ProbOut heatmaps
========================================

Two baselines for pixel-wise uncertainty: the sample variance over T
stochastic forward passes, and a second output channel trained to predict
the variance under a Gaussian likelihood.
"""

import numpy as np

from innstab import data, training, uq
from innstab.config import default_config

cfg = default_config("denoise")
cfg.data.n_train, cfg.data.n_val, cfg.data.n_test = 64, 8, 4
cfg.n_eval = 4
cfg.train.epochs, cfg.probout.epochs = 3, 2
corpus = data.generate_corpus(cfg)
spec, params, _ = training.train_baseline(cfg, corpus["train"], corpus["val"], seed=0)
x = corpus["test"].inputs[0][..., None]

###############################################################################
# MC dropout: fixed seed, so the heatmap is reproducible.

for T in (16, 64):
    mean, var = uq.mcdrop_uncertainty(spec, params, x, uq.McDropConfig(T=T, seed=3))
    print(f"T={T}: mean variance {var.mean():.3e}")

###############################################################################
# ProbOut starts from the baseline with a unit-variance head.

pspec, pparams, rows = training.train_probout(cfg, spec, params, corpus["train"], corpus["val"], seed=2)
mean, var = uq.probout_forward(pspec, pparams, x[None])
print("ProbOut validation loss per epoch:", [round(r["val_loss"], 1) for r in rows])
print("predicted std range:", np.sqrt(var.min()), np.sqrt(var.max()))
