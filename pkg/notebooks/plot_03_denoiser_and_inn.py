"""
Training a denoiser and its interval extension
==============================================

A small residual CNN learns to remove Gaussian noise (sigma 25/255) from
procedural textures.  The interval parameters are then fitted around the
frozen weights so that the output range covers the clean targets.
"""

import logging

import numpy as np

from innstab import data, interval, training
from innstab.config import default_config

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = default_config("denoise")
cfg.data.n_train, cfg.data.n_val, cfg.data.n_test = 96, 16, 8
cfg.n_eval = 8
cfg.train.epochs, cfg.inn.epochs = 4, 2
corpus = data.generate_corpus(cfg)

spec, params, rows = training.train_baseline(cfg, corpus["train"], corpus["val"], seed=0)
val = corpus["val"]
print("identity MSE", np.mean((val.inputs - val.clean) ** 2), "network MSE", training.mse(spec, params, val))

###############################################################################
# Interval fine-tuning leaves the central prediction untouched.

ip, inn_rows = training.train_inn(cfg, spec, params, corpus["train"], val, seed=1)
pred = training.inn_predict(spec, ip, corpus["test"].inputs)
print("test coverage:", interval.coverage(pred, corpus["test"].clean[..., None]))
print("mean width:", interval.inn_uncertainty(pred).mean())
