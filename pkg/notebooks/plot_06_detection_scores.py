"""
AdvDetect and ArtDetect scores
==============================

Detection quality is the Pearson correlation between the change of an
uncertainty heatmap and either the change of the reconstruction (adversarial
inputs) or the mask of the region that was made out-of-distribution.
"""

from innstab import data, evaluation, experiment
from innstab.config import default_config

cfg = default_config("denoise")
cfg.data.n_train, cfg.data.n_val, cfg.data.n_test = 64, 8, 6
cfg.n_eval = 6
cfg.train.epochs, cfg.inn.epochs, cfg.probout.epochs = 3, 1, 1
cfg.mcdrop.T = 32
cfg.attack.max_iterations = 50
cfg.validate()

corpus = data.generate_corpus(cfg)
models = experiment.train_models(cfg, corpus, run=0)
records, attack_rows = experiment.evaluate(cfg, models, corpus["test"], run=0)
print(evaluation.format_table(evaluation.aggregate(records)))
print("median attack ratio:", sorted(r["ratio"] for r in attack_rows)[len(attack_rows) // 2])
