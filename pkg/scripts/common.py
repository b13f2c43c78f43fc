"""Shared setup for the experiment scripts: a spliced synthetic trial set and a PLDA model."""

import numpy as np

from sdtwsv.metric import CosineMetric, PldaMetric, fit_preprocess, plda_train
from sdtwsv.synth import SPEC_DEFAULTS, MismatchSpec, gen_trialset, gen_training_set, population_from_config


def build(seed=2024, trials_per_class=None, **overrides):
    cfg = dict(SPEC_DEFAULTS, seed=seed, **overrides)
    if trials_per_class is not None:
        cfg["trials_per_class"] = trials_per_class
    pop = population_from_config(cfg)
    mm = MismatchSpec(cfg["splice_fraction"], cfg["seed"], cfg["distractor_scale"])
    evalset = gen_trialset(pop, cfg["trials_per_class"], cfg["seq_length"], mm)
    train, owner = gen_training_set(population_from_config(cfg, cfg["n_train_speakers"]),
                                    cfg["train_utts_per_speaker"], cfg["seq_length"])
    x = np.concatenate([s.vectors for s in train.values()])
    labels = np.concatenate([[owner[k]] * len(s) for k, s in train.items()])
    chain = fit_preprocess((x, labels), target_dim=min(200, cfg["dim"], len(set(owner.values())) - 1))
    model = plda_train((chain.apply(x), labels), 10, chain)
    return evalset, {"cosine": CosineMetric(), "plda": PldaMetric(model)}
