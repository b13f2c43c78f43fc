"""Trial scoring: SDTW aggregation, mean-embedding baselines, fusion, decisions.

Every trial score is a similarity: higher means more likely the same speaker.
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .align import SdtwConfig, distance_matrix, fragment_table, region_paths
from .embedseq import EmbeddingSequence
from .metric import CosineMetric, PldaMetric, length_normalize


class NoValidAlignment(ValueError):
    """No fragment satisfied the minimum length."""


class Label(str, enum.Enum):
    TARGET = "target"
    NONTARGET = "nontarget"
    UNKNOWN = "unknown"


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class Trial:
    enrol_id: str
    test_id: str
    label: Label = Label.UNKNOWN
    condition: str | None = None


@dataclass(frozen=True)
class TrialScore:
    trial: Trial
    score: float
    n_fragments: int = 0


@dataclass(frozen=True)
class AggregationPolicy:
    kind: str = "mean"
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("mean", "lowest_k", "min"):
            raise ValueError(f"unknown aggregation {self.kind!r}")
        if self.kind == "lowest_k" and self.k < 1:
            raise ValueError("K must be >= 1")


def aggregate(fragment_avg_dists, policy: AggregationPolicy = AggregationPolicy()) -> float:
    """Combine fragment distances into one trial distance."""
    # sorted first so the result does not depend on fragment order
    vals = np.sort(np.asarray(fragment_avg_dists, dtype=float))
    if vals.size == 0:
        raise NoValidAlignment("no fragment to aggregate")
    if policy.kind == "mean":
        return float(vals.mean())
    if policy.kind == "lowest_k":
        return float(vals[: policy.k].mean())
    return float(vals[0])


def _mean_vector(seq: EmbeddingSequence, metric) -> np.ndarray:
    if isinstance(metric, PldaMetric):
        prepared = metric.model.prepare(seq.vectors) + metric.model.mean
        avg = prepared.mean(axis=0)
        chain = metric.model.chain
        if chain is not None and chain.apply_length_norm:
            avg = length_normalize(avg)
        return avg
    avg = seq.mean()
    if not np.any(avg):
        raise ValueError(f"mean embedding of {seq.id!r} is the zero vector")
    return length_normalize(avg)


def mean_score(enrol: EmbeddingSequence, test: EmbeddingSequence, metric) -> float:
    """Score of the utterance-level (averaged) embeddings."""
    if enrol.dim != test.dim:
        raise ValueError(f"dimension mismatch: {enrol.dim} vs {test.dim}")
    a, b = _mean_vector(enrol, metric), _mean_vector(test, metric)
    if isinstance(metric, PldaMetric):
        model = metric.model
        return float(model.llr_matrix((a - model.mean)[None], (b - model.mean)[None])[0, 0])
    return float(a @ b)


def score_trial_mean(enrol, test, metric, trial: Trial | None = None) -> TrialScore:
    trial = trial or Trial(enrol.id, test.id)
    return TrialScore(trial, mean_score(enrol, test, metric), 0)


def _sdtw_from_dist(dist, cfg: SdtwConfig, policy: AggregationPolicy):
    paths = region_paths(dist, cfg.R)
    _, _, avg, short = fragment_table(paths, cfg.L)
    valid = avg[~short]
    if valid.size == 0:
        return None, 0
    return -aggregate(valid, policy), int(valid.size)


def score_trial_sdtw(enrol, test, metric, cfg: SdtwConfig = SdtwConfig(),
                     policy: AggregationPolicy = AggregationPolicy(),
                     trial: Trial | None = None) -> TrialScore:
    """Negated aggregate of the fragment distances.

    Falls back to the mean-embedding score (``n_fragments == 0``) when no
    region yields a path of length ``cfg.L``.
    """
    trial = trial or Trial(enrol.id, test.id)
    score, n = _sdtw_from_dist(distance_matrix(enrol, test, metric), cfg, policy)
    if score is None:
        return TrialScore(trial, mean_score(enrol, test, metric), 0)
    return TrialScore(trial, score, n)


def score_trial_multi(enrols: Sequence[EmbeddingSequence], tests: Sequence[EmbeddingSequence],
                      metric, method: str = "sdtw", cfg: SdtwConfig = SdtwConfig(),
                      policy: AggregationPolicy = AggregationPolicy(),
                      trial: Trial | None = None) -> TrialScore:
    """Average of the pairwise scores over several enrolment/test utterances."""
    if not enrols or not tests:
        raise ValueError("need at least one enrolment and one test sequence")
    scores, frags = [], 0
    for e in enrols:
        for t in tests:
            ts = score_trial_sdtw(e, t, metric, cfg, policy) if method == "sdtw" \
                else score_trial_mean(e, t, metric)
            scores.append(ts.score)
            frags += ts.n_fragments
    trial = trial or Trial(enrols[0].id, tests[0].id)
    return TrialScore(trial, float(np.mean(scores)), frags)


def score_trials(trials: Iterable[Trial], sequences: dict, metric, method: str = "sdtw",
                 cfg: SdtwConfig = SdtwConfig(), policy: AggregationPolicy = AggregationPolicy(),
                 workers: int = 1) -> list[TrialScore]:
    """Score a trial list; output order equals input order for any worker count."""
    trials = list(trials)
    missing = {i for t in trials for i in (t.enrol_id, t.test_id)} - set(sequences)
    if missing:
        raise KeyError(f"trials reference unknown sequences: {sorted(missing)[:5]}")
    if method not in ("sdtw", "mean"):
        raise ValueError(f"unknown scoring method {method!r}")

    def one(t):
        e, s = sequences[t.enrol_id], sequences[t.test_id]
        if method == "mean":
            return score_trial_mean(e, s, metric, t)
        return score_trial_sdtw(e, s, metric, cfg, policy, t)

    if workers <= 1:
        return [one(t) for t in trials]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, trials))


def fuse(scores_a: Sequence[TrialScore], scores_b: Sequence[TrialScore], weight: float = 0.5,
         znorm: bool = False) -> list[TrialScore]:
    """Weighted score-level combination of two systems on the same trial list."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    if len(scores_a) != len(scores_b):
        raise ValueError(f"trial lists differ in length: {len(scores_a)} vs {len(scores_b)}")
    for i, (a, b) in enumerate(zip(scores_a, scores_b)):
        if (a.trial.enrol_id, a.trial.test_id) != (b.trial.enrol_id, b.trial.test_id):
            raise ValueError(f"trial {i} differs between systems: {a.trial} vs {b.trial}")
    sa = np.array([s.score for s in scores_a], dtype=float)
    sb = np.array([s.score for s in scores_b], dtype=float)
    if znorm:
        sa, sb = _znorm(sa), _znorm(sb)
    fused = weight * sa + (1.0 - weight) * sb
    return [replace(a, score=float(f)) for a, f in zip(scores_a, fused)]


def _znorm(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def decide(score: float, threshold: float) -> Decision:
    if not np.isfinite(score):
        raise ValueError("score must be finite")
    return Decision.ACCEPT if score >= threshold else Decision.REJECT


def make_metric(kind: str, model=None):
    if kind == "cosine":
        return CosineMetric()
    if kind == "plda":
        if model is None:
            raise ValueError("plda metric needs a trained model")
        return PldaMetric(model)
    raise ValueError(f"unknown metric {kind!r}")


# --- trial and score files -------------------------------------------------

def read_trials(path) -> list[Trial]:
    trials = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 3 or len(row) > 4:
                raise ValueError(f"{path}:{lineno}: expected 3 or 4 tab-separated columns")
            try:
                label = Label(row[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad label {row[2]!r}") from None
            cond = row[3] if len(row) == 4 and row[3] else None
            trials.append(Trial(row[0], row[1], label, cond))
    return trials


def write_trials(trials: Iterable[Trial], path) -> None:
    with open(path, "w", newline="") as fh:
        for t in trials:
            cols = [t.enrol_id, t.test_id, t.label.value]
            if t.condition is not None:
                cols.append(t.condition)
            fh.write("\t".join(cols) + "\n")


def write_scores(scores: Iterable[TrialScore], path) -> None:
    with open(path, "w", newline="") as fh:
        for s in scores:
            fh.write(f"{s.trial.enrol_id}\t{s.trial.test_id}\t{s.score:.9g}\t{s.n_fragments}\n")


def read_scores(path, trials: Sequence[Trial] | None = None) -> list[TrialScore]:
    """Read a score TSV; labels and conditions are joined from ``trials`` if given."""
    lookup = {(t.enrol_id, t.test_id): t for t in trials} if trials is not None else {}
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated columns")
            try:
                score, n = float(row[2]), int(row[3])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unparsable score row") from None
            key = (row[0], row[1])
            if trials is not None and key not in lookup:
                raise ValueError(f"{path}:{lineno}: trial {key} not in trial list")
            out.append(TrialScore(lookup.get(key, Trial(*key)), score, n))
    return out
