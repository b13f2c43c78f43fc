"""EER, DET points, per-condition reports and (R, L) sweeps."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .align import SdtwConfig, distance_matrix, fragment_table, region_paths
from .verify import AggregationPolicy, Label, TrialScore, aggregate, mean_score


@dataclass(frozen=True)
class DetCurve:
    points: list  # (false accept, false reject), threshold ascending
    thresholds: list
    eer: float


def _rates(target_scores, nontarget_scores):
    """FA and FR at each distinct score used as an accept-if-``>=`` threshold.

    A final +inf threshold closes the curve at (0, 1).
    """
    tar = np.sort(np.asarray(target_scores, dtype=float))
    non = np.sort(np.asarray(nontarget_scores, dtype=float))
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one nontarget score")
    thr = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    fr = np.searchsorted(tar, thr, side="left") / tar.size
    fa = 1.0 - np.searchsorted(non, thr, side="left") / non.size
    return thr, fa, fr


def _eer_from_rates(fa, fr) -> float:
    diff = fr - fa  # starts at -1 (accept all), ends at +1 (reject all)
    idx = int(np.argmax(diff >= 0))
    if diff[idx] == 0 or idx == 0:
        return float(fa[idx])
    a1, r1, a2, r2 = fa[idx - 1], fr[idx - 1], fa[idx], fr[idx]
    t = (a1 - r1) / ((a1 - r1) - (a2 - r2))
    return float(a1 + t * (a2 - a1))


def compute_eer(target_scores, nontarget_scores) -> float:
    """Equal error rate with linear interpolation across the ROC crossing."""
    _, fa, fr = _rates(target_scores, nontarget_scores)
    return _eer_from_rates(fa, fr)


def det_points(target_scores, nontarget_scores) -> DetCurve:
    thr, fa, fr = _rates(target_scores, nontarget_scores)
    return DetCurve(list(zip(fa.tolist(), fr.tolist())), thr.tolist(), _eer_from_rates(fa, fr))


def split_scores(scores):
    tar = [s.score for s in scores if s.trial.label == Label.TARGET]
    non = [s.score for s in scores if s.trial.label == Label.NONTARGET]
    return tar, non


@dataclass(frozen=True)
class ConditionReport:
    per_condition: dict
    average: float
    pooled: float | None = None

    def to_tsv(self) -> str:
        lines = [f"{c}\t{e:.9g}" for c, e in self.per_condition.items()]
        lines.append(f"average\t{self.average:.9g}")
        if self.pooled is not None:
            lines.append(f"pooled\t{self.pooled:.9g}")
        return "\n".join(lines) + "\n"


def condition_report(scores, conditions=None, pooled: bool = False) -> ConditionReport:
    """Per-condition EER and their unweighted mean.

    ``conditions`` fixes the reporting order; by default every condition seen
    is reported, sorted by name. Trials without a condition go under ``"all"``.
    """
    groups: dict = {}
    for s in scores:
        groups.setdefault(s.trial.condition or "all", []).append(s)
    if conditions is None:
        conditions = sorted(groups)
    else:
        extra = set(groups) - set(conditions)
        if extra:
            raise ValueError(f"trials carry conditions outside the list: {sorted(extra)}")
    per = {}
    for c in conditions:
        tar, non = split_scores(groups.get(c, []))
        if not tar or not non:
            raise ValueError(f"condition {c!r} needs at least one target and one nontarget trial")
        per[c] = compute_eer(tar, non)
    avg = float(np.mean(list(per.values())))
    pool = compute_eer(*split_scores(scores)) if pooled else None
    return ConditionReport(per, avg, pool)


def sweep(trials, sequences, metrics: dict, R_values, L_values,
          policy: AggregationPolicy = AggregationPolicy(), conditions=None,
          workers: int = 1) -> dict:
    """Average EER of SDTW scoring for every (metric name, R, L) cell.

    Per trial the distance matrix is built once per metric and the region
    paths once per R; only fragment extraction depends on L. Scores match
    :func:`sdtwsv.verify.score_trial_sdtw` cell by cell.
    """
    trials = list(trials)
    R_values, L_values = list(R_values), list(L_values)
    if not trials or not metrics or not R_values or not L_values:
        raise ValueError("sweep needs trials, metrics, R values and L values")
    for L in L_values:
        SdtwConfig(R_values[0], L)

    def one(t):
        e, s = sequences[t.enrol_id], sequences[t.test_id]
        out = {}
        for name, metric in metrics.items():
            dist = distance_matrix(e, s, metric)
            fallback = None
            for R in R_values:
                paths = region_paths(dist, R)
                for L in L_values:
                    _, _, avg, short = fragment_table(paths, L)
                    valid = avg[~short]
                    if valid.size:
                        out[name, R, L] = TrialScore(t, -aggregate(valid, policy), int(valid.size))
                    else:
                        if fallback is None:
                            fallback = mean_score(e, s, metric)
                        out[name, R, L] = TrialScore(t, fallback, 0)
        return out

    if workers <= 1:
        per_trial = [one(t) for t in trials]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one, trials))
    grid = {}
    for name in metrics:
        for R in R_values:
            for L in L_values:
                cell = [pt[name, R, L] for pt in per_trial]
                grid[name, R, L] = condition_report(cell, conditions).average
    return grid


def format_sweep(grid: dict) -> str:
    lines = ["metric\tR\tL\tavg_eer"]
    for (name, R, L), eer in grid.items():
        lines.append(f"{name}\t{R}\t{L}\t{eer:.9g}")
    return "\n".join(lines) + "\n"
