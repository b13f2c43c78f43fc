import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdtwsv.align import SdtwConfig
from sdtwsv.evaluation import compute_eer, condition_report, det_points, format_sweep, split_scores, sweep
from sdtwsv.metric import CosineMetric
from sdtwsv.synth import MismatchSpec, PopulationSpec, gen_trialset
from sdtwsv.verify import Label, Trial, TrialScore, score_trials

from .oracles import eer_brute



@pytest.mark.parametrize("tar, non, expected", [
    ([0.9, 0.8], [0.2, 0.3], 0.0),
    ([0.2], [0.8], 1.0),
    ([0.8, 0.4], [0.6, 0.2], 0.5),
    ([0.1, 0.2], [0.1, 0.2], 0.5),
    ([1.0], [0.0], 0.0),
])
def test_eer_examples(tar, non, expected):
    assert compute_eer(tar, non) == expected
    assert det_points(tar, non).eer == expected


def test_eer_empty():
    with pytest.raises(ValueError):
        compute_eer([], [1.0])
    with pytest.raises(ValueError):
        det_points([1.0], [])


@given(st.data())
def test_eer_matches_brute_force(data):
    pool = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=100, unique=True))
    k = data.draw(st.integers(1, len(pool) - 1))
    tar, non = pool[:k], pool[k:]
    bound = 1 / (2 * min(len(tar), len(non)))
    assert abs(compute_eer(tar, non) - eer_brute(tar, non)) <= bound + 1e-12


grid_scores = st.lists(st.integers(-500, 500).map(lambda k: k / 100), min_size=1, max_size=30)


@given(grid_scores, grid_scores)
def test_eer_monotone_invariance(tar, non):
    # scores on a 0.01 grid so exp keeps them strictly ordered in floating point
    e = compute_eer(tar, non)
    assert 0.0 <= e <= 1.0
    assert compute_eer(np.exp(tar), np.exp(non)) == pytest.approx(e, abs=1e-12)
    assert compute_eer(3 * np.asarray(tar) - 7, 3 * np.asarray(non) - 7) == pytest.approx(e, abs=1e-12)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=30), st.lists(st.integers(0, 20), min_size=1, max_size=30),
       st.data())
def test_duplicate_score_changes_eer_by_at_most_one_step(tar, non, data):
    dup = data.draw(st.sampled_from(tar + non))
    step = 1 / min(len(tar), len(non))
    assert abs(compute_eer(tar + [dup], non + [dup]) - compute_eer(tar, non)) <= step + 1e-12


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_det_monotone(tar, non):
    curve = det_points(tar, non)
    fa = np.array([p[0] for p in curve.points])
    fr = np.array([p[1] for p in curve.points])
    assert np.all(np.diff(fa) <= 0) and np.all(np.diff(fr) >= 0)
    assert curve.points[0][1] == 0.0 and curve.points[-1] == (0.0, 1.0)
    assert len(curve.points) == len(set(tar) | set(non)) + 1
    # the EER sits inside the crossing bracket
    idx = int(np.argmax(fr - fa >= 0))
    lo, hi = max(fa[idx], fr[idx - 1]), min(fa[idx - 1], fr[idx])
    assert lo - 1e-12 <= curve.eer <= hi + 1e-12


def _ts(cond, label, score, i=0):
    return TrialScore(Trial(f"e{i}", f"t{i}", label, cond), score, 0)


def test_condition_report_examples():
    scores = [_ts("C1", Label.TARGET, 1.0), _ts("C1", Label.NONTARGET, 0.0),
              _ts("C2", Label.TARGET, 0.4), _ts("C2", Label.TARGET, 0.8),
              _ts("C2", Label.NONTARGET, 0.6), _ts("C2", Label.NONTARGET, 0.2)]
    rep = condition_report(scores, ["C1", "C2"])
    assert rep.per_condition == {"C1": 0.0, "C2": 0.5}
    assert rep.average == 0.25
    one = condition_report(scores[:2])
    assert one.average == one.per_condition["C1"] == 0.0
    shuffled = condition_report(scores[::-1], ["C1", "C2"])
    assert shuffled == rep
    assert rep.to_tsv() == "C1\t0\nC2\t0.5\naverage\t0.25\n"
    assert condition_report(scores, pooled=True).pooled is not None


def test_condition_report_missing_class():
    scores = [_ts("C1", Label.TARGET, 1.0), _ts("C1", Label.NONTARGET, 0.0), _ts("C3", Label.TARGET, 1.0)]
    with pytest.raises(ValueError, match="C3"):
        condition_report(scores)
    with pytest.raises(ValueError, match="C2"):
        condition_report(scores[:2], ["C1", "C2"])


@pytest.fixture(scope="module")
def small_set():
    spec = PopulationSpec(20, 6, 4.0, 1.0, seed=3)
    return gen_trialset(spec, 15, 25, MismatchSpec(0.4, 3, 4.0))


def test_single_cell_sweep_matches_direct_scoring(small_set):
    grid = sweep(small_set.trials, small_set.sequences, {"cosine": CosineMetric()}, [2], [5])
    scores = score_trials(small_set.trials, small_set.sequences, CosineMetric(), "sdtw", SdtwConfig(2, 5))
    assert grid == {("cosine", 2, 5): compute_eer(*split_scores(scores))}


def test_sweep_deterministic_and_bounded(small_set):
    args = (small_set.trials, small_set.sequences, {"cosine": CosineMetric()}, [1, 2], [3, 10, 40])
    a = sweep(*args)
    assert a == sweep(*args, workers=3)
    assert all(v <= 0.5 + 0.1 for v in a.values())
    text = format_sweep(a)
    assert text.splitlines()[0] == "metric\tR\tL\tavg_eer"
    assert len(text.splitlines()) == 7
