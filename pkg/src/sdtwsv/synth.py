"""Synthetic speaker populations drawn from the two-covariance model.

Randomness comes from numpy's Philox-4x64 counter-based generator keyed by a
``SeedSequence([seed, stream, index...])``. Stream ids:

    1  speaker means of the evaluation population
    2  sequence draws
    3  spliced runs (position and distractor mean)
    4  trial bookkeeping (speaker picks)
    5  training population means
    6  training sequence draws

Gaussian draws are ``standard_normal`` mapped through the symmetric square
root of the covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedseq import EmbeddingSequence
from .verify import Label, Trial

RNG_NAME = "numpy-philox4x64-seedsequence"
RNG_VERSION = 1

_MEANS, _SEQ, _DISTRACTOR, _TRIALS, _TRAIN_MEANS, _TRAIN_SEQ = 1, 2, 3, 4, 5, 6


def rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *path])))


def as_covariance(spec, dim: int) -> np.ndarray:
    """Scalar (times identity), per-axis variances, or a full matrix."""
    a = np.asarray(spec, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1:
        return np.diag(a)
    return a


def decaying_spectrum(dim: int, decay: float) -> np.ndarray:
    """Per-axis variances ``decay**k`` rescaled so they sum to ``dim``."""
    v = float(decay) ** np.arange(dim)
    return v * dim / v.sum()


def _sqrt_psd(cov: np.ndarray, what: str, strict: bool) -> np.ndarray:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise ValueError(f"{what} must be a symmetric square matrix")
    w, v = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, float(np.abs(w).max()))
    if w[0] < -tol or (strict and w[0] <= 0):
        raise ValueError(f"{what} must be positive {'definite' if strict else 'semi-definite'}")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


@dataclass(frozen=True)
class PopulationSpec:
    n_speakers: int
    dim: int
    phi_b: object = 1.0
    phi_w: object = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.dim < 1:
            raise ValueError("n_speakers and dim must be positive")

    @property
    def between(self) -> np.ndarray:
        return as_covariance(self.phi_b, self.dim)

    @property
    def within(self) -> np.ndarray:
        return as_covariance(self.phi_w, self.dim)


@dataclass(frozen=True)
class MismatchSpec:
    splice_fraction: float = 0.4
    distractor_seed: int = 0
    distractor_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.splice_fraction < 1.0:
            raise ValueError("splice_fraction must lie in [0, 1)")
        if self.distractor_scale < 0:
            raise ValueError("distractor_scale must be >= 0")


def gen_population(spec: PopulationSpec, stream: int = _MEANS) -> np.ndarray:
    """``(n_speakers, dim)`` speaker means drawn from N(0, phi_b)."""
    root = _sqrt_psd(spec.between, "phi_b", strict=False)
    z = rng(spec.seed, stream).standard_normal((spec.n_speakers, spec.dim))
    return z @ root


def gen_sequence(mean, length: int, phi_w, seed: int, mismatch: MismatchSpec | None = None,
                 phi_b=None, seq_id: str = "seq", index: tuple = ()) -> EmbeddingSequence:
    """``length`` draws from N(mean, phi_w).

    With ``mismatch``, a contiguous run of ceil(splice_fraction * length)
    windows is drawn around a distractor mean from
    N(0, distractor_scale * phi_b) instead; the
    run position and distractor come from ``mismatch.distractor_seed``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    mean = np.asarray(mean, dtype=float)
    dim = mean.shape[0]
    root_w = _sqrt_psd(as_covariance(phi_w, dim), "phi_w", strict=False)
    z = rng(seed, _SEQ, *index).standard_normal((length, dim))
    centers = np.tile(mean, (length, 1))
    if mismatch is not None and mismatch.splice_fraction > 0:
        n_splice = math.ceil(mismatch.splice_fraction * length)
        root_b = _sqrt_psd(as_covariance(1.0 if phi_b is None else phi_b, dim), "phi_b", strict=False)
        g = rng(mismatch.distractor_seed, _DISTRACTOR, *index)
        start = int(g.integers(0, length - n_splice + 1))
        centers[start:start + n_splice] = np.sqrt(mismatch.distractor_scale) * (g.standard_normal(dim) @ root_b)
    return EmbeddingSequence(seq_id, centers + z @ root_w)


def splice_span(length: int, mismatch: MismatchSpec, index: tuple = ()) -> tuple[int, int]:
    """0-based half-open span that :func:`gen_sequence` replaces for ``index``."""
    n_splice = math.ceil(mismatch.splice_fraction * length)
    g = rng(mismatch.distractor_seed, _DISTRACTOR, *index)
    start = int(g.integers(0, length - n_splice + 1))
    return start, start + n_splice


@dataclass
class SyntheticSet:
    sequences: dict[str, EmbeddingSequence]
    trials: list[Trial]
    speaker_of: dict[str, str] = field(default_factory=dict)


def gen_trialset(spec: PopulationSpec, trials_per_class: int, seq_length: int,
                 mismatch: MismatchSpec | None = None) -> SyntheticSet:
    """Balanced target/nontarget trials, each with its own enrol and test sequence.

    Trials alternate target/nontarget. The condition tag is ``"spliced"`` when
    ``mismatch`` is given (every sequence spliced) and ``"clean"`` otherwise.
    """
    if spec.n_speakers < 2:
        raise ValueError("need at least two speakers")
    if trials_per_class < 1:
        raise ValueError("trials_per_class must be >= 1")
    means = gen_population(spec)
    pick = rng(spec.seed, _TRIALS)
    cond = "clean" if mismatch is None else "spliced"
    seqs, trials, owner = {}, [], {}
    for n in range(2 * trials_per_class):
        target = n % 2 == 0
        a = int(pick.integers(spec.n_speakers))
        b = a
        if not target:
            b = int(pick.integers(spec.n_speakers - 1))
            b += b >= a
        ids = (f"t{n:05d}e", f"t{n:05d}t")
        for slot, (sid, spk) in enumerate(zip(ids, (a, b))):
            seqs[sid] = gen_sequence(means[spk], seq_length, spec.within, spec.seed, mismatch,
                                     spec.between, sid, (n, slot))
            owner[sid] = f"spk{spk:05d}"
        trials.append(Trial(ids[0], ids[1], Label.TARGET if target else Label.NONTARGET, cond))
    return SyntheticSet(seqs, trials, owner)


def gen_training_set(spec: PopulationSpec, utts_per_speaker: int, seq_length: int):
    """Labelled sequences from a population disjoint from :func:`gen_trialset`'s."""
    means = gen_population(spec, stream=_TRAIN_MEANS)
    seqs, owner = {}, {}
    root_w = _sqrt_psd(spec.within, "phi_w", strict=False)
    for s in range(spec.n_speakers):
        for u in range(utts_per_speaker):
            sid = f"train{s:05d}u{u:03d}"
            z = rng(spec.seed, _TRAIN_SEQ, s, u).standard_normal((seq_length, spec.dim))
            seqs[sid] = EmbeddingSequence(sid, means[s] + z @ root_w)
            owner[sid] = f"trn{s:05d}"
    return seqs, owner


def draw_labelled(spec: PopulationSpec, per_speaker: int):
    """Flat ``(X, labels)`` sample for PLDA recovery checks."""
    means = gen_population(spec)
    root_w = _sqrt_psd(spec.within, "phi_w", strict=False)
    z = rng(spec.seed, _SEQ).standard_normal((spec.n_speakers * per_speaker, spec.dim))
    labels = np.repeat(np.arange(spec.n_speakers), per_speaker)
    return means[labels] + z @ root_w, labels


# --- generator spec files --------------------------------------------------

SPEC_DEFAULTS = {
    "n_speakers": 300,
    "dim": 32,
    "phi_b_scale": 1.0,
    "phi_w_scale": 8.0,
    "phi_w_decay": 0.8,
    "seed": 0,
    "seq_length": 80,
    "splice_fraction": 0.4,
    "distractor_scale": 4.0,
    "trials_per_class": 500,
    "n_train_speakers": 300,
    "train_utts_per_speaker": 2,
}
_INT_KEYS = {"n_speakers", "dim", "seed", "seq_length", "trials_per_class",
             "n_train_speakers", "train_utts_per_speaker"}


def read_generator_spec(path) -> dict:
    """Parse ``key = value`` lines; the header must name the pinned generator."""
    lines = Path(path).read_text().splitlines()
    header = f"# rng: {RNG_NAME} v{RNG_VERSION}"
    if not lines or lines[0].strip() != header:
        raise ValueError(f"{path}: first line must be {header!r}")
    cfg = dict(SPEC_DEFAULTS)
    for lineno, ln in enumerate(lines[1:], start=2):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in ln.split("=", 1))
        if key not in SPEC_DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            cfg[key] = int(val) if key in _INT_KEYS else float(val)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
    return cfg


def write_generator_spec(cfg: dict, path) -> None:
    full = dict(SPEC_DEFAULTS, **cfg)
    lines = [f"# rng: {RNG_NAME} v{RNG_VERSION}"]
    lines += [f"{k} = {full[k]}" for k in SPEC_DEFAULTS]
    Path(path).write_text("\n".join(lines) + "\n")


def population_from_config(cfg: dict, n_speakers: int | None = None) -> PopulationSpec:
    dim = cfg["dim"]
    within = cfg["phi_w_scale"] * decaying_spectrum(dim, cfg["phi_w_decay"])
    return PopulationSpec(n_speakers or cfg["n_speakers"], dim, cfg["phi_b_scale"], within, cfg["seed"])
