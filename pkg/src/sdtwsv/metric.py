"""Local distances between embeddings: cosine and two-covariance PLDA.

Also holds the PLDA front-end (LDA -> centering -> whitening -> length norm)
and EM training for the two-covariance model::

    x = m + y_spk + e,   y_spk ~ N(0, phi_b),   e ~ N(0, phi_w)
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine distance undefined for a zero vector")
    d = 1.0 - float(u @ v) / (nu * nv)
    return min(max(d, 0.0), 2.0)


def length_normalize(v) -> np.ndarray:
    """Scale ``v`` (or each row of a matrix) to unit Euclidean norm."""
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot length-normalize a zero vector")
    return v / norms


def _regularize(mat: np.ndarray, what: str, ref_trace: float | None = None) -> np.ndarray:
    # lambda = 1e-6 * trace/dim, added only when min eigenvalue < 1e-10 * trace/dim
    dim = mat.shape[0]
    scale = (np.trace(mat) if ref_trace is None else ref_trace) / dim
    if scale <= 0:
        raise ValueError(f"{what} is identically zero; data is degenerate")
    lo = np.linalg.eigvalsh(mat)[0]
    if lo < 1e-10 * scale:
        warnings.warn(f"{what} is near singular; adding {1e-6 * scale:.3g} * I", RuntimeWarning, stacklevel=3)
        mat = mat + 1e-6 * scale * np.eye(dim)
    return mat


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return (v / np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class PreprocessChain:
    """Fitted front-end; applied as lda -> center -> whiten -> length norm."""

    mean: np.ndarray
    whitener: np.ndarray
    lda_projection: np.ndarray | None = None
    apply_length_norm: bool = True

    @property
    def input_dim(self) -> int:
        if self.lda_projection is not None:
            return self.lda_projection.shape[0]
        return self.mean.shape[0]

    @property
    def output_dim(self) -> int:
        return self.whitener.shape[0]

    @classmethod
    def identity(cls, dim: int, apply_length_norm: bool = False) -> "PreprocessChain":
        return cls(np.zeros(dim), np.eye(dim), None, apply_length_norm)

    def apply(self, v) -> np.ndarray:
        return apply_preprocess(self, v)


def apply_preprocess(chain: PreprocessChain, v) -> np.ndarray:
    """Run a vector, or a stack of row vectors, through ``chain``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != chain.input_dim:
        raise ValueError(f"expected input dim {chain.input_dim}, got {v.shape[-1]}")
    if chain.lda_projection is not None:
        v = v @ chain.lda_projection
    v = (v - chain.mean) @ chain.whitener.T
    if chain.apply_length_norm:
        v = length_normalize(v)
    return v


def _class_stats(x: np.ndarray, labels: np.ndarray):
    classes, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(classes), x.shape[1]))
    np.add.at(sums, inv, x)
    return classes, inv, counts, sums


def _split(data):
    """Accept either (vectors, labels) arrays or a list of (vector, label) pairs."""
    if isinstance(data, tuple) and len(data) == 2 and np.ndim(data[0]) == 2:
        x, labels = data
    else:
        x = [d[0] for d in data]
        labels = [d[1] for d in data]
    return np.asarray(x, dtype=float), np.asarray(labels)


def fit_preprocess(data, target_dim: int | None = 200, use_lda: bool = True,
                   apply_length_norm: bool = True) -> PreprocessChain:
    """Fit LDA (optional), centering and symmetric whitening on labelled data.

    ``data`` is a list of ``(vector, speaker)`` pairs or a ``(X, labels)`` tuple.
    """
    x, labels = _split(data)
    n, dim = x.shape
    classes, inv, counts, sums = _class_stats(x, labels)
    if len(classes) < 2:
        raise ValueError("need at least two speakers")
    projection = None
    if use_lda:
        if target_dim is None or not 1 <= target_dim <= min(dim, len(classes) - 1):
            raise ValueError(
                f"target_dim must be in [1, {min(dim, len(classes) - 1)}] for LDA, got {target_dim}"
            )
        mu = x.mean(axis=0)
        class_means = sums / counts[:, None]
        centered = x - class_means[inv]
        sw = centered.T @ centered / n
        db = class_means - mu
        sb = (db * counts[:, None]).T @ db / n
        sw = _regularize(sw, "within-class scatter", ref_trace=np.trace(sw + sb))
        # generalized symmetric eigenproblem, largest ratios first
        w, v = linalg.eigh(sb, sw)
        projection = v[:, np.argsort(w)[::-1][:target_dim]]
        x = x @ projection
    mean = x.mean(axis=0)
    xc = x - mean
    cov = _regularize(xc.T @ xc / n, "sample covariance")
    return PreprocessChain(mean, _inv_sqrt(cov), projection, apply_length_norm)


@dataclass(frozen=True, eq=False)
class PldaModel:
    phi_b: np.ndarray
    phi_w: np.ndarray
    mean: np.ndarray = None
    chain: PreprocessChain | None = None
    loglik_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        phi_b = np.atleast_2d(np.asarray(self.phi_b, dtype=float))
        phi_w = np.atleast_2d(np.asarray(self.phi_w, dtype=float))
        if phi_b.shape != phi_w.shape or phi_b.shape[0] != phi_b.shape[1]:
            raise ValueError("phi_b and phi_w must be square and of equal size")
        if not (np.allclose(phi_b, phi_b.T) and np.allclose(phi_w, phi_w.T)):
            raise ValueError("covariances must be symmetric")
        if np.linalg.eigvalsh(phi_w)[0] <= 0:
            raise ValueError("phi_w must be positive definite")
        if np.linalg.eigvalsh(phi_b)[0] < -1e-10 * max(1.0, np.trace(phi_b)):
            raise ValueError("phi_b must be positive semi-definite")
        mean = np.zeros(phi_b.shape[0]) if self.mean is None else np.asarray(self.mean, dtype=float)
        object.__setattr__(self, "phi_b", phi_b)
        object.__setattr__(self, "phi_w", phi_w)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.phi_b.shape[0]

    @cached_property
    def _scoring_terms(self):
        # LLR(u, v) = 1/2 u'Qu + 1/2 v'Qv + u'Pv + const
        d = self.dim
        tot = self.phi_b + self.phi_w
        same = np.block([[tot, self.phi_b], [self.phi_b, tot]])
        same_inv = np.linalg.inv(same)
        tot_inv = np.linalg.inv(tot)
        a, c = same_inv[:d, :d], same_inv[:d, d:]
        q = tot_inv - a
        p = -c
        _, logdet_same = np.linalg.slogdet(same)
        _, logdet_tot = np.linalg.slogdet(tot)
        const = -0.5 * logdet_same + logdet_tot
        return (q + q.T) / 2, (p + p.T) / 2, const

    def prepare(self, x) -> np.ndarray:
        """Map raw embeddings into the model's space (front-end, then mean removal)."""
        x = np.asarray(x, dtype=float)
        if self.chain is not None:
            x = self.chain.apply(x)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {x.shape[-1]}")
        return x - self.mean

    def llr_matrix(self, xs, ys) -> np.ndarray:
        """Pairwise LLR between rows of already-prepared ``xs`` and ``ys``."""
        q, p, const = self._scoring_terms
        qx = 0.5 * np.einsum("ij,jk,ik->i", xs, q, xs)
        qy = 0.5 * np.einsum("ij,jk,ik->i", ys, q, ys)
        return qx[:, None] + qy[None, :] + xs @ p @ ys.T + const


def plda_score(model: PldaModel, u, v, prepared: bool = True) -> float:
    """Same-vs-different speaker log-likelihood ratio of one pair.

    With ``prepared=False`` the model's front-end is applied first.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if prepared:
        if u.shape[0] != model.dim:
            raise ValueError(f"expected dim {model.dim}, got {u.shape[0]}")
        xu, xv = u - model.mean, v - model.mean
    else:
        xu, xv = model.prepare(u), model.prepare(v)
    q, p, const = model._scoring_terms
    # both terms are written symmetrically so score(u, v) == score(v, u) bit for bit
    quad = 0.5 * (xu @ q @ xu) + 0.5 * (xv @ q @ xv)
    cross = 0.5 * (xu @ p @ xv) + 0.5 * (xv @ p @ xu)
    return float(quad + cross + const)


def plda_distance(model: PldaModel, u, v, prepared: bool = True) -> float:
    return -plda_score(model, u, v, prepared)


def _em_posteriors(phi_b, phi_w, counts, sums):
    """Posterior mean/covariance of each speaker variable, grouped by count.

    Written without inverting phi_b so a singular between-class covariance works.
    """
    d = phi_b.shape[0]
    means = np.empty_like(sums)
    covs = {}
    logdets = {}
    w_inv = np.linalg.inv(phi_w)
    for n in np.unique(counts):
        sel = counts == n
        # gain = phi_b (phi_b + phi_w/n)^-1
        gain = linalg.solve(phi_b + phi_w / n, phi_b, assume_a="sym").T
        covs[n] = phi_b - gain @ phi_b
        means[sel] = sums[sel] / n @ gain.T
        logdets[n] = np.linalg.slogdet(np.eye(d) + n * w_inv @ phi_b)[1]
    return means, covs, logdets, w_inv


def plda_log_likelihood(phi_b, phi_w, x, labels) -> float:
    """Marginal log-likelihood of centered data under the two-covariance model."""
    classes, inv, counts, sums = _class_stats(x, labels)
    n, d = x.shape
    means, covs, logdets, w_inv = _em_posteriors(phi_b, phi_w, counts, sums)
    _, logdet_w = np.linalg.slogdet(phi_w)
    quad = np.einsum("ij,jk,ik->", x, w_inv, x)
    g = sums @ w_inv
    # g' C g = g' m  since m = C g
    explained = np.einsum("ij,ij->", g, means)
    ll = -0.5 * n * d * np.log(2 * np.pi) - 0.5 * n * logdet_w - 0.5 * quad + 0.5 * explained
    ll -= 0.5 * sum(logdets[c] for c in counts)
    return float(ll)


def plda_train(data, iterations: int = 10, chain: PreprocessChain | None = None) -> PldaModel:
    """Fit the two-covariance PLDA model by EM.

    ``data`` holds vectors already passed through ``chain`` (if any); the chain
    is only stored on the returned model. The per-iteration log-likelihood is
    kept in ``loglik_history`` (entry 0 is the initial estimate).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    x, labels = _split(data)
    n, d = x.shape
    classes, inv, counts, sums = _class_stats(x, labels)
    if len(classes) < 2:
        raise ValueError("need at least two speakers")
    mu = x.mean(axis=0)
    x = x - mu
    sums = sums - counts[:, None] * mu
    total = x.T @ x / n
    if np.trace(total) <= 0:
        raise ValueError("all training vectors are identical")

    class_means = sums / counts[:, None]
    resid = x - class_means[inv]
    phi_w = _regularize(resid.T @ resid / n, "within-speaker covariance", ref_trace=np.trace(total))
    phi_b = class_means.T @ class_means / len(classes)
    phi_b = (phi_b + phi_b.T) / 2

    sxx = x.T @ x
    history = [plda_log_likelihood(phi_b, phi_w, x, labels)]
    for _ in range(iterations):
        means, covs, _, _ = _em_posteriors(phi_b, phi_w, counts, sums)
        cov_sum = sum(covs[c] for c in counts)
        ncov_sum = sum(c * covs[c] for c in counts)
        mm = means.T @ means
        phi_b = (cov_sum + mm) / len(classes)
        cross = sums.T @ means
        phi_w = (sxx - cross - cross.T + (means * counts[:, None]).T @ means + ncov_sum) / n
        phi_b = (phi_b + phi_b.T) / 2
        phi_w = _regularize((phi_w + phi_w.T) / 2, "within-speaker covariance", ref_trace=np.trace(total))
        history.append(plda_log_likelihood(phi_b, phi_w, x, labels))
    return PldaModel(phi_b, phi_w, mu, chain, tuple(history))


class CosineMetric:
    """Cosine distance, 1 - cos(u, v)."""

    kind = "cosine"

    def distance(self, u, v) -> float:
        return cosine_distance(u, v)

    def pairwise(self, xs, ys) -> np.ndarray:
        a = length_normalize(xs)
        b = length_normalize(ys)
        return np.clip(1.0 - a @ b.T, 0.0, 2.0)

    def __repr__(self):
        return "CosineMetric()"


class PldaMetric:
    """Negated PLDA log-likelihood ratio on raw embeddings (front-end applied)."""

    kind = "plda"

    def __init__(self, model: PldaModel):
        self.model = model

    def distance(self, u, v) -> float:
        return plda_distance(self.model, u, v, prepared=False)

    def pairwise(self, xs, ys) -> np.ndarray:
        m = self.model
        return -m.llr_matrix(m.prepare(xs), m.prepare(ys))

    def __repr__(self):
        return f"PldaMetric(dim={self.model.dim})"


# --- model files -----------------------------------------------------------

PLDA_MAGIC = b"PLDA"
PLDA_VERSION = 1


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_plda(model: PldaModel, path) -> None:
    """Layout: magic | u32 version | u32 dim | phi_b | phi_w | mean | chain block.

    Chain block: u8 flags (1 = chain present, 2 = lda, 4 = length norm)
    | u32 in_dim | u32 out_dim | projection (in x out, if lda) | mean | whitener.
    All matrices are row-major float64.
    """
    parts = [struct.pack("<4sII", PLDA_MAGIC, PLDA_VERSION, model.dim),
             _f8(model.phi_b), _f8(model.phi_w), _f8(model.mean)]
    ch = model.chain
    if ch is None:
        parts.append(struct.pack("<BII", 0, 0, 0))
    else:
        flags = 1 | (2 if ch.lda_projection is not None else 0) | (4 if ch.apply_length_norm else 0)
        parts.append(struct.pack("<BII", flags, ch.input_dim, ch.output_dim))
        if ch.lda_projection is not None:
            parts.append(_f8(ch.lda_projection))
        parts += [_f8(ch.mean), _f8(ch.whitener)]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_plda(path) -> PldaModel:
    from .embedseq import MalformedHeaderError

    data = open(path, "rb").read()
    pos = 0

    def take(n_floats, shape):
        nonlocal pos
        nbytes = 8 * n_floats
        if pos + nbytes > len(data):
            raise MalformedHeaderError(f"{path}: truncated model file")
        arr = np.frombuffer(data, dtype="<f8", count=n_floats, offset=pos).reshape(shape).copy()
        pos += nbytes
        return arr

    if len(data) < 12:
        raise MalformedHeaderError(f"{path}: truncated model file")
    magic, version, dim = struct.unpack_from("<4sII", data)
    if magic != PLDA_MAGIC or version != PLDA_VERSION:
        raise MalformedHeaderError(f"{path}: not a PLDA v{PLDA_VERSION} model")
    pos = 12
    phi_b = take(dim * dim, (dim, dim))
    phi_w = take(dim * dim, (dim, dim))
    mean = take(dim, (dim,))
    if pos + 9 > len(data):
        raise MalformedHeaderError(f"{path}: truncated model file")
    flags, in_dim, out_dim = struct.unpack_from("<BII", data, pos)
    pos += 9
    chain = None
    if flags & 1:
        proj = take(in_dim * out_dim, (in_dim, out_dim)) if flags & 2 else None
        cmean = take(out_dim, (out_dim,))
        whitener = take(out_dim * out_dim, (out_dim, out_dim))
        chain = PreprocessChain(cmean, whitener, proj, bool(flags & 4))
    if pos != len(data):
        raise MalformedHeaderError(f"{path}: trailing bytes in model file")
    return PldaModel(phi_b, phi_w, mean, chain)
