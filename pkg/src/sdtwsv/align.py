"""Banded DTW, segmental DTW regions and minimum-average fragments.

Public indices are 1-based; the numba kernels work 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np

from .embedseq import EmbeddingSequence

_JIT = dict(nogil=True, cache=True)

@dataclass(frozen=True)
class SdtwConfig:
    R: int = 1
    L: int = 30

    def __post_init__(self):
        if self.R < 0:
            raise ValueError("R must be >= 0")
        if self.L < 1:
            raise ValueError("L must be >= 1")


@dataclass(frozen=True)
class Region:
    start: tuple[int, int]
    band_radius: int

    @property
    def width(self) -> int:
        return 2 * self.band_radius + 1


@dataclass(frozen=True, eq=False)
class AlignmentPath:
    steps: np.ndarray  # (T, 2) 1-based (i, j)
    step_dists: np.ndarray
    accumulated: float

    def __len__(self):
        return len(self.step_dists)


class Fragment(NamedTuple):
    region_index: int
    region_start: tuple[int, int]
    begin: int
    end: int
    avg_dist: float
    short: bool = False

    @property
    def length(self) -> int:
        return self.end - self.begin + 1


def region_starts(I: int, J: int, R: int) -> list[tuple[int, int]]:
    """Start coordinates of the SDTW regions, first down the X axis then along Y."""
    if I < 1 or J < 1 or R < 0:
        raise ValueError("need I, J >= 1 and R >= 0")
    w = 2 * R + 1
    starts = [(w * k + 1, 1) for k in range((I - 1) // w + 1)]
    starts += [(1, w * l + 1) for l in range(1, (J - 1) // w + 1)]
    return starts


@nb.njit(**_JIT)
def _banded_path(dist, si, sj, R):
    """Min-cost path from (si, sj) inside the band anchored at the start.

    The path stops at its first cell on the frontier (i == I-1 or j == J-1).
    Returns the 0-based (i, j) arrays of the optimal path.
    """
    I, J = dist.shape
    nt = I - si
    w = 2 * R + 1
    acc = np.full((nt, w), np.inf)
    back = np.zeros((nt, w), dtype=np.int8)  # 0 start, 1 diag, 2 from (i-1,j), 3 from (i,j-1)
    best = np.inf
    best_t = -1
    best_k = -1
    for t in range(nt):
        i = si + t
        # k = delta + R; delta = (i - si) - (j - sj); higher delta = smaller j
        for k in range(w - 1, -1, -1):
            delta = k - R
            j = sj + t - delta
            if j < sj or j >= J:
                continue
            d = dist[i, j]
            if t == 0 and delta == 0:
                acc[t, k] = d
                back[t, k] = 0
            else:
                cur = np.inf
                code = 0
                if t > 0 and j > sj:
                    # diagonal: same delta, previous row
                    if i - 1 < I - 1 and j - 1 < J - 1 and acc[t - 1, k] < cur:
                        cur = acc[t - 1, k]
                        code = 1
                if t > 0 and k - 1 >= 0:
                    # (i-1, j): delta - 1 in previous row
                    if j < J - 1 and acc[t - 1, k - 1] < cur:
                        cur = acc[t - 1, k - 1]
                        code = 2
                if k + 1 < w and j > sj:
                    # (i, j-1): delta + 1 in this row
                    if i < I - 1 and acc[t, k + 1] < cur:
                        cur = acc[t, k + 1]
                        code = 3
                if code == 0:
                    continue
                acc[t, k] = cur + d
                back[t, k] = code
            if (i == I - 1 or j == J - 1) and acc[t, k] < best:
                best = acc[t, k]
                best_t = t
                best_k = k
    # backtrack
    n = 0
    t, k = best_t, best_k
    buf_i = np.empty(nt + J, dtype=np.int64)
    buf_j = np.empty(nt + J, dtype=np.int64)
    while True:
        buf_i[n] = si + t
        buf_j[n] = sj + t - (k - R)
        n += 1
        c = back[t, k]
        if c == 0:
            break
        if c == 1:
            t -= 1
        elif c == 2:
            t -= 1
            k -= 1
        else:
            k += 1
    return buf_i[:n][::-1].copy(), buf_j[:n][::-1].copy()


@nb.njit(**_JIT)
def _region_paths(dist, R):
    """Run the banded DP for every SDTW region; paths are concatenated."""
    I, J = dist.shape
    w = 2 * R + 1
    n_reg = (I - 1) // w + 1 + (J - 1) // w
    starts = np.empty((n_reg, 2), dtype=np.int64)
    for k in range((I - 1) // w + 1):
        starts[k, 0] = w * k
        starts[k, 1] = 0
    off = (I - 1) // w + 1
    for l in range(1, (J - 1) // w + 1):
        starts[off + l - 1, 0] = 0
        starts[off + l - 1, 1] = w * l
    offsets = np.zeros(n_reg + 1, dtype=np.int64)
    cap = n_reg * (I + J)
    all_i = np.empty(cap, dtype=np.int64)
    all_j = np.empty(cap, dtype=np.int64)
    pos = 0
    for r in range(n_reg):
        pi, pj = _banded_path(dist, starts[r, 0], starts[r, 1], R)
        m = pi.shape[0]
        all_i[pos:pos + m] = pi
        all_j[pos:pos + m] = pj
        pos += m
        offsets[r + 1] = pos
    return starts, offsets, all_i[:pos].copy(), all_j[:pos].copy()


@nb.njit(**_JIT)
def _min_avg(vals, lo, hi, L, max_len):
    """Best window of vals[lo:hi]; returns 0-based (begin, end) relative to lo, and mean."""
    T = hi - lo
    Lm = min(L, T)
    cs = np.empty(T + 1)
    cs[0] = 0.0
    for k in range(T):
        cs[k + 1] = cs[k] + vals[lo + k]
    # a minimum-mean window never needs length >= 2*Lm (split argument)
    top = 2 * Lm - 1
    if max_len > 0:
        top = min(top, max(max_len, Lm))
    best = np.inf
    bb = 0
    be = 0
    for b in range(T - Lm + 1):
        for ln in range(Lm, min(top, T - b) + 1):
            avg = (cs[b + ln] - cs[b]) / ln
            if avg < best:
                best = avg
                bb = b
                be = b + ln - 1
    return bb, be, best


@nb.njit(**_JIT)
def _fragments(vals, offsets, L):
    n = offsets.shape[0] - 1
    begin = np.empty(n, dtype=np.int64)
    end = np.empty(n, dtype=np.int64)
    avg = np.empty(n)
    short = np.empty(n, dtype=np.bool_)
    for r in range(n):
        lo, hi = offsets[r], offsets[r + 1]
        b, e, a = _min_avg(vals, lo, hi, L, 0)
        begin[r] = b
        end[r] = e
        avg[r] = a
        short[r] = (hi - lo) < L
    return begin, end, avg, short


class RegionPaths(NamedTuple):
    """All SDTW region paths of one distance matrix, concatenated (0-based)."""

    starts: np.ndarray
    offsets: np.ndarray
    steps_i: np.ndarray
    steps_j: np.ndarray
    step_dists: np.ndarray


def region_paths(dist: np.ndarray, R: int) -> RegionPaths:
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.size == 0:
        raise ValueError("distance matrix must be 2-D and non-empty")
    if R < 0:
        raise ValueError("R must be >= 0")
    starts, offsets, pi, pj = _region_paths(dist, R)
    return RegionPaths(starts, offsets, pi, pj, dist[pi, pj])


def fragment_table(paths: RegionPaths, L: int):
    """Per-region (begin, end, avg, short) arrays; begin/end 0-based within the path."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return _fragments(paths.step_dists, paths.offsets, L)


def _as_array(x) -> np.ndarray:
    if isinstance(x, EmbeddingSequence):
        return x.vectors
    return np.atleast_2d(np.asarray(x, dtype=float))


def distance_matrix(X, Y, metric) -> np.ndarray:
    xs, ys = _as_array(X), _as_array(Y)
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    return metric.pairwise(xs, ys)


def banded_dtw_matrix(dist, region: Region) -> AlignmentPath:
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    I, J = dist.shape
    si, sj = region.start
    if not (1 <= si <= I and 1 <= sj <= J):
        raise ValueError(f"region start {region.start} outside [1,{I}]x[1,{J}]")
    pi, pj = _banded_path(dist, si - 1, sj - 1, region.band_radius)
    step_dists = dist[pi, pj]
    steps = np.stack([pi + 1, pj + 1], axis=1)
    return AlignmentPath(steps, step_dists, float(step_dists.sum()))


def banded_dtw(X, Y, metric, region: Region) -> AlignmentPath:
    return banded_dtw_matrix(distance_matrix(X, Y, metric), region)


def min_avg_fragment(step_dists, L: int, max_length: int | None = None) -> tuple[int, int, float]:
    """Contiguous window of length >= L with the smallest mean (1-based, inclusive).

    Lists shorter than L are used whole. Ties go to the earliest begin, then
    the shortest window. ``max_length`` optionally caps the window length.
    """
    vals = np.ascontiguousarray(step_dists, dtype=np.float64)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("step_dists must be a non-empty 1-D sequence")
    if L < 1:
        raise ValueError("L must be >= 1")
    b, e, avg = _min_avg(vals, 0, vals.size, L, 0 if max_length is None else max_length)
    return int(b) + 1, int(e) + 1, float(avg)


def sdtw_matrix(dist, cfg: SdtwConfig = SdtwConfig()) -> list[Fragment]:
    paths = region_paths(dist, cfg.R)
    begin, end, avg, short = fragment_table(paths, cfg.L)
    return [
        Fragment(r, (int(s[0]) + 1, int(s[1]) + 1), int(b) + 1, int(e) + 1, float(a), bool(sh))
        for r, (s, b, e, a, sh) in enumerate(zip(paths.starts, begin, end, avg, short))
    ]


def sdtw(X, Y, metric, cfg: SdtwConfig = SdtwConfig()) -> list[Fragment]:
    """One minimum-average fragment per SDTW region.

    Regions whose optimal path is shorter than ``cfg.L`` still report their
    whole path, with ``short=True``.
    """
    return sdtw_matrix(distance_matrix(X, Y, metric), cfg)


def format_fragments(fragments) -> str:
    lines = ["# start_i\tstart_j\tbegin\tend\tlength\tavg_dist\tshort"]
    for f in fragments:
        lines.append(
            f"{f.region_start[0]}\t{f.region_start[1]}\t{f.begin}\t{f.end}\t{f.length}\t"
            f"{f.avg_dist:.9g}\t{int(f.short)}"
        )
    return "\n".join(lines) + "\n"
