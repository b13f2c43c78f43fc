"""Embedding sequences, sliding-window arithmetic and sequence file I/O.

Binary layout (little-endian)::

    b"ESEQ" | u32 version (=1) | u32 dim | u64 count | u16 id_len | id (utf-8)
    | count * dim float32, row-major

A plain-text variant is accepted on read: a ``#id:<name>`` header line followed
by one whitespace-separated vector per line.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ESEQ"
VERSION = 1
_HEADER = struct.Struct("<4sIIQH")


class SequenceFormatError(ValueError):
    """Base class for sequence file problems."""

    code = 1


class MalformedHeaderError(SequenceFormatError):
    code = 2


class DimensionMismatchError(SequenceFormatError):
    code = 3


class NonFiniteValueError(SequenceFormatError):
    code = 4


@dataclass(frozen=True)
class EmbeddingSequence:
    """An ordered run of fixed-dimension embeddings from one utterance."""

    id: str
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.id:
            raise ValueError("sequence id must be non-empty")
        vecs = np.array(self.vectors, dtype=np.float64)
        if vecs.ndim == 1:
            vecs = vecs[None, :]
        if vecs.ndim != 2 or vecs.shape[0] < 1 or vecs.shape[1] < 1:
            raise ValueError(f"expected a non-empty (N, dim) array, got shape {vecs.shape}")
        if not np.all(np.isfinite(vecs)):
            raise NonFiniteValueError(f"sequence {self.id!r} contains non-finite values")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSequence):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


@dataclass(frozen=True)
class WindowSpec:
    window_len: int = 200
    step: int = 50

    def __post_init__(self):
        if self.window_len < 1 or self.step < 1:
            raise ValueError("window_len and step must both be >= 1")


def window_starts(n_frames: int, spec: WindowSpec = WindowSpec()) -> list[int]:
    """1-based start frames of every full window that fits in ``n_frames``.

    An utterance shorter than one window yields the single truncated window
    starting at frame 1.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if n_frames < spec.window_len:
        return [1]
    return list(range(1, n_frames - spec.window_len + 2, spec.step))


def write_sequence(seq: EmbeddingSequence, path) -> None:
    ident = seq.id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise ValueError("sequence id too long")
    payload = np.ascontiguousarray(seq.vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, seq.dim, len(seq), len(ident)))
        fh.write(ident)
        fh.write(payload.tobytes())


def read_sequence(path) -> EmbeddingSequence:
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return _parse_binary(data, path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedHeaderError(f"{path}: neither ESEQ binary nor text") from None
    return _parse_text(text, path)


def _parse_binary(data: bytes, path) -> EmbeddingSequence:
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: truncated header")
    magic, version, dim, count, id_len = _HEADER.unpack_from(data)
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if dim < 1 or count < 1:
        raise MalformedHeaderError(f"{path}: dim and count must be positive")
    start = _HEADER.size + id_len
    if len(data) < start:
        raise MalformedHeaderError(f"{path}: truncated id")
    try:
        ident = data[_HEADER.size:start].decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedHeaderError(f"{path}: id is not valid utf-8") from None
    body = data[start:]
    if len(body) != 4 * dim * count:
        raise DimensionMismatchError(
            f"{path}: header promises {count}x{dim} floats, payload holds {len(body) / 4:g}"
        )
    vecs = np.frombuffer(body, dtype="<f4").reshape(count, dim)
    if not np.all(np.isfinite(vecs)):
        raise NonFiniteValueError(f"{path}: non-finite values in payload")
    if not ident:
        raise MalformedHeaderError(f"{path}: empty sequence id")
    return EmbeddingSequence(ident, vecs.astype(np.float64))


def _parse_text(text: str, path) -> EmbeddingSequence:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("#id:"):
        raise MalformedHeaderError(f"{path}: missing '#id:' header line")
    ident = lines[0][4:].strip()
    if not ident:
        raise MalformedHeaderError(f"{path}: empty sequence id")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if ln.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in ln.split()])
        except ValueError:
            raise MalformedHeaderError(f"{path}:{lineno}: unparsable number") from None
    if not rows:
        raise MalformedHeaderError(f"{path}: no vectors")
    dim = len(rows[0])
    for lineno, row in enumerate(rows, start=2):
        if len(row) != dim:
            raise DimensionMismatchError(f"{path}: row {lineno} has {len(row)} values, expected {dim}")
    if not all(math.isfinite(x) for row in rows for x in row):
        raise NonFiniteValueError(f"{path}: non-finite values")
    return EmbeddingSequence(ident, np.array(rows))


def write_directory(seqs, directory) -> None:
    """Write each sequence to ``<directory>/<id>.eseq``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        write_sequence(seq, directory / f"{seq.id}.eseq")


def read_directory(directory) -> dict[str, EmbeddingSequence]:
    out = {}
    for p in sorted(Path(directory).glob("*")):
        if p.suffix in (".eseq", ".txt"):
            seq = read_sequence(p)
            out[seq.id] = seq
    return out
