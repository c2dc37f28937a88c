"""Embedding datasets, the CPEB file format, synthetic blobs and AL pools.

The frozen image encoder is modeled as a table of precomputed feature
vectors. A dataset holds those vectors together with integer labels (the
simulated oracle) and a train/test tag per row.

CPEB layout (all integers little-endian)::

    b"CPEB"            magic
    u16                version (1)
    u32 n, u32 E, u32 K
    u8                 flags (bit0: labels present)
    u32 + bytes        dataset name, UTF-8
    K x (u32 + bytes)  class names, UTF-8
    n*E float32        features, row-major
    n int32            labels
    n uint8            split tags (0 = train, 1 = test)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cpeal import rng as rngmod
from cpeal.errors import FormatError, SelectionError, TruncatedFileError, ValidationError

MAGIC = b"CPEB"
VERSION = 1
FLAG_LABELS = 0x01
TRAIN, TEST = 0, 1

_HEADER = struct.Struct("<4sHIIIB")
_LEN = struct.Struct("<I")


@dataclass(eq=False)
class EmbeddingDataset:
    """Feature vectors with labels and a train/test split tag per row."""

    name: str
    class_names: list[str]
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.class_names = [str(c) for c in self.class_names]
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.split = np.ascontiguousarray(self.split, dtype=np.uint8)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == TRAIN)

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(self.split == TEST)

    def validate(self) -> "EmbeddingDataset":
        """Check every dataset invariant, raising ValidationError on failure."""
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise ValidationError(f"features must be n x E with E >= 1, got {self.features.shape}")
        n, k = self.n, self.num_classes
        if k < 1:
            raise ValidationError("dataset needs at least one class")
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ValidationError("labels and split tags must have one entry per row")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")
        if n and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValidationError(f"labels must lie in [0, {k})")
        if np.any(self.split > TEST):
            raise ValidationError("split tags must be 0 (train) or 1 (test)")
        if n < k:
            raise ValidationError(f"need n >= K, got n={n}, K={k}")
        if not np.any(self.split == TEST):
            raise ValidationError("dataset has no test rows")
        return self

    def equals(self, other: "EmbeddingDataset") -> bool:
        """Field-by-field, bitwise comparison."""
        return (
            self.name == other.name
            and self.class_names == other.class_names
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
        )


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _LEN.pack(len(raw)) + raw


def dumps_dataset(ds: EmbeddingDataset) -> bytes:
    ds.validate()
    parts = [_HEADER.pack(MAGIC, VERSION, ds.n, ds.dim, ds.num_classes, FLAG_LABELS), _pack_str(ds.name)]
    parts.extend(_pack_str(c) for c in ds.class_names)
    parts.append(ds.features.astype("<f4", copy=False).tobytes())
    parts.append(ds.labels.astype("<i4", copy=False).tobytes())
    parts.append(ds.split.tobytes())
    return b"".join(parts)


def save_dataset(ds: EmbeddingDataset, path) -> None:
    """Write ``ds`` as CPEB. Validation happens before the file is touched."""
    payload = dumps_dataset(ds)
    Path(path).write_bytes(payload)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int, what: str) -> bytes:
        end = self.pos + nbytes
        if end > len(self.buf):
            raise TruncatedFileError(
                f"truncated CPEB payload reading {what}: need {nbytes} bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def string(self, what: str) -> str:
        (length,) = _LEN.unpack(self.take(_LEN.size, what))
        try:
            return self.take(length, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8") from exc


def loads_dataset(buf: bytes) -> EmbeddingDataset:
    r = _Reader(buf)
    magic, version, n, dim, k, flags = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported CPEB version {version}")
    if not flags & FLAG_LABELS:
        raise FormatError("CPEB file carries no labels; the simulated oracle needs them")
    if dim < 1 or k < 1:
        raise ValidationError(f"invalid header dimensions E={dim}, K={k}")
    name = r.string("dataset name")
    class_names = [r.string(f"class name {i}") for i in range(k)]
    feats = np.frombuffer(r.take(4 * n * dim, "features"), dtype="<f4").reshape(n, dim)
    labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<i4")
    split = np.frombuffer(r.take(n, "split tags"), dtype=np.uint8)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after CPEB payload")
    ds = EmbeddingDataset(name, class_names, feats.astype(np.float32), labels, split)
    return ds.validate()


def load_dataset(path) -> EmbeddingDataset:
    return loads_dataset(Path(path).read_bytes())


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of an isotropic Gaussian-blob dataset."""

    num_classes: int
    dim: int
    per_class: int
    class_separation: float
    within_class_scale: float = 1.0
    test_fraction: float = 0.25
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.num_classes < 1 or self.dim < 1:
            raise ValidationError("num_classes and dim must be positive")
        if self.per_class < 1:
            raise ValidationError("per_class must be >= 1 (need at least K rows)")
        if not (self.class_separation > 0 and self.within_class_scale > 0):
            raise ValidationError("class_separation and within_class_scale must be positive")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("test_fraction must lie in (0, 1)")
        if self.per_class * self.num_classes * self.test_fraction < 1:
            raise ValidationError("SynthSpec yields no test rows")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        return self


def _class_means(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    k, e, sep = spec.num_classes, spec.dim, spec.class_separation
    if k <= e:
        # scaled one-hot axes: every pair sits exactly sep apart
        means = np.zeros((k, e))
        means[np.arange(k), np.arange(k)] = sep / math.sqrt(2.0)
        return means
    radius = sep
    while True:
        for _ in range(200):
            dirs = rng.standard_normal((k, e))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            means = radius * dirs
            d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
            if d[np.triu_indices(k, 1)].min() >= sep:
                return means
        radius *= 1.5


def gen_synthetic(spec: SynthSpec) -> EmbeddingDataset:
    """Draw K Gaussian blobs with a stratified train/test split."""
    spec.validate()
    rng = rngmod.make_rng(rngmod.SYNTH, spec.seed)
    k, m = spec.num_classes, spec.per_class
    means = _class_means(spec, rng)
    labels = np.repeat(np.arange(k), m)
    feats = means[labels] + spec.within_class_scale * rng.standard_normal((k * m, spec.dim))

    n_test = max(1, int(round(k * m * spec.test_fraction)))
    per, extra = divmod(n_test, k)
    split = np.zeros(k * m, dtype=np.uint8)
    for c in range(k):
        take = min(m, per + (1 if c < extra else 0))
        rows = c * m + rng.permutation(m)[:take]
        split[rows] = TEST

    order = rng.permutation(k * m)
    ds = EmbeddingDataset(
        name=f"synth-K{k}-E{spec.dim}-s{spec.seed}",
        class_names=[f"class_{c}" for c in range(k)],
        features=feats[order],
        labels=labels[order],
        split=split[order],
    )
    return ds.validate()


@dataclass(frozen=True)
class PoolState:
    """Partition of the train rows into labeled and unlabeled index lists."""

    labeled: tuple[int, ...]
    unlabeled: tuple[int, ...]
    cycle: int = 0

    @classmethod
    def initial(cls, ds: EmbeddingDataset, n_initial: int = 0, seed: int = 0) -> "PoolState":
        """Fresh pool; ``n_initial`` train rows are pre-labeled at random."""
        train = [int(i) for i in ds.train_idx]
        if not 0 <= n_initial <= len(train):
            raise ValidationError(f"n_initial must be in [0, {len(train)}]")
        pool = cls(labeled=(), unlabeled=tuple(train), cycle=0)
        if n_initial:
            pick = rngmod.make_rng(rngmod.SELECT, seed, 0).choice(len(train), n_initial, replace=False)
            pool = reveal_labels(pool, [train[i] for i in pick])
        return pool

    def check(self, ds: EmbeddingDataset) -> None:
        lab, unl = set(self.labeled), set(self.unlabeled)
        if lab & unl:
            raise ValidationError("labeled and unlabeled pools overlap")
        if lab | unl != set(int(i) for i in ds.train_idx):
            raise ValidationError("pools do not cover exactly the train rows")

    def advance(self) -> "PoolState":
        return PoolState(self.labeled, self.unlabeled, self.cycle + 1)


def reveal_labels(pool: PoolState, indices: Iterable[int]) -> PoolState:
    """Move ``indices`` from the unlabeled to the labeled pool.

    The cycle counter is left alone; the caller advances it.
    """
    indices = [int(i) for i in indices]
    if len(set(indices)) != len(indices):
        raise SelectionError(f"duplicate indices in reveal request {indices}")
    unl = set(pool.unlabeled)
    missing = [i for i in indices if i not in unl]
    if missing:
        raise SelectionError(f"indices not in the unlabeled pool: {missing}")
    chosen = set(indices)
    return PoolState(
        labeled=pool.labeled + tuple(indices),
        unlabeled=tuple(i for i in pool.unlabeled if i not in chosen),
        cycle=pool.cycle,
    )


def oracle_labels(ds: EmbeddingDataset, indices: Sequence[int]) -> np.ndarray:
    """Simulated annotator: read the ground-truth label column."""
    return ds.labels[np.asarray(indices, dtype=np.int64)]
