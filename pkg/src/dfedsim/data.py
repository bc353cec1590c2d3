"""Synthetic datasets, client partitions and MNIST IDX ingestion."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dfedsim.errors import DfedsimError

__all__ = [
    "Dataset",
    "Partition",
    "QuadraticProblem",
    "PartitionError",
    "IdxFormatError",
    "BadMagicError",
    "TruncatedFileError",
    "CountMismatchError",
    "gen_synthetic_classification",
    "gen_quadratic",
    "iid_partition",
    "dirichlet_partition",
    "load_idx",
    "minibatch",
    "train_test_split",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class PartitionError(DfedsimError):
    """No acceptable partition could be drawn."""


class IdxFormatError(DfedsimError):
    """Base class for malformed IDX files."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with one target per row.

    For classification ``targets`` are integer labels in ``[0, n_classes)``;
    for regression (the quadratic test bed) ``n_classes`` is ``None`` and the
    targets are real.
    """

    features: np.ndarray
    targets: np.ndarray
    n_classes: int | None = None

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.targets) != self.features.shape[0]:
            raise ValueError(f"{len(self.targets)} targets for {self.features.shape[0]} feature rows")
        if self.n_classes is not None and len(self.targets):
            lo, hi = int(self.targets.min()), int(self.targets.max())
            if lo < 0 or hi >= self.n_classes:
                raise ValueError(f"labels span [{lo}, {hi}], outside [0, {self.n_classes})")

    @property
    def labels(self) -> np.ndarray:
        return self.targets

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.targets[idx], self.n_classes)


@dataclass(frozen=True)
class Partition:
    """Disjoint, exhaustive client shards. ``alpha`` is ``None`` for IID splits."""

    shards: tuple[np.ndarray, ...]
    alpha: float | None = None

    @property
    def m(self) -> int:
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]

    def class_counts(self, labels, n_classes: int) -> np.ndarray:
        labels = np.asarray(labels)
        return np.stack([np.bincount(labels[s], minlength=n_classes) for s in self.shards])


@dataclass(frozen=True)
class QuadraticProblem:
    """Per-client least squares ``f_i(x) = ||A_i x - b_i||^2 / (2 n_i)``."""

    A: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    x_star: np.ndarray

    @property
    def m(self) -> int:
        return len(self.A)

    @property
    def d(self) -> int:
        return self.A[0].shape[1]

    def client_minimizer(self, i: int) -> np.ndarray:
        return np.linalg.lstsq(self.A[i], self.b[i], rcond=None)[0]

    def global_minimizer(self) -> np.ndarray:
        """Minimizer of the client-averaged loss."""
        hess = sum(a.T @ a / len(a) for a in self.A)
        rhs = sum(a.T @ b / len(a) for a, b in zip(self.A, self.b))
        return np.linalg.solve(hess, rhs)

    def as_dataset(self) -> tuple[Dataset, Partition]:
        """Stack all clients' rows into one regression dataset with contiguous shards."""
        features = np.vstack(self.A)
        targets = np.concatenate(self.b)
        bounds = np.cumsum([0] + [len(a) for a in self.A])
        shards = tuple(np.arange(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]))
        return Dataset(features, targets), Partition(shards)


def gen_synthetic_classification(n: int, d: int, C: int, class_sep: float = 1.0, seed: int = 0) -> Dataset:
    """Gaussian blobs with unit-variance noise around ``C`` random centers.

    Centers are standard-normal draws scaled by ``class_sep``, so pairwise
    center distances scale linearly with it. Labels are balanced to within one.
    """
    if C < 2 or n < C or d < 1:
        raise ValueError(f"need n >= C >= 2 and d >= 1, got n={n}, C={C}, d={d}")
    rng = np.random.default_rng(seed)
    centers = class_sep * rng.standard_normal((C, d))
    labels = rng.permutation(np.arange(n) % C)
    features = centers[labels] + rng.standard_normal((n, d))
    return Dataset(features, labels.astype(np.int64), C)


def gen_quadratic(m: int, d: int, n_i: int, heterogeneity: float = 0.0, seed: int = 0) -> QuadraticProblem:
    """Random least-squares clients sharing ``x_star`` up to per-client shifts.

    ``b_i = A_i (x_star + heterogeneity * u_i)`` with unit vectors ``u_i``;
    heterogeneity 0 gives every client the common minimizer ``x_star``.
    """
    if min(m, d, n_i) < 1:
        raise ValueError(f"m, d, n_i must be >= 1, got {m}, {d}, {n_i}")
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal(d)
    A, b = [], []
    for _ in range(m):
        a = rng.standard_normal((n_i, d))
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        A.append(a)
        b.append(a @ (x_star + heterogeneity * u))
    return QuadraticProblem(tuple(A), tuple(b), x_star)


def train_test_split(data: Dataset, n_test: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 <= n_test < data.n:
        raise ValueError(f"n_test={n_test} must be in [0, {data.n})")
    perm = np.random.default_rng(seed).permutation(data.n)
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def iid_partition(n: int, m: int, seed: int = 0) -> Partition:
    if not 1 <= m <= n:
        raise PartitionError(f"cannot split {n} samples across {m} clients")
    perm = np.random.default_rng(seed).permutation(n)
    return Partition(tuple(np.sort(s) for s in np.array_split(perm, m)))


def dirichlet_partition(
    labels,
    m: int,
    alpha: float,
    min_size: int = 2,
    seed: int = 0,
    max_retries: int = 100,
) -> Partition:
    """Label-skewed split: per class, client shares are drawn from ``Dir(alpha * 1_m)``.

    The whole draw is repeated until every shard holds at least ``min_size``
    samples.

    Raises:
        PartitionError: if ``max_retries`` draws all leave a shard too small.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if alpha <= 0:
        raise PartitionError(f"alpha must be > 0, got {alpha}")
    if m < 1 or m * min_size > n:
        raise PartitionError(f"cannot give {m} clients at least {min_size} of {n} samples")
    if m == 1:
        return Partition((np.arange(n),), alpha)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    for _ in range(max_retries):
        buckets: list[list[np.ndarray]] = [[] for _ in range(m)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            p = rng.dirichlet(np.full(m, alpha))
            cuts = (np.cumsum(p)[:-1] * len(idx)).astype(int)
            for client, part in enumerate(np.split(idx, cuts)):
                buckets[client].append(part)
        shards = tuple(np.sort(np.concatenate(b)) for b in buckets)
        if min(len(s) for s in shards) >= min_size:
            return Partition(shards, alpha)
    raise PartitionError(
        f"no Dirichlet(alpha={alpha}) split of {n} samples gave all {m} shards >= {min_size} after {max_retries} draws"
    )


def _read_header(blob: bytes, path, magic: int, n_dims: int) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(blob) < header_len:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, shorter than the {header_len}-byte IDX header")
    got, *dims = struct.unpack(f">{1 + n_dims}I", blob[:header_len])
    if got != magic:
        raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    expected = header_len + int(np.prod(dims))
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, header promises {expected}")
    return tuple(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an MNIST-style IDX image/label pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_blob = images_path.read_bytes()
    lbl_blob = labels_path.read_bytes()
    n_img, rows, cols = _read_header(img_blob, images_path, IDX_IMAGES_MAGIC, 3)
    (n_lbl,) = _read_header(lbl_blob, labels_path, IDX_LABELS_MAGIC, 1)
    if n_img != n_lbl:
        raise CountMismatchError(f"{images_path} holds {n_img} images but {labels_path} holds {n_lbl} labels")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, count=n_lbl, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} outside 0-9")
    return Dataset(pixels.reshape(n_img, rows * cols) / 255.0, labels, 10)


def minibatch(shard, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch_size`` indices from ``shard`` uniformly with replacement."""
    shard = np.asarray(shard)
    if shard.size == 0:
        raise ValueError("cannot sample a minibatch from an empty shard")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return shard[rng.integers(0, shard.size, size=batch_size)]
