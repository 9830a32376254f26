"""Architecture-performance datasets: loading, splitting, histograms, synthesis.

A dataset couples integer feature vectors (one encoded architecture per row)
with a measured performance in (0, 1] per row.  The on-disk format is plain
ASCII text, one record per line, comma separated: all integer feature fields
first, then one decimal performance field, no header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DatasetError",
    "ArchitectureRecord",
    "ArchitectureDataset",
    "Histogram",
    "SyntheticSpace",
    "load_dataset",
    "save_dataset",
    "sorted_split",
    "performance_histogram",
    "save_histogram",
    "generate_synthetic",
]


class DatasetError(ValueError):
    """Raised for malformed or unusable dataset files and arguments."""


@dataclass(frozen=True)
class ArchitectureRecord:
    """One sampled architecture: its integer encoding and measured accuracy."""

    features: np.ndarray
    performance: float


@dataclass(frozen=True)
class ArchitectureDataset:
    """Immutable collection of architecture records with a common feature length.

    ``features`` is an (n, feature_len) int64 array, ``performances`` a
    matching (n,) float64 array with every value in (0, 1].
    """

    features: np.ndarray
    performances: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.int64))
        perfs = np.ascontiguousarray(np.asarray(self.performances, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[1] < 1:
            raise DatasetError("features must be a non-empty 2-d integer array")
        if perfs.ndim != 1 or perfs.shape[0] != feats.shape[0]:
            raise DatasetError("performances must match features row for row")
        if feats.shape[0] == 0:
            raise DatasetError("dataset must contain at least one record")
        if np.any(perfs <= 0.0) or np.any(perfs > 1.0):
            raise DatasetError("every performance must lie in (0, 1]")
        feats.setflags(write=False)
        perfs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "performances", perfs)

    @property
    def feature_len(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def record(self, i: int) -> ArchitectureRecord:
        return ArchitectureRecord(self.features[i], float(self.performances[i]))

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))


@dataclass(frozen=True)
class Histogram:
    """Fixed-width binning of performance values.

    The bin index of value x is floor((x - origin) / bin_width); ``counts``
    maps occupied bin indices to their occupancy.
    """

    bin_width: float
    origin: float
    counts: dict = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.counts.values())

    def bin_lower_edge(self, index: int) -> float:
        return self.origin + index * self.bin_width


def _parse_line(line: str, lineno: int, feature_len: int | None):
    fields = line.split(",")
    if feature_len is not None and len(fields) != feature_len + 1:
        raise DatasetError(
            f"line {lineno}: expected {feature_len + 1} fields, got {len(fields)}"
        )
    if len(fields) < 2:
        raise DatasetError(f"line {lineno}: expected at least 2 fields, got {len(fields)}")
    try:
        features = [int(f) for f in fields[:-1]]
    except ValueError:
        raise DatasetError(f"line {lineno}: non-integer feature field") from None
    try:
        performance = float(fields[-1])
    except ValueError:
        raise DatasetError(f"line {lineno}: unreadable performance field") from None
    if math.isnan(performance) or performance < 0.0 or performance > 1.0:
        raise DatasetError(f"line {lineno}: performance {fields[-1]} outside [0, 1]")
    return features, performance


def load_dataset(path) -> ArchitectureDataset:
    """Read a dataset file, dropping records whose performance is exactly 0.

    The feature length is inferred from the first row; every later row must
    agree.  Errors report the offending 1-based line number.
    """
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset file {path}: {exc}") from exc

    feature_len = None
    features, performances = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        row, perf = _parse_line(line.strip(), lineno, feature_len)
        if feature_len is None:
            feature_len = len(row)
        if perf == 0.0:
            continue
        features.append(row)
        performances.append(perf)
    if not features:
        raise DatasetError(f"{path}: no usable records after filtering")
    return ArchitectureDataset(np.array(features, dtype=np.int64), np.array(performances))


def save_dataset(dataset: ArchitectureDataset, path) -> None:
    """Write a dataset in the load format (comma separated, LF line endings)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for i in range(len(dataset)):
            row = ",".join(str(int(v)) for v in dataset.features[i])
            fh.write(f"{row},{dataset.performances[i]!r}\n")


def sorted_split(dataset: ArchitectureDataset, train_fraction: float = 0.7):
    """Split into (train, test) after a stable ascending sort by performance.

    The training half holds the floor(train_fraction * n) lowest-performing
    records, so max(train performance) <= min(test performance).  Ties keep
    their load order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    order = np.argsort(dataset.performances, kind="stable")
    n_train = int(math.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DatasetError(
            f"cannot split {n} records with fraction {train_fraction}: one side empty"
        )
    train_idx, test_idx = order[:n_train], order[n_train:]
    train = ArchitectureDataset(dataset.features[train_idx], dataset.performances[train_idx])
    test = ArchitectureDataset(dataset.features[test_idx], dataset.performances[test_idx])
    return train, test


# Relative slack when a value lands within float error of the next bin edge.
_EDGE_SNAP = 1e-9


def performance_histogram(
    dataset: ArchitectureDataset, bin_width: float = 0.001, origin: float = 0.0
) -> Histogram:
    """Bin the performance values into fixed-width intervals."""
    if bin_width <= 0:
        raise DatasetError(f"bin_width must be positive, got {bin_width}")
    counts: dict[int, int] = {}
    for value in dataset.performances:
        q = (value - origin) / bin_width
        idx = math.floor(q)
        if q - idx > 1.0 - _EDGE_SNAP:  # 0.003/0.001 -> 2.9999...; snap to 3
            idx += 1
        counts[idx] = counts.get(idx, 0) + 1
    return Histogram(bin_width=bin_width, origin=origin, counts=counts)


def save_histogram(hist: Histogram, path) -> None:
    """Write occupied bins as ``bin_lower_edge,count`` lines, ascending."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for idx in sorted(hist.counts):
            fh.write(f"{hist.bin_lower_edge(idx)!r},{hist.counts[idx]}\n")


@dataclass(frozen=True)
class SyntheticSpace:
    """A synthetic architecture space with a known performance oracle.

    Genotypes are integer vectors with per-position bounds [lows, highs].
    The noise-free performance of genotype x is sigmoid(weights . x + bias),
    which is monotone per position, so the true optimum is known in closed
    form.  Weights are scaled so performances spread over most of (0, 1).
    """

    lows: np.ndarray
    highs: np.ndarray
    weights: np.ndarray
    bias: float

    # Spread and centre of the noise-free score distribution.
    SCORE_SCALE = 2.2
    SCORE_OFFSET = 0.7

    @classmethod
    def from_seed(cls, feature_len: int, seed: int) -> "SyntheticSpace":
        if feature_len < 1:
            raise DatasetError("feature_len must be >= 1")
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
        highs = rng.integers(2, 10, size=feature_len)
        lows = np.zeros(feature_len, dtype=np.int64)
        raw = rng.normal(size=feature_len)
        spread = (highs - lows) / math.sqrt(12.0)  # sd of the uniform positions
        weights = cls.SCORE_SCALE * raw / (spread * math.sqrt(feature_len))
        centre = (highs + lows) / 2.0
        bias = cls.SCORE_OFFSET - float(weights @ centre)
        return cls(lows=lows, highs=highs.astype(np.int64), weights=weights, bias=bias)

    def performance(self, genotype) -> float | np.ndarray:
        """Noise-free performance of one genotype or a batch of rows."""
        x = np.asarray(genotype, dtype=np.float64)
        score = x @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-score))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(self.lows, self.highs + 1, size=(n, len(self.lows)))

    def optimum(self):
        """The genotype maximising the oracle, with its performance."""
        best = np.where(self.weights > 0, self.highs, self.lows).astype(np.int64)
        return best, float(self.performance(best))

    def contains(self, genotype) -> bool:
        g = np.asarray(genotype)
        return bool(np.all(g >= self.lows) and np.all(g <= self.highs))


def generate_synthetic(
    n: int, feature_len: int = 31, seed: int = 0, noise: float = 0.0
) -> ArchitectureDataset:
    """Draw a reproducible dataset from a seed-derived :class:`SyntheticSpace`.

    Features are uniform over the per-position integer ranges; performances
    are the oracle values plus uniform noise of half-width ``noise``, clamped
    back into (0, 1].  The same arguments always produce the same dataset.
    """
    if n < 2:
        raise DatasetError(f"need at least 2 records, got {n}")
    if noise < 0:
        raise DatasetError(f"noise must be non-negative, got {noise}")
    space = SyntheticSpace.from_seed(feature_len, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    features = space.sample(rng, n)
    performances = space.performance(features)
    if noise > 0:
        performances = performances + rng.uniform(-noise, noise, size=n)
    performances = np.clip(performances, 1e-6, 1.0)
    return ArchitectureDataset(features, performances)
