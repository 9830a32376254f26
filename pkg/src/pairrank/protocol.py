"""Training-data construction for the four predictor-training regimes.

PROPOSED pairs every two records, uses the elementwise difference of their
feature vectors as the instance and a binary ranking label as the target.
BASELINE is the traditional regression setup (raw features -> accuracy).
G1 keeps the difference instances but regresses on the signed performance
difference; G2 keeps only one of the two mirrored samples per pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .dataset import ArchitectureDataset, DatasetError

__all__ = [
    "Protocol",
    "PairDataset",
    "RegressionDataset",
    "build_pair_instances",
    "build_pair_labels",
    "build_training_data",
    "build_baseline_data",
    "build_ablation_g1",
    "build_ablation_g2",
    "save_pair_dataset",
    "save_regression_dataset",
]


class Protocol(str, enum.Enum):
    """The training regime a predictor was built for."""

    PROPOSED = "proposed"
    BASELINE = "baseline"
    G1 = "g1"
    G2 = "g2"


@dataclass(frozen=True)
class PairDataset:
    """Difference instances with binary ranking labels.

    ``diffs[k]`` is features[i] - features[j] for the ordered source pair
    ``sources[k] = (i, j)`` (0-based row indices into the originating
    dataset); ``labels[k]`` is 1 iff performance[i] >= performance[j].
    """

    diffs: np.ndarray
    labels: np.ndarray
    sources: np.ndarray

    def __post_init__(self):
        for name in ("diffs", "labels", "sources"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def feature_len(self) -> int:
        return self.diffs.shape[1]

    def __len__(self) -> int:
        return self.diffs.shape[0]


@dataclass(frozen=True)
class RegressionDataset:
    """Plain feature matrix and real-valued targets."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs.setflags(write=False)
        self.targets.setflags(write=False)
        if len(self.inputs) != len(self.targets):
            raise DatasetError("inputs and targets must have equal length")

    def __len__(self) -> int:
        return len(self.inputs)


def _ordered_pair_indices(n: int):
    """All ordered index pairs in traversal order.

    Unordered pairs are visited with the outer index ascending and the inner
    index ascending; each contributes its two orderings back to back:
    (0,1), (1,0), (0,2), (2,0), ...
    """
    ii, jj = np.triu_indices(n, k=1)
    first = np.empty(2 * len(ii), dtype=np.int64)
    second = np.empty_like(first)
    first[0::2], second[0::2] = ii, jj
    first[1::2], second[1::2] = jj, ii
    return first, second


def build_pair_instances(vectors):
    """Differences of every ordered pair of feature vectors.

    Returns (diffs, sources): for each unordered pair {i, j} with i < j the
    rows (v_i - v_j, (i, j)) and (v_j - v_i, (j, i)), giving n*(n-1) rows in
    the fixed traversal order.
    """
    v = np.asarray(vectors, dtype=np.int64)
    if v.ndim != 2:
        raise DatasetError("vectors must be a 2-d array of equal-length rows")
    n = v.shape[0]
    if n < 2:
        raise DatasetError(f"need at least 2 vectors to build pairs, got {n}")
    first, second = _ordered_pair_indices(n)
    diffs = v[first] - v[second]
    sources = np.stack([first, second], axis=1)
    return diffs, sources


def build_pair_labels(performances):
    """Binary ranking labels in the pair traversal order.

    For each unordered pair {i, j} with i < j appends (1, 0) when
    p_i - p_j >= 0 and (0, 1) otherwise, matching build_pair_instances row
    for row.
    """
    p = np.asarray(performances, dtype=np.float64)
    n = p.shape[0]
    if n < 2:
        raise DatasetError(f"need at least 2 performances to build labels, got {n}")
    first, second = _ordered_pair_indices(n)
    return (p[first] >= p[second]).astype(np.int8)


def build_training_data(dataset: ArchitectureDataset) -> PairDataset:
    """Pair up a dataset into difference instances with ranking labels.

    The result holds n*(n-1) samples, exactly half labelled 1, and for every
    sample its mirror with negated difference and complemented label.
    """
    diffs, sources = build_pair_instances(dataset.features)
    labels = build_pair_labels(dataset.performances)
    return PairDataset(diffs=diffs, labels=labels, sources=sources)


def build_baseline_data(dataset: ArchitectureDataset) -> RegressionDataset:
    """The traditional setup: raw feature vectors against raw accuracies."""
    return RegressionDataset(
        inputs=dataset.features.copy(), targets=dataset.performances.copy()
    )


def build_ablation_g1(dataset: ArchitectureDataset) -> RegressionDataset:
    """Difference instances with signed performance differences as targets."""
    diffs, sources = build_pair_instances(dataset.features)
    targets = dataset.performances[sources[:, 0]] - dataset.performances[sources[:, 1]]
    return RegressionDataset(inputs=diffs, targets=targets)


def build_ablation_g2(dataset: ArchitectureDataset, seed: int) -> PairDataset:
    """Keep one mirrored sample per pair, chosen by a seeded fair coin."""
    full = build_training_data(dataset)
    n_pairs = len(full) // 2
    rng = np.random.default_rng(seed)
    keep_second = rng.integers(0, 2, size=n_pairs).astype(bool)
    rows = 2 * np.arange(n_pairs) + keep_second
    return PairDataset(
        diffs=full.diffs[rows].copy(),
        labels=full.labels[rows].copy(),
        sources=full.sources[rows].copy(),
    )


def save_pair_dataset(pairs: PairDataset, path) -> None:
    """Write difference fields then the label, comma separated."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for k in range(len(pairs)):
            row = ",".join(str(int(v)) for v in pairs.diffs[k])
            fh.write(f"{row},{int(pairs.labels[k])}\n")


def save_regression_dataset(data: RegressionDataset, path) -> None:
    """Write input fields then the target, comma separated."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for k in range(len(data)):
            row = ",".join(str(int(v)) for v in data.inputs[k])
            fh.write(f"{row},{data.targets[k]!r}\n")
