"""Encoded datasets, stratified splits and feature standardization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSplit, DimensionMismatch, EmptyDataset, EmptyLabelList, UnknownLabel
from .flows import FeatureTable


@dataclass(frozen=True)
class ClassIndex:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"class names must be unique: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownLabel(f"label {name!r} not in class index {list(self.names)}") from None

    def to_list(self) -> list[str]:
        return list(self.names)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    class_index: ClassIndex

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"x {x.shape} and y {y.shape} do not line up")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_index)):
            raise UnknownLabel("label value outside the class index")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_index)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.x[rows], self.y[rows], self.class_index)

    def select_columns(self, cols) -> "Dataset":
        return Dataset(self.x[:, cols], self.y, self.class_index)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


def encode_labels(
    labels: Sequence[str], classes: Sequence[str] | None = None
) -> tuple[np.ndarray, ClassIndex, dict[str, int]]:
    """Map class names to integers.

    Classes are numbered in first-appearance order unless ``classes`` gives
    an explicit order. Returns ``(y, class_index, counts)``.
    """
    if len(labels) == 0:
        raise EmptyLabelList("cannot encode an empty label list")
    if classes is None:
        classes = list(dict.fromkeys(labels))
    ci = ClassIndex(tuple(classes))
    lookup = {name: i for i, name in enumerate(ci.names)}
    try:
        y = np.fromiter((lookup[lab] for lab in labels), dtype=np.int64, count=len(labels))
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} not in class index {list(ci.names)}") from None
    counts = np.bincount(y, minlength=len(ci))
    return y, ci, {name: int(c) for name, c in zip(ci.names, counts)}


def dataset_from_table(table: FeatureTable, classes: Sequence[str] | None = None) -> Dataset:
    y, ci, _ = encode_labels(table.labels, classes)
    return Dataset(table.values, y, ci)


def dataset_to_table(ds: Dataset, feature_names: Sequence[str] | None = None) -> FeatureTable:
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(ds.d)]
    labels = [ds.class_index.names[i] for i in ds.y]
    return FeatureTable(names, np.array(ds.x), labels)


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


def stratified_split_indices(y: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per class, send round(fraction * n_c) shuffled rows to validation.

    Both index arrays come back sorted so the original row order survives.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(spec.seed)
    val = []
    for c in np.unique(y):
        rows = np.flatnonzero(y == c)
        n_val = int(np.floor(spec.validation_fraction * rows.size + 0.5))
        if n_val >= rows.size:
            raise DegenerateSplit(f"class {c} ({rows.size} rows) would lose all training rows")
        val.append(rng.permutation(rows)[:n_val])
    val_idx = np.sort(np.concatenate(val)) if val else np.empty(0, dtype=np.int64)
    mask = np.ones(y.size, dtype=bool)
    mask[val_idx] = False
    return np.flatnonzero(mask), val_idx


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    train_idx, val_idx = stratified_split_indices(ds.y, spec)
    return ds.subset(train_idx), ds.subset(val_idx)


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.means.size:
            raise DimensionMismatch(f"expected {self.means.size} columns, got {x.shape}")
        scale = np.where(self.stds > 0, self.stds, 1.0)
        return (x - self.means) / scale

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64))


def fit_standardizer(train) -> Standardizer:
    """Column means and population (1/n) standard deviations."""
    x = train.x if isinstance(train, Dataset) else np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset("cannot fit a standardizer on zero rows")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    constant = np.ptp(x, axis=0) == 0
    means[constant] = x[0, constant]
    stds[constant] = 0.0
    return Standardizer(means, stds)


def apply_standardizer(s: Standardizer, x) -> np.ndarray:
    return s.apply(x)
