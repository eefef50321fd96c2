"""Seeded synthetic flow-like datasets with a class imbalance shaped like the
SCVIC-APT-2021 class distribution."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import ClassIndex, Dataset
from .errors import InvalidSpec

CLASS_NAMES = ("DE", "IC", "LM", "NT", "P", "R")
SCVIC_TRAIN_COUNTS = (527, 73, 729, 254836, 2122, 833)
SCVIC_TEST_COUNTS = (74, 77, 142, 55583, 360, 251)


def scaled_counts(counts, divisor: int = 50, minimum: int = 10) -> tuple[int, ...]:
    return tuple(max(minimum, math.ceil(c / divisor)) for c in counts)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for :func:`generate_synthetic`.

    Each class is a Gaussian mixture (``components_per_class`` components,
    unit within-component noise) whose centre sits on its own feature axis,
    so class centres are ``separation`` apart.

    With ``latent_clusters`` the first ``latent_dims`` features carry two
    latent clusters whose centres differ along the all-ones diagonal by
    ``cluster_separation``, and one extra "signal" feature decides between
    the two ``latent_pair`` classes with opposite sign in each cluster.
    Those two classes share everything else, so telling them apart means
    knowing the cluster.
    """

    class_names: tuple[str, ...] = CLASS_NAMES
    train_counts: tuple[int, ...] = scaled_counts(SCVIC_TRAIN_COUNTS)
    test_counts: tuple[int, ...] = scaled_counts(SCVIC_TEST_COUNTS)
    n_features: int = 20
    separation: float = 4.0
    components_per_class: int = 2
    component_spread: float = 1.0
    latent_clusters: bool = False
    latent_pair: tuple[str, str] = ("DE", "R")
    latent_dims: int = 16
    cluster_separation: float = 6.0
    signal_offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        m = len(self.class_names)
        if len(self.train_counts) != m or len(self.test_counts) != m:
            raise InvalidSpec("one train and one test count per class")
        if min(self.train_counts) < 0 or min(self.test_counts) < 0:
            raise InvalidSpec("counts must be nonnegative")
        if sum(c > 0 for c in self.train_counts) < 2:
            raise InvalidSpec("at least two classes need training rows")
        if self.n_features < m:
            raise InvalidSpec(f"need n_features >= number of classes ({m})")
        if self.components_per_class < 1:
            raise InvalidSpec("components_per_class must be >= 1")
        if self.latent_clusters:
            if len(set(self.latent_pair)) != 2 or any(c not in self.class_names for c in self.latent_pair):
                raise InvalidSpec("latent_pair must name two distinct classes")
            if self.latent_dims < 1:
                raise InvalidSpec("latent_dims must be >= 1")

    @property
    def total_features(self) -> int:
        return self.n_features + (self.latent_dims + 1 if self.latent_clusters else 0)

    def feature_names(self) -> list[str]:
        names = [f"class_{j}" for j in range(self.n_features)]
        if self.latent_clusters:
            names = [f"latent_{j}" for j in range(self.latent_dims)] + ["signal"] + names
        return names

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for key in ("class_names", "train_counts", "test_counts", "latent_pair"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None


@dataclass
class _Recipe:
    centers: np.ndarray
    offsets: np.ndarray
    cluster_centers: np.ndarray | None = None
    pair: tuple[int, int] | None = None
    extra: dict = field(default_factory=dict)


def _recipe(spec: SyntheticSpec, rng: np.random.Generator) -> _Recipe:
    m, d = len(spec.class_names), spec.n_features
    # each class centre sits on its own feature axis, so single features
    # carry the class signal and axis-aligned trees can use it
    axes = rng.permutation(d)[:m]
    centers = np.zeros((m, d))
    centers[np.arange(m), axes] = spec.separation / math.sqrt(2.0)
    offsets = spec.component_spread * rng.normal(size=(m, spec.components_per_class, d)) / math.sqrt(d)
    rec = _Recipe(centers, offsets)
    if spec.latent_clusters:
        a, b = (spec.class_names.index(c) for c in spec.latent_pair)
        # the pair shares one class-block distribution
        centers[b] = centers[a]
        offsets[b] = offsets[a]
        u = np.ones(spec.latent_dims) / math.sqrt(spec.latent_dims)
        rec.cluster_centers = np.stack([0.5 * spec.cluster_separation * u, -0.5 * spec.cluster_separation * u])
        rec.pair = (a, b)
    return rec


def _draw(spec: SyntheticSpec, rec: _Recipe, counts, rng: np.random.Generator) -> Dataset:
    blocks, labels = [], []
    for c, n_c in enumerate(counts):
        if n_c == 0:
            continue
        comp = rng.integers(spec.components_per_class, size=n_c)
        xc = rec.centers[c] + rec.offsets[c, comp] + rng.normal(size=(n_c, spec.n_features))
        if spec.latent_clusters:
            cluster = rng.integers(2, size=n_c)
            latent = rec.cluster_centers[cluster] + rng.normal(size=(n_c, spec.latent_dims))
            if c in rec.pair:
                side = 1.0 if c == rec.pair[0] else -1.0
                sign = np.where(cluster == 0, 1.0, -1.0) * side
                signal = sign * (spec.signal_offset + np.abs(rng.normal(size=n_c)))
            else:
                signal = rng.normal(size=n_c) * (spec.signal_offset + 1.0)
            xc = np.hstack([latent, signal[:, None], xc])
        blocks.append(xc)
        labels.append(np.full(n_c, c))
    x = np.vstack(blocks)
    y = np.concatenate(labels)
    perm = rng.permutation(y.size)
    return Dataset(x[perm], y[perm], ClassIndex(tuple(spec.class_names)))


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> tuple[Dataset, Dataset]:
    """Draw ``(train, test)`` with exactly the requested class counts."""
    rng = np.random.default_rng(spec.seed)
    rec = _recipe(spec, rng)
    train = _draw(spec, rec, spec.train_counts, rng)
    test = _draw(spec, rec, spec.test_counts, rng)
    return train, test
