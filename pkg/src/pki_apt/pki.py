"""Prior-knowledge-input pipelines.

Unsupervised models are fitted on the standardized selected features;
each contributes one integer column of cluster labels that is appended to
the (unstandardized) selected features before the supervised model sees
them. PKI uses one such model, Progressive PKI a stack of independently
seeded ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterSpec, cluster_from_dict
from .dataset import ClassIndex, Dataset, Standardizer, fit_standardizer
from .errors import ConfigError, DimensionMismatch, SweepError
from .featsel import SelectionResult, full_selection
from .metrics import macro_f1_score
from .parallel import parallel_map
from .supervised import SupervisedSpec, fit_supervised, supervised_from_dict

MODEL_FORMAT_VERSION = 1
DEFAULT_K_CANDIDATES = (1, *range(2, 21))


@dataclass
class PriorKnowledgeStack:
    members: list
    standardizer: Standardizer | None
    seeds: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.members)

    def labels(self, x_sel: np.ndarray) -> np.ndarray:
        """Cluster-label matrix (n, size) for already-selected features."""
        x_sel = np.asarray(x_sel, dtype=np.float64)
        if self.size == 0:
            return np.empty((x_sel.shape[0], 0))
        z = self.standardizer.apply(x_sel)
        return np.column_stack([m.assign(z) for m in self.members]).astype(np.float64)

    def head(self, s: int) -> "PriorKnowledgeStack":
        return PriorKnowledgeStack(self.members[:s], self.standardizer if s else None, self.seeds[:s])

    def to_dict(self) -> dict:
        return {
            "standardizer": self.standardizer.to_dict() if self.standardizer is not None else None,
            "seeds": list(self.seeds),
            "members": [m.to_dict() for m in self.members],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorKnowledgeStack":
        std = Standardizer.from_dict(d["standardizer"]) if d["standardizer"] is not None else None
        return cls([cluster_from_dict(m) for m in d["members"]], std, list(d["seeds"]))


def fit_stack(x_sel, spec: ClusterSpec, ks, seeds, standardizer: Standardizer | None = None) -> PriorKnowledgeStack:
    """One member per (k, seed) pair, all on the same standardized input."""
    ks, seeds = list(ks), list(seeds)
    if len(ks) != len(seeds):
        raise ConfigError("need one seed per stack member")
    if not ks:
        return PriorKnowledgeStack([], None, [])
    std = standardizer or fit_standardizer(x_sel)
    z = std.apply(x_sel)
    return PriorKnowledgeStack([spec.fit(z, k, s) for k, s in zip(ks, seeds)], std, seeds)


def augment_with_prior_knowledge(x_sel, stack: PriorKnowledgeStack) -> np.ndarray:
    """Selected features followed by one cluster-label column per member."""
    x_sel = np.asarray(x_sel, dtype=np.float64)
    if stack.size and x_sel.shape[1] != stack.standardizer.means.size:
        raise DimensionMismatch(f"stack expects {stack.standardizer.means.size} columns, got {x_sel.shape[1]}")
    if stack.size == 0:
        return x_sel
    return np.hstack([x_sel, stack.labels(x_sel)])


@dataclass
class PkiModel:
    selection: SelectionResult
    stack: PriorKnowledgeStack
    supervised: object
    class_index: ClassIndex
    n_input_features: int
    meta: dict = field(default_factory=dict)

    @property
    def input_width(self) -> int:
        return self.selection.k + self.stack.size

    def transform(self, x_raw) -> np.ndarray:
        x_raw = np.asarray(x_raw, dtype=np.float64)
        if x_raw.ndim != 2 or x_raw.shape[1] != self.n_input_features:
            raise DimensionMismatch(f"model expects {self.n_input_features} input features, got {x_raw.shape}")
        return augment_with_prior_knowledge(x_raw[:, self.selection.columns], self.stack)

    def predict(self, x_raw) -> np.ndarray:
        return self.supervised.predict(self.transform(x_raw))

    def to_dict(self) -> dict:
        return {
            "format": "pki-model",
            "version": MODEL_FORMAT_VERSION,
            "class_index": self.class_index.to_list(),
            "n_input_features": self.n_input_features,
            "selection": self.selection.to_dict(),
            "stack": self.stack.to_dict(),
            "supervised": self.supervised.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PkiModel":
        if d.get("format") != "pki-model" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ConfigError(f"not a version-{MODEL_FORMAT_VERSION} pki-model document")
        return cls(
            SelectionResult.from_dict(d["selection"]),
            PriorKnowledgeStack.from_dict(d["stack"]),
            supervised_from_dict(d["supervised"]),
            ClassIndex(tuple(d["class_index"])),
            int(d["n_input_features"]),
            d.get("meta", {}),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PkiModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SweepTrace:
    parameter: str
    records: list[tuple[int, float]]
    best: int
    best_score: float

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "records": [[int(c), float(f)] for c, f in self.records],
            "best": int(self.best),
            "best_score": float(self.best_score),
        }

    def to_csv(self) -> str:
        return f"{self.parameter},macro_f1\n" + "".join(f"{c},{f:.6f}\n" for c, f in self.records)


def _argmax_first(records):
    best, best_f = records[0]
    for c, f in records[1:]:
        if f > best_f:
            best, best_f = c, f
    return best, best_f


def pki_predict(model: PkiModel, x_raw) -> np.ndarray:
    """select -> standardize -> cluster labels -> augment -> predict."""
    return model.predict(x_raw)


progressive_pki_predict = pki_predict


def _selection_or_full(selection, d):
    return selection if selection is not None else full_selection(d)


def _eval_stack(train_sel, val_sel, train: Dataset, val: Dataset, stack, sup_spec, seed):
    model = fit_supervised(sup_spec, augment_with_prior_knowledge(train_sel, stack), train.y, train.n_classes, seed)
    pred = model.predict(augment_with_prior_knowledge(val_sel, stack))
    return model, macro_f1_score(val.y, pred, train.n_classes)


def _pki_candidate(args):
    k, train_sel, val_sel, train, val, unsup, sup_spec, seed = args
    try:
        stack = fit_stack(train_sel, unsup, [k], [seed]) if k > 1 else PriorKnowledgeStack([], None, [])
        model, score = _eval_stack(train_sel, val_sel, train, val, stack, sup_spec, seed)
    except Exception as exc:
        raise SweepError("pki cluster sweep", k, exc) from exc
    return k, score, stack, model


def pki_train(
    train: Dataset,
    val: Dataset,
    unsup: ClusterSpec,
    sup_spec: SupervisedSpec,
    selection: SelectionResult | None = None,
    k_candidates=DEFAULT_K_CANDIDATES,
    seed: int = 0,
    jobs: int = 1,
) -> tuple[PkiModel, SweepTrace]:
    """Sweep the cluster count of a single prior-knowledge model.

    ``k = 1`` means no prior knowledge (stack of size 0), so the sweep
    always contains the plain supervised model. The supervised model uses
    ``seed`` for every candidate and the cluster model uses ``seed`` too.
    Ties go to the smaller k.
    """
    ks = sorted(set(int(k) for k in k_candidates))
    if not ks or ks[0] < 1:
        raise ConfigError("k candidates must be positive integers")
    selection = _selection_or_full(selection, train.d)
    cols = selection.columns
    train_sel, val_sel = train.x[:, cols], val.x[:, cols]
    tasks = [(k, train_sel, val_sel, train, val, unsup, sup_spec, seed) for k in ks]
    results = parallel_map(_pki_candidate, tasks, jobs)
    records = [(k, f) for k, f, _, _ in results]
    best_k, best_f = _argmax_first(records)
    _, _, stack, model = results[ks.index(best_k)]
    pki = PkiModel(
        selection,
        stack,
        model,
        train.class_index,
        train.d,
        {"pipeline": "pki", "cluster": unsup.to_dict(), "n_clusters": best_k, "supervised": sup_spec.to_dict(), "seed": seed},
    )
    return pki, SweepTrace("n_clusters", records, best_k, best_f)


def _stack_candidate(args):
    s, train_sel, val_sel, train, val, stack, sup_spec, seed = args
    try:
        model, score = _eval_stack(train_sel, val_sel, train, val, stack.head(s), sup_spec, seed)
    except Exception as exc:
        raise SweepError("progressive stack sweep", s, exc) from exc
    return s, score, model


def member_cluster_counts(prelim: SweepTrace, n_members: int, diversity: str = "seed") -> list[int]:
    """Cluster count per stack member.

    ``"seed"``: every member uses the best k >= 2 of the preliminary sweep.
    ``"k"``: members cycle through the k >= 2 candidates ranked by their
    preliminary score.
    """
    ranked = sorted((r for r in prelim.records if r[0] >= 2), key=lambda r: (-r[1], r[0]))
    if not ranked:
        raise ConfigError("preliminary sweep has no candidate with k >= 2")
    if diversity == "seed":
        return [ranked[0][0]] * n_members
    if diversity == "k":
        return [ranked[j % len(ranked)][0] for j in range(n_members)]
    raise ConfigError(f"unknown stack diversity {diversity!r}")


def progressive_pki_train(
    train: Dataset,
    val: Dataset,
    unsup: ClusterSpec,
    sup_spec: SupervisedSpec,
    selection: SelectionResult | None = None,
    max_stack: int = 20,
    seed: int = 0,
    n_clusters: int | None = None,
    k_candidates=DEFAULT_K_CANDIDATES,
    diversity: str = "seed",
    member_seeds=None,
    prelim: SweepTrace | None = None,
    jobs: int = 1,
) -> tuple[PkiModel, SweepTrace]:
    """Sweep the stack size S = 1..max_stack; member j is seeded ``seed + j``.

    Without ``n_clusters`` the cluster count comes from a preliminary
    :func:`pki_train` sweep (best k >= 2); pass ``prelim`` to reuse one
    already run. ``member_seeds`` overrides the per-member seeds. Ties go
    to the smaller S.
    """
    if max_stack < 1:
        raise ConfigError("max_stack must be >= 1")
    selection = _selection_or_full(selection, train.d)
    cols = selection.columns
    train_sel, val_sel = train.x[:, cols], val.x[:, cols]

    if n_clusters is None and prelim is not None:
        ks = member_cluster_counts(prelim, max_stack, diversity)
    elif n_clusters is None:
        cands = sorted(set(int(k) for k in k_candidates) | {1})
        _, prelim = pki_train(train, val, unsup, sup_spec, selection, cands, seed, jobs)
        ks = member_cluster_counts(prelim, max_stack, diversity)
    else:
        if n_clusters < 2:
            raise ConfigError("a stack member needs at least 2 clusters")
        ks = [int(n_clusters)] * max_stack
    seeds = list(member_seeds) if member_seeds is not None else [seed + j for j in range(max_stack)]
    try:
        full = fit_stack(train_sel, unsup, ks, seeds)
    except Exception as exc:
        raise SweepError("progressive stack fit", max_stack, exc) from exc

    tasks = [(s, train_sel, val_sel, train, val, full, sup_spec, seed) for s in range(1, max_stack + 1)]
    results = parallel_map(_stack_candidate, tasks, jobs)
    records = [(s, f) for s, f, _ in results]
    best_s, best_f = _argmax_first(records)
    meta = {
        "pipeline": "progressive_pki",
        "cluster": unsup.to_dict(),
        "member_cluster_counts": ks[:best_s],
        "supervised": sup_spec.to_dict(),
        "seed": seed,
        "diversity": diversity,
    }
    if prelim is not None:
        meta["preliminary_trace"] = prelim.to_dict()
    model = PkiModel(selection, full.head(best_s), results[best_s - 1][2], train.class_index, train.d, meta)
    return model, SweepTrace("stack_size", records, best_s, best_f)
