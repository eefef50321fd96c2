"""Uniform construction and serialization for the three supervised learners."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

from .errors import ConfigError
from .trees import (
    BoostParams,
    DecisionTree,
    ForestParams,
    GradientBoostedModel,
    RandomForest,
    TreeParams,
    cart_fit,
    gbt_fit,
    rf_fit,
)

KINDS = ("dt", "rf", "gbt")
_PARAMS = {"dt": TreeParams, "rf": ForestParams, "gbt": BoostParams}


@dataclass(frozen=True)
class SupervisedSpec:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown supervised learner {self.kind!r}; expected one of {KINDS}")
        try:
            _PARAMS[self.kind](**self.params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {self.kind}: {exc}") from None

    def build_params(self):
        return _PARAMS[self.kind](**self.params)

    def with_params(self, **overrides) -> "SupervisedSpec":
        return SupervisedSpec(self.kind, {**self.params, **overrides})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": asdict(self.build_params())}


def fit_supervised(spec: SupervisedSpec, x, y, n_classes: int, seed: int, jobs: int = 1):
    params = spec.build_params()
    if spec.kind == "dt":
        return cart_fit(None, params, seed, x=x, y=y, n_classes=n_classes)
    if spec.kind == "rf":
        return rf_fit(None, params, seed, jobs, x=x, y=y, n_classes=n_classes)
    return gbt_fit(None, params, seed, x=x, y=y, n_classes=n_classes)


_LOADERS = {
    "decision_tree": DecisionTree.from_dict,
    "random_forest": RandomForest.from_dict,
    "gradient_boosting": GradientBoostedModel.from_dict,
}


def supervised_from_dict(d: dict):
    try:
        return _LOADERS[d["type"]](d)
    except KeyError:
        raise ConfigError(f"unknown supervised model type {d.get('type')!r}") from None
