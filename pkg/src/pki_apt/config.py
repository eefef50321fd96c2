"""Experiment configuration (one JSON document)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .clustering import COVARIANCE_TYPES
from .errors import ConfigError
from .flows import DEFAULT_IDENTIFIER_COLUMNS, DEFAULT_LABEL_COLUMN, InfinityAction, NanAction

Learner = Literal["dt", "rf", "gbt"]
SelectionMethod = Literal["chi2", "anova", "mi"]
Unsupervised = Literal["kmeans", "gmm"]
CovarianceType = Literal["spherical", "diag", "full", "tied"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Strict):
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    label_column: str = DEFAULT_LABEL_COLUMN
    drop_columns: list[str] = Field(default_factory=lambda: list(DEFAULT_IDENTIFIER_COLUMNS))
    classes: Optional[list[str]] = None
    infinity_action: InfinityAction = InfinityAction.REPLACE_WITH_COLUMN_MAX_FINITE
    nan_action: NanAction = NanAction.REPLACE_WITH_ZERO


class ClusterConfig(_Strict):
    covariance_type: CovarianceType = "full"
    max_iter: int = Field(300, ge=1)
    tol: float = Field(1e-4, gt=0)
    reg: float = Field(1e-6, ge=0)


class GridConfig(_Strict):
    unsupervised: Unsupervised = "gmm"
    learner: Literal["gbt"] = "gbt"
    covariance_types: list[CovarianceType] = Field(default_factory=lambda: list(COVARIANCE_TYPES))
    n_estimators: list[int] = Field(default_factory=lambda: list(range(10, 201, 10)))
    learning_rates: list[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2, 0.3])

    @field_validator("covariance_types", "n_estimators", "learning_rates")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("grid axes must be non-empty")
        return v

    @field_validator("n_estimators")
    @classmethod
    def _positive(cls, v):
        if min(v) < 1:
            raise ValueError("n_estimators must be >= 1")
        return sorted(set(v))

    @field_validator("learning_rates")
    @classmethod
    def _rates(cls, v):
        if min(v) <= 0:
            raise ValueError("learning rates must be positive")
        return sorted(set(v))

    @property
    def size(self) -> int:
        return len(self.covariance_types) * len(self.n_estimators) * len(self.learning_rates)


class ExperimentConfig(_Strict):
    data: DataConfig = Field(default_factory=DataConfig)
    synthetic: Optional[dict[str, Any]] = None
    validation_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = 0
    jobs: int = Field(1, ge=1)

    learners: list[Learner] = Field(default_factory=lambda: ["dt", "rf", "gbt"])
    learner_params: dict[Learner, dict[str, Any]] = Field(default_factory=dict)
    selection_methods: list[SelectionMethod] = Field(default_factory=lambda: ["chi2", "anova", "mi"])
    feature_ks: Optional[list[int]] = None
    mi_bins: int = Field(10, ge=2)

    pki_learners: list[Literal["rf", "gbt"]] = Field(default_factory=lambda: ["rf", "gbt"])
    unsupervised: list[Unsupervised] = Field(default_factory=lambda: ["kmeans", "gmm"])
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    k_candidates: list[int] = Field(default_factory=lambda: [1, *range(2, 21)])
    max_stack: int = Field(20, ge=1)
    stack_diversity: Literal["seed", "k"] = "seed"

    grid: GridConfig = Field(default_factory=GridConfig)

    @field_validator("learners", "selection_methods", "pki_learners", "unsupervised", "k_candidates")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("must list at least one entry")
        return v

    @field_validator("k_candidates")
    @classmethod
    def _ks(cls, v):
        if min(v) < 1:
            raise ValueError("cluster counts must be >= 1")
        return sorted(set(v))

    @model_validator(mode="after")
    def _source(self):
        has_csv = self.data.train_csv is not None
        if has_csv and self.data.test_csv is None:
            raise ValueError("data.test_csv is required with data.train_csv")
        if has_csv and self.synthetic is not None:
            raise ValueError("give either data.train_csv/test_csv or synthetic, not both")
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a JSON config (or start from defaults) and apply top-level overrides."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()
