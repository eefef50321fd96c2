"""Experiment ladder: Baseline 1 -> feature-selection Baseline 2 -> PKI ->
Progressive PKI -> grid search, plus report emission.

All model and hyperparameter choices are made on the validation split;
the test set is scored once per reported number. Seeds fan out from the
master seed ``s``: the split uses ``s``, a model on the top-k features
uses ``s + k`` (so Baseline 1 on all d features uses ``s + d``), and the
PKI stages reuse the seed of their Baseline-2 model, with stack member j
seeded ``s + k + j``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterSpec
from .config import ExperimentConfig
from .dataset import Dataset, SplitSpec, encode_labels, stratified_split
from .errors import DataError
from .featsel import SelectionResult, canonical_method, full_selection, sweep_feature_count
from .flows import (
    IdentifierDropList,
    SanitizePolicy,
    drop_identifier_columns,
    parse_flow_csv,
    sanitize_values,
)
from .metrics import (
    ConfusionMatrix,
    evaluate,
    macro_f1_score,
    render_confusion,
    render_f1_table,
    summarize,
)
from .pki import PkiModel, PriorKnowledgeStack, SweepTrace, augment_with_prior_knowledge, fit_stack, pki_train, progressive_pki_train
from .supervised import SupervisedSpec, fit_supervised
from .synthetic import SyntheticSpec, generate_synthetic
from .trees import BoostParams, gbt_fit

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
STAGES = ("baseline1", "baseline2", "pki", "progressive", "grid")


@dataclass
class LoadedData:
    train: Dataset
    test: Dataset
    feature_names: list[str]
    provenance: dict = field(default_factory=dict)


def _ingest(path, cfg: ExperimentConfig):
    drop = IdentifierDropList(tuple(cfg.data.drop_columns))
    policy = SanitizePolicy(cfg.data.infinity_action, cfg.data.nan_action)
    raw = parse_flow_csv(path, has_header=True)
    raw, labels = drop_identifier_columns(raw, drop, cfg.data.label_column)
    table, prov = sanitize_values(raw, labels, policy)
    return table, prov


def load_data(cfg: ExperimentConfig) -> LoadedData:
    if cfg.data.train_csv is not None:
        train_t, train_p = _ingest(cfg.data.train_csv, cfg)
        test_t, test_p = _ingest(cfg.data.test_csv, cfg)
        if train_t.feature_names != test_t.feature_names:
            raise DataError("train and test CSVs have different feature columns")
        y_tr, ci, counts_tr = encode_labels(train_t.labels, cfg.data.classes)
        y_te, _, counts_te = encode_labels(test_t.labels, ci.names)
        prov = {
            "source": "csv",
            "train_csv": str(cfg.data.train_csv),
            "test_csv": str(cfg.data.test_csv),
            "sanitize_policy": SanitizePolicy(cfg.data.infinity_action, cfg.data.nan_action).to_dict(),
            "dropped_identifier_columns": list(cfg.data.drop_columns),
            "sanitize": {"train": train_p, "test": test_p},
            "class_counts": {"train": counts_tr, "test": counts_te},
        }
        return LoadedData(Dataset(train_t.values, y_tr, ci), Dataset(test_t.values, y_te, ci), train_t.feature_names, prov)

    raw = dict(cfg.synthetic or {})
    raw.setdefault("seed", cfg.seed)
    spec = SyntheticSpec.from_dict(raw)
    train, test = generate_synthetic(spec)
    names = spec.class_names
    prov = {
        "source": "synthetic",
        "synthetic": spec.to_dict(),
        "class_counts": {
            "train": {n: int(c) for n, c in zip(names, train.class_counts())},
            "test": {n: int(c) for n, c in zip(names, test.class_counts())},
        },
    }
    return LoadedData(train, test, spec.feature_names(), prov)


class Experiment:
    """Runs stages on demand; later stages pull in what they depend on."""

    def __init__(self, cfg: ExperimentConfig, data: LoadedData | None = None):
        self.cfg = cfg
        self.data = data or load_data(cfg)
        self.fit, self.val = stratified_split(self.data.train, SplitSpec(cfg.validation_fraction, cfg.seed))
        if self.val.n == 0:
            log.warning("validation split is empty; every sweep will score 0")
        self.stages: dict[str, dict] = {}
        self.timings: dict[str, float] = {}
        self.models: dict[str, PkiModel] = {}
        self.traces: dict[str, str] = {}
        self._selections: dict[str, SelectionResult] = {}
        self._sel_rows: dict[str, dict[str, SelectionResult]] = {}
        self._pki_traces: dict[tuple[str, str], SweepTrace] = {}
        self._progressive: dict[tuple[str, str], PkiModel] = {}

    # ------------------------------------------------------------------ helpers

    @property
    def class_index(self):
        return self.data.train.class_index

    def spec_for(self, learner: str) -> SupervisedSpec:
        return SupervisedSpec(learner, dict(self.cfg.learner_params.get(learner, {})))

    def cluster_spec(self, method: str, covariance_type: str | None = None) -> ClusterSpec:
        c = self.cfg.cluster
        return ClusterSpec(method, covariance_type or c.covariance_type, c.max_iter, c.tol, c.reg)

    def _test_report(self, model: PkiModel) -> dict:
        pred = model.predict(self.data.test.x)
        return evaluate(self.data.test.y, pred, self.class_index).to_dict()

    def _wrap(self, selection, stack, supervised, meta) -> PkiModel:
        meta = {**meta, "feature_names": list(self.data.feature_names)}
        if self.data.provenance.get("source") == "csv":
            meta["ingest"] = {
                "label_column": self.cfg.data.label_column,
                "drop_columns": list(self.cfg.data.drop_columns),
                "sanitize_policy": self.data.provenance["sanitize_policy"],
            }
        return PkiModel(selection, stack, supervised, self.class_index, self.data.train.d, meta)

    def _timed(self, name, fn):
        if name in self.stages:
            return self.stages[name]
        t0 = time.perf_counter()
        self.stages[name] = fn()
        self.timings[name] = round(time.perf_counter() - t0, 3)
        return self.stages[name]

    # ------------------------------------------------------------------ stages

    def run_baseline1(self) -> dict:
        return self._timed("baseline1", self._baseline1)

    def _baseline1(self) -> dict:
        d = self.data.train.d
        seed = self.cfg.seed + d
        out = {}
        for learner in self.cfg.learners:
            spec = self.spec_for(learner)
            sup = fit_supervised(spec, self.fit.x, self.fit.y, self.fit.n_classes, seed, self.cfg.jobs)
            val_f1 = macro_f1_score(self.val.y, sup.predict(self.val.x), self.fit.n_classes)
            model = self._wrap(full_selection(d), PriorKnowledgeStack([], None, []), sup,
                               {"pipeline": "baseline1", "supervised": spec.to_dict(), "seed": seed})
            self.models[f"baseline1_{learner}"] = model
            out[learner] = {"seed": seed, "val_macro_f1": val_f1, "test": self._test_report(model)}
        return out

    def selection_for(self, learner: str) -> SelectionResult:
        if learner not in self._selections:
            self._selections[learner] = self._run_selection(learner)
        return self._selections[learner]

    def _run_selection(self, learner: str) -> SelectionResult:
        spec = self.spec_for(learner)
        rows = {}
        best = None
        for method in self.cfg.selection_methods:
            sel = sweep_feature_count(
                self.fit, self.val, method, spec, base_seed=self.cfg.seed, ks=self.cfg.feature_ks,
                bins=self.cfg.mi_bins, jobs=self.cfg.jobs,
            )
            rows[method] = sel
            self.traces[f"featsel_{learner}_{method}"] = sel.trace_csv()
            if best is None or sel.val_macro_f1 > best.val_macro_f1:
                best = sel
        self._sel_rows[learner] = rows
        return best

    def run_baseline2(self) -> dict:
        return self._timed("baseline2", self._baseline2)

    def _baseline2(self) -> dict:
        out = {}
        for learner in self.cfg.pki_learners:
            best = self.selection_for(learner)
            spec = self.spec_for(learner)
            seed = self.cfg.seed + best.k
            cols = best.columns
            sup = fit_supervised(spec, self.fit.x[:, cols], self.fit.y, self.fit.n_classes, seed, self.cfg.jobs)
            model = self._wrap(best, PriorKnowledgeStack([], None, []), sup,
                               {"pipeline": "baseline2", "supervised": spec.to_dict(), "seed": seed})
            self.models[f"baseline2_{learner}"] = model
            out[learner] = {
                "best_method": best.method,
                "n_features": best.k,
                "selected_features": [self.data.feature_names[i] for i in best.indices],
                "val_macro_f1": best.val_macro_f1,
                "seed": seed,
                "methods": {
                    m: {"k": r.k, "val_macro_f1": r.val_macro_f1, "trace": r.to_dict()["trace"]}
                    for m, r in self._sel_rows[learner].items()
                },
                "test": self._test_report(model),
            }
        return out

    def pki_trace(self, learner: str, unsup: str) -> SweepTrace:
        if (learner, unsup) not in self._pki_traces:
            self._fit_pki(learner, unsup)
        return self._pki_traces[(learner, unsup)]

    def _fit_pki(self, learner: str, unsup: str) -> dict:
        sel = self.selection_for(learner)
        seed = self.cfg.seed + sel.k
        model, trace = pki_train(
            self.fit, self.val, self.cluster_spec(unsup), self.spec_for(learner), sel,
            self.cfg.k_candidates, seed, self.cfg.jobs,
        )
        model = self._wrap(model.selection, model.stack, model.supervised, model.meta)
        self._pki_traces[(learner, unsup)] = trace
        self.models[f"pki_{learner}_{unsup}"] = model
        self.traces[f"pki_{learner}_{unsup}"] = trace.to_csv()
        return {
            "selection_method": sel.method,
            "n_features": sel.k,
            "optimal_clusters": trace.best,
            "val_macro_f1": trace.best_score,
            "trace": trace.to_dict()["records"],
            "test": self._test_report(model),
        }

    def run_pki(self) -> dict:
        self.run_baseline2()
        return self._timed("pki", lambda: {
            f"{learner}/{unsup}": self._fit_pki(learner, unsup)
            for learner in self.cfg.pki_learners
            for unsup in self.cfg.unsupervised
        })

    def progressive_model(self, learner: str, unsup: str) -> PkiModel:
        if (learner, unsup) not in self._progressive:
            self._fit_progressive(learner, unsup)
        return self._progressive[(learner, unsup)]

    def _fit_progressive(self, learner: str, unsup: str) -> dict:
        sel = self.selection_for(learner)
        seed = self.cfg.seed + sel.k
        prelim = self.pki_trace(learner, unsup)
        model, trace = progressive_pki_train(
            self.fit, self.val, self.cluster_spec(unsup), self.spec_for(learner), sel,
            max_stack=self.cfg.max_stack, seed=seed, diversity=self.cfg.stack_diversity,
            prelim=prelim, jobs=self.cfg.jobs,
        )
        model = self._wrap(model.selection, model.stack, model.supervised, model.meta)
        self._progressive[(learner, unsup)] = model
        self.models[f"progressive_{learner}_{unsup}"] = model
        self.traces[f"progressive_{learner}_{unsup}"] = trace.to_csv()
        return {
            "selection_method": sel.method,
            "n_features": sel.k,
            "stack_size": trace.best,
            "member_cluster_counts": model.meta["member_cluster_counts"],
            "val_macro_f1": trace.best_score,
            "trace": trace.to_dict()["records"],
            "test": self._test_report(model),
        }

    def run_progressive(self) -> dict:
        self.run_pki()
        return self._timed("progressive", lambda: {
            f"{learner}/{unsup}": self._fit_progressive(learner, unsup)
            for learner in self.cfg.pki_learners
            for unsup in self.cfg.unsupervised
        })

    def run_grid(self) -> dict:
        self.run_progressive()
        return self._timed("grid", self._grid)

    def _grid(self) -> dict:
        g = self.cfg.grid
        learner, unsup = g.learner, g.unsupervised
        base = self.progressive_model(learner, unsup)
        sel = base.selection
        seed = int(base.meta["seed"])
        ks = list(base.meta["member_cluster_counts"])
        seeds = [seed + j for j in range(len(ks))]
        cols = sel.columns
        fit_sel, val_sel = self.fit.x[:, cols], self.val.x[:, cols]
        boost = dict(self.cfg.learner_params.get("gbt", {}))
        max_est = max(g.n_estimators)
        m = self.fit.n_classes

        scores = {}
        for cov in g.covariance_types:
            stack = fit_stack(fit_sel, self.cluster_spec(unsup, cov), ks, seeds)
            xa_fit = augment_with_prior_knowledge(fit_sel, stack)
            xa_val = augment_with_prior_knowledge(val_sel, stack)
            for lr in g.learning_rates:
                params = BoostParams(**{**boost, "n_estimators": max_est, "learning_rate": lr})
                model = gbt_fit(None, params, seed, x=xa_fit, y=self.fit.y, n_classes=m)
                # the first n rounds of a long run are exactly the n-round model
                for n_est, f in model.staged_decision(xa_val, g.n_estimators):
                    scores[(cov, n_est, lr)] = macro_f1_score(self.val.y, np.argmax(f, axis=1), m)

        records = []
        best = None
        for cov in g.covariance_types:
            for n_est in g.n_estimators:
                for lr in g.learning_rates:
                    f1 = scores[(cov, n_est, lr)]
                    records.append({"covariance_type": cov, "n_estimators": n_est, "learning_rate": lr, "val_macro_f1": f1})
                    if best is None or f1 > best["val_macro_f1"]:
                        best = records[-1]
        self.traces["grid"] = "covariance_type,n_estimators,learning_rate,macro_f1\n" + "".join(
            f"{r['covariance_type']},{r['n_estimators']},{r['learning_rate']},{r['val_macro_f1']:.6f}\n" for r in records
        )

        # refit on the whole training set, score the test set once
        full = self.data.train
        full_sel = full.x[:, cols]
        stack = fit_stack(full_sel, self.cluster_spec(unsup, best["covariance_type"]), ks, seeds)
        params = BoostParams(**{**boost, "n_estimators": best["n_estimators"], "learning_rate": best["learning_rate"]})
        sup = gbt_fit(None, params, seed, x=augment_with_prior_knowledge(full_sel, stack), y=full.y, n_classes=m)
        meta = {
            "pipeline": "grid",
            "cluster": self.cluster_spec(unsup, best["covariance_type"]).to_dict(),
            "member_cluster_counts": ks,
            "supervised": SupervisedSpec("gbt", {**boost, "n_estimators": best["n_estimators"],
                                                 "learning_rate": best["learning_rate"]}).to_dict(),
            "seed": seed,
        }
        model = self._wrap(sel, stack, sup, meta)
        self.models["grid_best"] = model
        return {
            "learner": learner,
            "unsupervised": unsup,
            "grid_size": g.size,
            "stack_size": len(ks),
            "best": dict(best),
            "records": records,
            "test": self._test_report(model),
        }

    # ------------------------------------------------------------------ report

    def run(self, stages=STAGES) -> dict:
        dispatch = {
            "baseline1": self.run_baseline1,
            "baseline2": self.run_baseline2,
            "pki": self.run_pki,
            "progressive": self.run_progressive,
            "grid": self.run_grid,
        }
        for s in stages:
            dispatch[s]()
        return self.report()

    def report(self) -> dict:
        return {
            "format": "pki-run-report",
            "version": REPORT_FORMAT_VERSION,
            "provenance": {
                "config_sha256": self.cfg.digest(),
                "config": self.cfg.model_dump(mode="json"),
                "seed": self.cfg.seed,
                "classes": self.class_index.to_list(),
                "n_features": self.data.train.d,
                "feature_names": list(self.data.feature_names),
                "split": {"fit_rows": self.fit.n, "validation_rows": self.val.n, "test_rows": self.data.test.n},
                "data": self.data.provenance,
            },
            "stages": {k: self.stages[k] for k in STAGES if k in self.stages},
            "summary": comparison(self.stages),
            "timings": dict(self.timings),
        }


def comparison(stages: dict) -> dict:
    """Per-learner validation/test macro-F1 across the ladder (bar-chart data)."""
    out: dict[str, dict] = {}

    def put(learner, stage, entry):
        out.setdefault(learner, {})[stage] = {
            "val_macro_f1": entry["val_macro_f1"],
            "test_macro_f1": entry["test"]["macro_f1"],
        }

    for learner, e in stages.get("baseline1", {}).items():
        put(learner, "baseline1", e)
    for learner, e in stages.get("baseline2", {}).items():
        put(learner, "baseline2", e)
    for stage in ("pki", "progressive"):
        for key, e in stages.get(stage, {}).items():
            learner = key.split("/")[0]
            cur = out.get(learner, {}).get(stage)
            if cur is None or e["val_macro_f1"] > cur["val_macro_f1"]:
                put(learner, stage, e)
                out[learner][stage]["unsupervised"] = key.split("/")[1]
    if "grid" in stages:
        g = stages["grid"]
        out.setdefault(g["learner"], {})["grid"] = {
            "val_macro_f1": g["best"]["val_macro_f1"],
            "test_macro_f1": g["test"]["macro_f1"],
        }
    return out


# ---------------------------------------------------------------------- emit


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _summary(entry: dict):
    return summarize(ConfusionMatrix.from_dict(entry["confusion_matrix"]))


_LEARNER_ORDER = {"dt": 0, "rf": 1, "gbt": 2}
_UNSUP_ORDER = {"kmeans": 0, "gmm": 1}


def _ordered(entries: dict) -> list:
    """Entries keyed ``learner`` or ``learner/unsup`` in a fixed display order."""

    def key(k):
        learner, _, unsup = k.partition("/")
        return _LEARNER_ORDER.get(learner, 9), _UNSUP_ORDER.get(unsup, 9), k

    return [(k, entries[k]) for k in sorted(entries, key=key)]


def render_text(report: dict) -> str:
    st = report.get("stages", {})
    out = [f"config sha256 {report['provenance']['config_sha256']}  seed {report['provenance']['seed']}"]
    names = {"dt": "DT", "rf": "RF", "gbt": "GBT"}

    if "baseline1" in st:
        out += ["", "Baseline 1: per-class test F1"]
        out.append(render_f1_table({names[k]: _summary(v["test"]) for k, v in _ordered(st["baseline1"])}))

    if "baseline2" in st:
        out += ["", "Baseline 2: feature selection (validation macro-F1)"]
        out.append(f"{'Model':<6}{'Selection':<13}{'Features':>9}{'Val F1':>9}")
        for learner, e in _ordered(st["baseline2"]):
            for method, r in e["methods"].items():
                mark = " *" if method == e["best_method"] else ""
                out.append(f"{names[learner]:<6}{method:<13}{r['k']:>9}{r['val_macro_f1']:>9.4f}{mark}")

    if "pki" in st:
        out += ["", "PKI (validation sweep over cluster count, k=1 = no prior knowledge)"]
        out.append(f"{'Model':<6}{'Selection':<13}{'Features':>9}{'Unsup':>8}{'Clusters':>10}{'Val F1':>9}{'Test F1':>9}")
        for key, e in _ordered(st["pki"]):
            learner, unsup = key.split("/")
            out.append(
                f"{names[learner]:<6}{e['selection_method']:<13}{e['n_features']:>9}{unsup:>8}"
                f"{e['optimal_clusters']:>10}{e['val_macro_f1']:>9.4f}{e['test']['macro_f1']:>9.4f}"
            )

    if "progressive" in st:
        out += ["", "Progressive PKI (validation sweep over stack size)"]
        out.append(f"{'Model':<6}{'Selection':<13}{'Features':>9}{'Unsup':>8}{'Columns':>9}{'Val F1':>9}{'Test F1':>9}")
        for key, e in _ordered(st["progressive"]):
            learner, unsup = key.split("/")
            out.append(
                f"{names[learner]:<6}{e['selection_method']:<13}{e['n_features']:>9}{unsup:>8}"
                f"{e['stack_size']:>9}{e['val_macro_f1']:>9.4f}{e['test']['macro_f1']:>9.4f}"
            )

    if "grid" in st:
        g = st["grid"]
        b = g["best"]
        out += [
            "",
            f"Grid search ({g['unsupervised']} + {g['learner']}, {g['grid_size']} combinations)",
            f"best: covariance={b['covariance_type']} n_estimators={b['n_estimators']} "
            f"learning_rate={b['learning_rate']}  val F1 {b['val_macro_f1']:.4f}  test F1 {g['test']['macro_f1']:.4f}",
            "",
            "Confusion matrix (test, grid-tuned model)",
            render_confusion(ConfusionMatrix.from_dict(g["test"]["confusion_matrix"])),
        ]

    for stage in ("pki", "progressive"):
        if stage in st and st[stage]:
            key = max(st[stage], key=lambda k: st[stage][k]["val_macro_f1"])
            out += ["", f"Confusion matrix (test, best {stage}: {key})"]
            out.append(render_confusion(ConfusionMatrix.from_dict(st[stage][key]["test"]["confusion_matrix"])))

    if report.get("summary"):
        out += ["", "Macro-F1 comparison (validation / test)"]
        for learner, row in _ordered(report["summary"]):
            cells = [
                f"{stage} {row[stage]['val_macro_f1']:.4f}/{row[stage]['test_macro_f1']:.4f}"
                for stage in STAGES
                if stage in row
            ]
            out.append(f"{names.get(learner, learner):<5}" + "  ".join(cells))
    return "\n".join(out) + "\n"


def emit_report(report: dict, out_dir, formats=("json", "text", "csv"), traces: dict | None = None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(canonical_json(report), encoding="utf-8")
        written.append(p)
    if "text" in formats:
        p = out / "report.txt"
        p.write_text(render_text(report), encoding="utf-8")
        written.append(p)
    if "csv" in formats:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for name, text in sorted((traces or traces_from_report(report)).items()):
            p = tdir / f"{name}.csv"
            p.write_text(text, encoding="utf-8")
            written.append(p)
    return written


def traces_from_report(report: dict) -> dict[str, str]:
    st = report.get("stages", {})
    out = {}
    for learner, e in st.get("baseline2", {}).items():
        for method, r in e["methods"].items():
            out[f"featsel_{learner}_{canonical_method(method)}"] = "k,macro_f1\n" + "".join(
                f"{k},{f:.6f}\n" for k, f in r["trace"]
            )
    for stage, param in (("pki", "n_clusters"), ("progressive", "stack_size")):
        for key, e in st.get(stage, {}).items():
            out[f"{stage}_{key.replace('/', '_')}"] = f"{param},macro_f1\n" + "".join(f"{c},{f:.6f}\n" for c, f in e["trace"])
    if "grid" in st:
        out["grid"] = "covariance_type,n_estimators,learning_rate,macro_f1\n" + "".join(
            f"{r['covariance_type']},{r['n_estimators']},{r['learning_rate']},{r['val_macro_f1']:.6f}\n"
            for r in st["grid"]["records"]
        )
    return out


def save_models(models: dict[str, PkiModel], out_dir) -> list[Path]:
    mdir = Path(out_dir) / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, model in sorted(models.items()):
        p = mdir / f"{name}.json"
        model.save(p)
        paths.append(p)
    return paths
