"""Command-line entry point: ``pki-apt <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .dataset import encode_labels
from .errors import ConfigError, DataError, PkiError, SweepError
from .flows import (
    IdentifierDropList,
    SanitizePolicy,
    drop_identifier_columns,
    parse_flow_csv,
    sanitize_values,
    strip_identifiers,
    write_feature_csv,
    FeatureTable,
)
from .metrics import evaluate, render_confusion
from .pki import PkiModel
from .runner import Experiment, canonical_json, emit_report, render_text, save_models
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("pki_apt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

STAGE_COMMANDS = {
    "baseline": ("baseline1",),
    "featsel": ("baseline2",),
    "pki": ("baseline2", "pki"),
    "progressive": ("baseline2", "pki", "progressive"),
    "grid": ("baseline2", "pki", "progressive", "grid"),
    "report": ("baseline1", "baseline2", "pki", "progressive", "grid"),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory or file")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pki-apt", description="Prior-knowledge-input APT flow classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="clean a flow CSV into a feature CSV")
    p.add_argument("csv", type=Path)
    _common(p)

    for name, text in (
        ("baseline", "supervised models on all features"),
        ("featsel", "feature-count sweeps per selection method"),
        ("pki", "single prior-knowledge column, cluster-count sweep"),
        ("progressive", "stacked prior-knowledge columns, stack-size sweep"),
        ("grid", "grid search over covariance, rounds and learning rate"),
    ):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("report", help="run the full ladder, or re-render a saved report")
    p.add_argument("--from", dest="from_json", type=Path, help="existing report.json to re-render")
    _common(p)

    p = sub.add_parser("synth", help="write a synthetic train/test pair as CSV")
    _common(p)

    p = sub.add_parser("score", help="predict flows with a saved model")
    p.add_argument("model", type=Path)
    p.add_argument("flows", type=Path)
    _common(p)
    return parser


def _config(args):
    return load_config(args.config, seed=args.seed, jobs=args.jobs)


def _out_dir(args, default: str) -> Path:
    return args.out if args.out is not None else Path(default)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    raw = parse_flow_csv(args.csv)
    raw, labels = drop_identifier_columns(raw, IdentifierDropList(tuple(cfg.data.drop_columns)), cfg.data.label_column)
    table, prov = sanitize_values(raw, labels, SanitizePolicy(cfg.data.infinity_action, cfg.data.nan_action))
    dest = args.out if args.out is not None else args.csv.with_suffix(".features.csv")
    write_feature_csv(table, dest, cfg.data.label_column)
    touched = {c: v for c, v in prov.items() if v["replaced"] or v["dropped"]}
    print(f"{table.n_rows} rows x {len(table.feature_names)} features -> {dest}")
    if touched:
        print("non-finite cells: " + json.dumps(touched, sort_keys=True))
    return EXIT_OK


def cmd_stages(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "runs/latest")
    if args.command == "report" and args.from_json is not None:
        try:
            report = json.loads(args.from_json.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {args.from_json}: {exc}") from exc
        sys.stdout.write(render_text(report))
        if args.out is not None:
            emit_report(report, out, formats=("text", "csv"))
        return EXIT_OK

    exp = Experiment(cfg)
    report = exp.run(STAGE_COMMANDS[args.command])
    emit_report(report, out, traces=exp.traces)
    save_models(exp.models, out)
    sys.stdout.write(render_text(report))
    print(f"\nwrote {out}/report.json")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    raw = dict(cfg.synthetic or {})
    raw.setdefault("seed", cfg.seed)
    spec = SyntheticSpec.from_dict(raw)
    train, test = generate_synthetic(spec)
    out = _out_dir(args, "synthetic")
    out.mkdir(parents=True, exist_ok=True)
    names = spec.feature_names()
    for split, ds in (("train", train), ("test", test)):
        labels = [spec.class_names[i] for i in ds.y]
        write_feature_csv(FeatureTable(names, np.asarray(ds.x), labels), out / f"{split}.csv", cfg.data.label_column)
    (out / "spec.json").write_text(canonical_json(spec.to_dict()), encoding="utf-8")
    print(f"train {train.n} rows, test {test.n} rows, {train.d} features -> {out}")
    return EXIT_OK


def _flows_matrix(path: Path, model: PkiModel) -> tuple[np.ndarray, list[str] | None]:
    ingest = model.meta.get("ingest", {})
    label_column = ingest.get("label_column", "Label")
    drop = IdentifierDropList(tuple(ingest.get("drop_columns", IdentifierDropList().patterns)))
    policy = SanitizePolicy.from_dict(ingest["sanitize_policy"]) if "sanitize_policy" in ingest else SanitizePolicy()
    raw = parse_flow_csv(path)
    if raw.column_index(label_column) is not None:
        raw, labels = drop_identifier_columns(raw, drop, label_column)
    else:
        raw, labels = strip_identifiers(raw, drop), None
    table, _ = sanitize_values(raw, labels if labels is not None else [""] * raw.row_count, policy)
    names = model.meta.get("feature_names")
    if names is None:
        x = table.values
    else:
        lookup = {n: j for j, n in enumerate(table.feature_names)}
        missing = [n for n in names if n not in lookup]
        if missing:
            raise DataError(f"flows are missing model features: {missing[:5]}")
        x = table.values[:, [lookup[n] for n in names]]
    return x, (table.labels if labels is not None else None)


def cmd_score(args) -> int:
    try:
        model = PkiModel.load(args.model)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load model {args.model}: {exc}") from exc
    x, labels = _flows_matrix(args.flows, model)
    pred = model.predict(x)
    names = model.class_index.names
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "predicted"])
        for i, p in enumerate(pred):
            w.writerow([i, names[p]])
    finally:
        if args.out:
            fh.close()
    if labels is not None:
        y, _, _ = encode_labels(labels, names)
        rep = evaluate(y, pred, model.class_index)
        print(f"macro-F1 {rep.macro_f1:.4f}  weighted-F1 {rep.weighted_f1:.4f}", file=sys.stderr)
        print(render_confusion(rep.confusion), file=sys.stderr)
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "score": cmd_score}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, SweepError) and exc.cause is not None:
        return _exit_code(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS.get(args.command, cmd_stages)(args)
    except PkiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
