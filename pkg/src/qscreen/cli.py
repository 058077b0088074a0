"""Command-line surface.

Subcommands: extract-check, train-embed, eval-kernel, run, battery,
report. Exit codes: 0 success, 1 partial results, 2 configuration error,
3 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import featuremap, kernels, pipelines, training
from .encoder import EncoderNetwork, save_weights
from .pipelines import (
    ClassRatio,
    Condition,
    ConfigError,
    DataError,
    load_config,
    load_features,
    load_report,
    render_battery_table,
    render_report_text,
    report_emit,
    run_condition,
    run_covid_battery,
    run_litpcba_battery,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _cmd_extract_check(args) -> int:
    samples = load_features(args.csv)
    labels = np.array([s.label for s in samples])
    n_pos = int(np.sum(labels == 1))
    print(f"{args.csv}: {len(samples)} rows, {n_pos} activators / {len(samples) - n_pos} inactivators")
    print(f"feature columns: {pipelines.N_FEATURES} (canonical order verified)")
    return EXIT_OK


def _cmd_train_embed(args) -> int:
    config = load_config(args.config)
    splits = pipelines.data_splits(config)
    train, val, _ = splits
    X_train, y_train = pipelines.split_xy(train)
    X_val, y_val = pipelines.split_xy(val)
    scaler = pipelines.Standardizer.fit(X_train)
    Xs_train, Xs_val = scaler.transform(X_train), scaler.transform(X_val)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    is_align = config.condition is Condition.RBF_SINGLE_LAYER
    for seed in config.seeds:
        if is_align:
            dims = pipelines._encoder_dims(config, config.rbf_feature_dim)
            objective, spec = training.Objective.RBF_ALIGN, None
        else:
            spec = config.map_spec()
            dims = pipelines._encoder_dims(config, spec.input_dim)
            objective = training.Objective.NQE
        initial = EncoderNetwork.initialize(dims, seed=seed)
        result = training.train_embedding(
            objective, initial, spec, Xs_train, y_train, Xs_val, y_val,
            pipelines._train_config(config, "embed", seed),
        )
        weight_path = out_dir / f"encoder_seed{seed}.bin"
        save_weights(result.encoder, weight_path)
        history_path = out_dir / f"embed_history_seed{seed}.csv"
        training.write_history_csv(result.history, history_path)
        print(f"seed {seed}: best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
              f"weights -> {weight_path}")
    return EXIT_OK


def _cmd_eval_kernel(args) -> int:
    config = load_config(args.config)
    if config.condition not in pipelines._SVM_CONDITIONS:
        raise ConfigError("eval-kernel needs one of the svm_* conditions")
    train, _, _ = pipelines.data_splits(config)
    X_train, y_train = pipelines.split_xy(train)
    scaler = pipelines.Standardizer.fit(X_train)
    Xs = scaler.transform(X_train)
    from . import models as _models

    k = config.effective_pca_dims()
    if k is not None:
        proj = _models.pca_fit(Xs, k)
        Xs = _models.pca_transform(proj, Xs)
    cond = config.condition
    if cond is Condition.SVM_RBF:
        gram = kernels.rbf_gram(Xs, pipelines._svm_gamma_for_rbf(Xs))
    elif cond is Condition.SVM_LINEAR:
        gram = kernels.linear_gram(Xs)
    else:
        spec = config.map_spec()
        states = [featuremap.embed(spec, z) for z in Xs]
        if cond in (Condition.SVM_PQK_ZZ, Condition.SVM_PQK_XYZ):
            vs = np.stack([kernels.pauli_expectation_vector(s) for s in states])
            gamma = kernels.pqk_gamma(vs, d=Xs.shape[1], mode=config.pqk_variance)
            gram = kernels.pqk_gram(states, gamma)
        else:
            gram = kernels.fidelity_gram(states)
    kernels.save_gram(gram, args.out)
    print(f"{gram.kernel_kind.value} gram ({gram.size}x{gram.size}) -> {args.out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_condition(config, out_dir=config.out_dir)
    paths = report_emit(report, config.out_dir)
    print(render_report_text(report))
    print(f"report: {paths['json']}")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def _cmd_battery(args) -> int:
    config = load_config(args.config)
    if args.suite == "covid":
        reports = run_covid_battery(config, out_dir=config.out_dir)
    else:
        reports = run_litpcba_battery(config, out_dir=config.out_dir)
    for report in reports:
        report_emit(report, config.out_dir)
    table = render_battery_table(reports)
    table_path = Path(config.out_dir) / f"battery_{args.suite}.txt"
    pipelines._atomic_write(table_path, table)
    print(table)
    print(f"battery table: {table_path}")
    return EXIT_PARTIAL if any(r.partial for r in reports) else EXIT_OK


def _cmd_report(args) -> int:
    payload = load_report(args.report)
    report = pipelines.RunReport(
        condition=payload["condition"],
        config_fingerprint=payload["config_fingerprint"],
        config=payload["config"],
        partial=payload["partial"],
        seeds=payload["seeds"],
        per_seed=payload["per_seed"],
        aggregate=payload["aggregate"],
        notes=payload["notes"],
        artifacts=payload.get("artifacts", {}),
    )
    print(render_report_text(report), end="")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qscreen",
        description="Quantum-embedding experiments for desk-scale virtual screening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-check", help="validate a feature CSV")
    p.add_argument("csv")
    p.set_defaults(func=_cmd_extract_check)

    p = sub.add_parser("train-embed", help="train an embedding encoder per seed")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_train_embed)

    p = sub.add_parser("eval-kernel", help="build and cache a train-split Gram matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_kernel)

    p = sub.add_parser("run", help="run one experiment condition")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("battery", help="run a full comparison battery")
    p.add_argument("--config", required=True)
    p.add_argument("--suite", choices=("covid", "litpcba"), default="covid")
    p.set_defaults(func=_cmd_battery)

    p = sub.add_parser("report", help="render a machine-readable report")
    p.add_argument("report")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
