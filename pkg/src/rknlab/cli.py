"""Command-line front end: generate / train / eval / sweep / report.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric
divergence during training, 4 IO or artifact-format error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .errors import (ConfigError, Diverged, FingerprintMismatch,
                     FormatVersionMismatch, InvalidParameter, ParseError,
                     RknError, SpecMismatch)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _apply_thread_cap():
    cap = os.environ.get("RKN_THREADS")
    if cap:
        import torch
        torch.set_num_threads(max(1, int(cap)))


def _add_config_args(parser):
    parser.add_argument("--config", default=None,
                        help="YAML experiment config (defaults built in)")
    parser.add_argument("--override", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")


def _load_config(args):
    from .config import load_config
    return load_config(args.config, args.override)


def cmd_generate(args) -> int:
    from .statespace import generate_dataset, save_dataset
    cfg = _load_config(args)
    dataset = generate_dataset(cfg.dataset_config())
    digest = save_dataset(dataset, args.out)
    print(f"dataset written to {args.out}")
    print(f"fingerprint {digest}")
    return EXIT_OK


def _check_dataset_matches_config(dataset, cfg):
    import numpy as np
    expected = cfg.dataset_config()
    same = (np.array_equal(dataset.model.F, expected.model.F)
            and np.array_equal(dataset.model.H, expected.model.H)
            and np.array_equal(dataset.model.Q, expected.model.Q)
            and dataset.noise == expected.noise
            and np.array_equal(dataset.init_mean, expected.init_mean)
            and np.array_equal(dataset.init_cov, expected.init_cov)
            and dataset.master_seed == expected.master_seed
            and len(dataset.train) == expected.n_train
            and len(dataset.val) == expected.n_val
            and len(dataset.test) == expected.n_test)
    if not same:
        raise FingerprintMismatch(
            "dataset on disk was not generated from this configuration")


def cmd_train(args) -> int:
    from .statespace import load_dataset, verify_dataset
    from .training import (load_checkpoint, save_checkpoint, train,
                           write_history_csv)
    cfg = _load_config(args)
    digest = verify_dataset(args.dataset)
    dataset = load_dataset(args.dataset)
    _check_dataset_matches_config(dataset, cfg)
    training_config = cfg.training_config()

    adam = None
    start_epoch = 0
    history = []
    if args.resume:
        rkn, adam, header = load_checkpoint(args.resume)
        start_epoch = header["epoch"] + 1
        history = header["history"]
        print(f"resuming from epoch {start_epoch}")
    else:
        rkn = cfg.rkn_model()

    rkn, history = train(rkn, dataset, training_config,
                         log=lambda msg: print(msg, flush=True),
                         adam=adam, start_epoch=start_epoch,
                         initial_history=history)
    save_checkpoint(args.out, rkn, training_config,
                    epoch=history[-1]["epoch"] if history else 0,
                    history=history, dataset_fingerprint=digest, adam=adam)
    history_path = args.out + ".history.csv"
    write_history_csv(history, history_path)
    print(f"checkpoint written to {args.out}")
    print(f"history written to {history_path}")
    return EXIT_OK


def _resolve_estimator(name_or_path):
    from .kalman import BASELINE_NAMES
    if name_or_path in BASELINE_NAMES:
        return name_or_path
    from .training import load_checkpoint
    if not os.path.exists(name_or_path):
        raise OSError(f"checkpoint not found: {name_or_path}")
    rkn, _, _ = load_checkpoint(name_or_path)
    return rkn


def cmd_eval(args) -> int:
    from .pipeline import evaluate_estimator, write_evaluation_outputs
    from .statespace import load_dataset
    dataset = load_dataset(args.dataset)
    estimator = _resolve_estimator(args.estimator)
    report = evaluate_estimator(dataset, estimator, split=args.split)
    written = write_evaluation_outputs(report, args.out,
                                       plots=not args.no_plots)
    print(f"{report.method}: mse {report.mse_db:.2f} dB, "
          f"msmd {report.msmd:.3f}")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .evaluation import write_report_csv
    from .pipeline import evaluate_estimator
    from .statespace import generate_dataset
    from .training import TrainingConfig, save_checkpoint, train

    cfg = _load_config(args)
    try:
        nu_values = [float(v) for v in args.nu.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("--nu", f"unparseable list {args.nu!r}")
    if not nu_values:
        raise ConfigError("--nu", "at least one heterogeneity level required")

    os.makedirs(args.out, exist_ok=True)
    reports = []
    methods = ["okf", "sokf"] + (["rkn"] if args.train else [])
    datasets = {}
    for nu in nu_values:
        datasets[nu] = generate_dataset(cfg.dataset_config(nu_db=nu))
    for method in methods:
        for nu in nu_values:
            dataset = datasets[nu]
            if method == "rkn":
                rkn = cfg.rkn_model()
                rkn, history = train(rkn, dataset, cfg.training_config(),
                                     log=lambda msg: print(msg, flush=True))
                ckpt = os.path.join(args.out, f"rkn_nu{nu:g}.ckpt")
                save_checkpoint(ckpt, rkn, cfg.training_config(),
                                epoch=history[-1]["epoch"], history=history)
                print(f"wrote {ckpt}")
                estimator = rkn
            else:
                estimator = method
            report = evaluate_estimator(dataset, estimator)
            report.nu_db = nu
            reports.append(report)
            print(f"{method} @ {nu:g} dB: mse {report.mse_db:.2f} dB, "
                  f"msmd {report.msmd:.3f}", flush=True)

    path = os.path.join(args.out, "report.csv")
    write_report_csv(reports, path)
    print(f"wrote {path}")
    if not args.no_plots:
        from .plots import plot_sweep
        fig_path = os.path.join(args.out, "mse_vs_nu.svg")
        plot_sweep(reports, fig_path)
        print(f"wrote {fig_path}")
    return EXIT_OK


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    """Re-render figures and a combined table from CSVs in a directory."""
    import numpy as np

    from .evaluation import EvaluationReport
    from .plots import plot_consistency, plot_gain_trace, plot_sweep

    rows = []
    for name in sorted(os.listdir(args.dir)):
        path = os.path.join(args.dir, name)
        if name.startswith("report") and name.endswith(".csv"):
            rows.extend(_read_csv(path))
    if not rows:
        raise ParseError(f"no report CSVs found in {args.dir}")

    header = ["method", "nu_db", "mse_db", "msmd", "mse_pos", "mse_vel"]
    print("  ".join(f"{h:>10}" for h in header))
    for row in rows:
        print("  ".join(f"{row[h]:>10}" for h in header))

    reports = []
    for row in rows:
        reports.append(EvaluationReport(
            method=row["method"], nu_db=float(row["nu_db"]),
            mse_db=float(row["mse_db"]), msmd=float(row["msmd"]),
            mse_per_component=np.array([float(row["mse_pos"]),
                                        float(row["mse_vel"])]),
            empirical_std=None, estimated_std=None))
    sweep_path = os.path.join(args.dir, "mse_vs_nu.svg")
    plot_sweep(reports, sweep_path)
    print(f"wrote {sweep_path}")

    for name in sorted(os.listdir(args.dir)):
        path = os.path.join(args.dir, name)
        stem = name[:-4]
        if name.startswith("consistency_") and name.endswith(".csv"):
            data = _read_csv(path)
            method = stem[len("consistency_"):]
            rep = EvaluationReport(
                method=method, nu_db=float("nan"), mse_db=0.0, msmd=0.0,
                mse_per_component=None,
                empirical_std=np.array([[float(r["emp_std_pos"]),
                                         float(r["emp_std_vel"])]
                                        for r in data]),
                estimated_std=np.array([[float(r["est_std_pos"]),
                                         float(r["est_std_vel"])]
                                        for r in data]))
            fig_path = os.path.join(args.dir, stem + ".svg")
            plot_consistency(rep, fig_path)
            print(f"wrote {fig_path}")
        elif name.startswith("gain_trace_") and name.endswith(".csv"):
            data = _read_csv(path)
            method = stem[len("gain_trace_"):]
            rep = EvaluationReport(
                method=method, nu_db=float("nan"), mse_db=0.0, msmd=0.0,
                mse_per_component=None, empirical_std=None,
                estimated_std=None,
                gain_trace=np.array([[float(r["K0"]), float(r["K1"])]
                                     for r in data]))
            fig_path = os.path.join(args.dir, stem + ".svg")
            plot_gain_trace(rep, fig_path)
            print(f"wrote {fig_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rknlab",
        description="State-estimation lab: Kalman baselines and a "
                    "learned-gain recurrent estimator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate and store a dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the learned estimator")
    _add_config_args(p)
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--resume", default=None,
                   help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate an estimator on a dataset")
    p.add_argument("estimator",
                   help="'okf', 'sokf', or a checkpoint path")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"))
    p.add_argument("--no-plots", action="store_true",
                   help="skip figure rendering")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep",
                       help="baseline (and optional trained) comparison "
                            "over heterogeneity levels")
    _add_config_args(p)
    p.add_argument("--nu", required=True,
                   help="comma-separated heterogeneity levels in dB")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train", action="store_true",
                   help="also train and evaluate the learned estimator "
                        "at each level")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report",
                       help="render figures and a combined table from "
                            "existing CSV outputs")
    p.add_argument("dir", help="directory holding evaluation CSVs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameter) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ParseError, FormatVersionMismatch, FingerprintMismatch,
            SpecMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RknError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
