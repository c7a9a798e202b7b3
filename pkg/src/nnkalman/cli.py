"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration error, 3 every method failed.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .exceptions import ConfigError
from .experiments import (
    Replication,
    aggregate_estimation,
    all_failed,
    filter_replication,
    generate_replication,
    load_config,
    lorenz_filter_model,
    lorenz_training_data,
    parse_config,
    replication_seed,
    run_experiment,
    train_lorenz_surrogate,
    write_bundle,
    _safe,
)
from .io import load_system, read_run_record, read_trajectory, save_system, write_run_record, write_trajectory
from .training import save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED = 0, 2, 3


def _rep_dir(out, r):
    return os.path.join(out, f"rep_{r:03d}")


def _config(args):
    path = args.config or os.path.join(args.out, "config.json")
    return load_config(path, seed=args.seed)


def cmd_run(args):
    config = _config(args)
    results = run_experiment(config, args.out, jobs=args.jobs)
    return EXIT_ALL_FAILED if all_failed(results) else EXIT_OK


def cmd_lqr(args):
    config = _config(args)
    if config.kind != "lti-regulation":
        raise ConfigError("lqr needs an lti-regulation config")
    return cmd_run(args)


def cmd_generate(args):
    config = _config(args)
    if config.kind == "lti-regulation":
        raise ConfigError("regulation data are produced in closed loop; use the lqr command")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(config.raw, fh, indent=2, sort_keys=True)
    train_states = None
    if config.kind == "lorenz":
        train_states = lorenz_training_data(config)
        os.makedirs(os.path.join(args.out, "training"), exist_ok=True)
        write_trajectory(
            os.path.join(args.out, "training", "train_trajectory.csv"),
            train_states,
            None,
            np.zeros((len(train_states) - 1, 0)),
        )
    for r in range(config.replications):
        rep = generate_replication(config, r, train_states)
        d = _rep_dir(args.out, r)
        os.makedirs(d, exist_ok=True)
        write_trajectory(os.path.join(d, "trajectory.csv"), rep.states, rep.inputs, rep.outputs)
        if rep.model is not None:
            save_system(rep.model, os.path.join(d, "system.json"))
    return EXIT_OK


def cmd_train(args):
    config = _config(args)
    if config.kind != "lorenz":
        raise ConfigError("only the lorenz experiment has a trained surrogate")
    train_states, _, _ = read_trajectory(os.path.join(args.out, "training", "train_trajectory.csv"))
    report = train_lorenz_surrogate(config, train_states)
    save_checkpoint(report, os.path.join(args.out, "training", "checkpoint"))
    with open(os.path.join(args.out, "training", "report.json"), "w") as fh:
        json.dump({"training_final_loss": float(report.losses[-1])}, fh)
    for r in range(config.replications):
        d = _rep_dir(args.out, r)
        states, _, _ = read_trajectory(os.path.join(d, "trajectory.csv"))
        save_system(lorenz_filter_model(config, report, states[0]), os.path.join(d, "system.json"))
    return EXIT_OK


def _load_replication(config, out, r):
    d = _rep_dir(out, r)
    path = os.path.join(d, "system.json")
    if not os.path.exists(path):
        raise ConfigError(f"{path} is missing; run generate (and train for lorenz) first")
    states, inputs, outputs = read_trajectory(os.path.join(d, "trajectory.csv"))
    return Replication(r, replication_seed(config.seed, r), load_system(path), states, inputs, outputs)


def _write_runs(config, out, smooth, only=None):
    if only is not None:
        labels = [e.label for e in config.methods]
        if only not in labels:
            raise ConfigError(f"method {only!r} is not in the config (have {labels})")
    n_ok = n_total = 0
    for r in range(config.replications):
        rep = _load_replication(config, out, r)
        outs = filter_replication(config, rep, smooth=smooth)
        d = _rep_dir(out, r)
        for label, res in outs.items():
            if only is not None and label != only:
                continue
            base = os.path.join(d, f"run_{_safe(label)}")
            n_total += 1
            for stale in (base + ".csv", base + ".failed"):
                if os.path.exists(stale):
                    os.remove(stale)
            if isinstance(res, str):
                with open(base + ".failed", "w") as fh:
                    fh.write(res + "\n")
            else:
                n_ok += 1
                write_run_record(base + ".csv", res)
    return EXIT_ALL_FAILED if n_total and not n_ok else EXIT_OK


def cmd_filter(args):
    return _write_runs(_config(args), args.out, smooth=False, only=args.method)


def cmd_smooth(args):
    return _write_runs(_config(args), args.out, smooth=True, only=args.method)


def cmd_evaluate(args):
    config = _config(args)
    per_rep = []
    for r in range(config.replications):
        d = _rep_dir(args.out, r)
        outs = {}
        for entry in config.methods:
            base = os.path.join(d, f"run_{_safe(entry.label)}")
            if os.path.exists(base + ".csv"):
                outs[entry.label] = read_run_record(base + ".csv")
            elif os.path.exists(base + ".failed"):
                with open(base + ".failed") as fh:
                    outs[entry.label] = fh.read().strip()
            else:
                raise ConfigError(f"no run file for method {entry.label!r} in {d}; run filter or smooth first")
        per_rep.append(outs)
    smoothed = all(not isinstance(o, str) and o.smooth_mean is not None for rep in per_rep for o in rep.values())
    if smoothed != config.smooth:
        config = parse_config(dict(config.raw, smooth=smoothed))
    extra = {}
    report_path = os.path.join(args.out, "training", "report.json")
    if config.kind == "lorenz" and os.path.exists(report_path):
        with open(report_path) as fh:
            extra = json.load(fh)
    results = aggregate_estimation(config, per_rep)
    write_bundle(args.out, config, results, extra)
    return EXIT_ALL_FAILED if all_failed(results) else EXIT_OK


def cmd_report(args):
    """Join several ``summary.csv`` files into one wide table keyed by (method, task, metric)."""
    names, tables = [], []
    for run in args.runs:
        path = run if run.endswith(".csv") else os.path.join(run, "summary.csv")
        if not os.path.exists(path):
            raise ConfigError(f"no summary at {path}")
        name = os.path.basename(os.path.normpath(os.path.dirname(path) if run.endswith(".csv") else run)) or "run"
        while name in names:
            name += "_"
        names.append(name)
        with open(path, newline="") as fh:
            tables.append({(row["method"], row["task"], row["metric"]): row for row in csv.DictReader(fh)})
    keys = []
    for table in tables:
        keys += [k for k in table if k not in keys]
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        header = ["method", "task", "metric"]
        for name in names:
            header += [f"{name}:value", f"{name}:stderr", f"{name}:status"]
        w.writerow(header)
        for key in keys:
            row = list(key)
            for table in tables:
                entry = table.get(key)
                row += [entry["value"], entry["stderr"], entry["status"]] if entry else ["", "", ""]
            w.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="nnkalman", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config, help="experiment config (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel replications")

    for name, func, helptext, need in (
        ("run", cmd_run, "run a full experiment and write its result bundle", True),
        ("generate", cmd_generate, "simulate systems and trajectories", True),
        ("train", cmd_train, "fit the lorenz surrogate from generated data", False),
        ("filter", cmd_filter, "filter every generated replication", False),
        ("smooth", cmd_smooth, "filter and smooth every generated replication", False),
        ("evaluate", cmd_evaluate, "compute metrics from filter/smooth outputs", False),
        ("lqr", cmd_lqr, "closed-loop regulation experiment", True),
    ):
        p = sub.add_parser(name, help=helptext)
        common(p, need)
        if name in ("filter", "smooth"):
            p.add_argument("--method", default=None, help="only this method label")
        p.set_defaults(func=func)
    p = sub.add_parser("report", help="join summary tables from several runs")
    p.add_argument("runs", nargs="+", help="run directories or summary.csv files")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
