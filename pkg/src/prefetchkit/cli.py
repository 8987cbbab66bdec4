"""Command line entry points.

Subcommands cover the full loop: ``generate`` synthetic logs,
``ingest`` and canonicalize external logs, ``train`` one of the model
kinds, ``evaluate`` a checkpoint on held-out traffic, ``ablate``
feature groups, ``calibrate`` a decision threshold, and ``simulate``
the serving loop with cost accounting.

Configuration comes from an optional ``key=value`` file plus repeated
``--set key=value`` overrides; values are Python literals, with bare
words read as strings. Unknown keys are rejected, and the fully
resolved configuration is written next to each output so a run can be
reproduced from its artifacts alone. Every random choice derives from
the single ``--seed``.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
data problems (including an evaluation that cannot be satisfied), 3
for numerical failures.
"""

from __future__ import annotations

import argparse
import ast
import inspect
import sys

import numpy as np

from . import workflows
from .datamodel import (Dataset, GeneratorConfig, SplitSpec, dataset_stats,
                        derive_peak_examples, generate_synthetic, ingest,
                        split_users, subset_dataset, write_dataset)
from .errors import (ConfigError, DataError, EvaluationError, LeakageError,
                     NumericalError, PrefetchkitError)
from .evaluation import evaluate_model, evaluate_peaks
from .features import SessionFeaturizer
from .modelio import Checkpoint, load_checkpoint, save_checkpoint
from .rnn import RecurrentAccessModel, loss_curve_csv
from .serving import (DecisionPolicy, calibrate_threshold, compare_costs,
                      replay, replay_baseline_costs, series_csv)

_EXIT_CONFIG = 1
_EXIT_DATA = 2
_EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(_EXIT_CONFIG)


# ---------------------------------------------------------------------------
# Configuration plumbing


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _read_config_file(path) -> dict:
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            out[key.strip()] = _parse_value(raw.strip())
    return out


def _collect_config(args, allowed: dict) -> dict:
    """Merge defaults, config file, and --set overrides; reject unknowns."""
    merged = dict(allowed)
    overrides: dict = {}
    if getattr(args, "config", None):
        overrides.update(_read_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = _parse_value(raw.strip())
    unknown = sorted(set(overrides) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown configuration keys {unknown}; allowed keys are "
            f"{sorted(allowed)}")
    merged.update(overrides)
    return merged


def _function_defaults(fn, skip=("ds", "seed")) -> dict:
    out = {}
    for name, param in inspect.signature(fn).parameters.items():
        if name in skip or name == "self" or param.kind == param.VAR_KEYWORD:
            continue
        out[name] = param.default
    return out


def _generator_defaults() -> dict:
    import dataclasses

    return {f.name: f.default for f in dataclasses.fields(GeneratorConfig)}


def _train_defaults(kind: str) -> dict:
    if kind == "pct":
        return _function_defaults(workflows.fit_percentage)
    if kind == "lr":
        return _function_defaults(workflows.fit_linear)
    if kind == "gbdt":
        return _function_defaults(workflows.fit_gbdt)
    if kind == "rnn":
        return _function_defaults(RecurrentAccessModel.__init__, skip=("seed",))
    raise ConfigError(f"unknown model kind {kind!r}")


def _write_resolved_config(path, config: dict) -> None:
    lines = [f"{key}={config[key]!r}" for key in sorted(config)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# Shared evaluation plumbing


def _load_for_checkpoint(args, ckpt: Checkpoint) -> Dataset:
    ds = ingest(args.data)
    if ds.schema != ckpt.schema:
        raise DataError("dataset schema does not match the checkpoint's schema")
    if ds.session_length != ckpt.session_length:
        raise DataError(
            f"dataset session_length {ds.session_length} does not match the "
            f"checkpoint's {ckpt.session_length}")
    return ds


def _apply_leakage_guard(ds: Dataset, ckpt: Checkpoint, include_train: bool):
    """Drop the checkpoint's training users unless explicitly included."""
    if include_train:
        return ds, 0
    train = set(ckpt.train_users)
    kept = [u for u in ds.users() if u not in train]
    excluded = len(ds.logs) - len(kept)
    if not kept:
        raise LeakageError(
            "every user in the evaluation data was used for training; pass "
            "--include-train-users to evaluate on them anyway")
    if excluded:
        ds = subset_dataset(ds, kept)
    return ds, excluded


def _window_scores(scorer, ds: Dataset, window_days: float):
    """Concatenated (scores, labels) for sessions in the trailing window."""
    from .datamodel import SECONDS_PER_DAY

    cutoff = ds.time_range[1] - int(window_days * SECONDS_PER_DAY)
    fn = getattr(scorer, "score_dataset", None)
    per_user = fn(ds) if fn is not None else {
        u: scorer.score_log(ds.logs[u]) for u in ds.users()}
    scores, labels = [], []
    for user in ds.users():
        log = ds.logs[user]
        ts = log.timestamps()
        keep = ts >= cutoff
        scores.append(np.asarray(per_user[user])[keep])
        labels.append(log.labels()[keep])
    return np.concatenate(scores), np.concatenate(labels)


def _parse_targets(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in raw.split(",") if t)
    except ValueError as exc:
        raise ConfigError(f"bad --targets value {raw!r}") from exc


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_generate(args) -> int:
    config = _collect_config(args, _generator_defaults())
    gen = GeneratorConfig(**config)
    ds = generate_synthetic(gen, args.seed)
    write_dataset(ds, args.out)
    _write_resolved_config(args.out + ".config", config)
    if args.stats:
        _write_text(args.stats, dataset_stats(ds).to_text())
    if args.cdf:
        _write_text(args.cdf, dataset_stats(ds).cdf_csv())
    print(f"users\t{len(ds.logs)}")
    print(f"sessions\t{ds.n_sessions()}")
    print(f"wrote\t{args.out}")
    return 0


def _cmd_ingest(args) -> int:
    ds = ingest(args.data)
    write_dataset(ds, args.out)
    stats = dataset_stats(ds)
    sys.stdout.write(stats.to_text())
    print(f"wrote\t{args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _collect_config(args, _train_defaults(args.model))
    ds = ingest(args.data)
    if not (0.0 < args.split <= 1.0):
        raise ConfigError(f"--split must lie in (0, 1], got {args.split}")
    if args.split < 1.0:
        train_ds, _ = split_users(ds, SplitSpec(train_fraction=args.split,
                                                seed=args.seed))
        train_users = tuple(train_ds.users())
    else:
        train_users = tuple(ds.users())
        train_ds = ds
    scorer = workflows.fit_model(args.model, train_ds, seed=args.seed,
                                 config=config)
    ckpt = Checkpoint(kind=args.model, scorer=scorer, train_users=train_users,
                      schema=ds.schema, session_length=ds.session_length)
    save_checkpoint(args.out, ckpt)
    _write_resolved_config(args.out + ".config", config)
    if args.loss_curve:
        if not isinstance(scorer, RecurrentAccessModel):
            raise ConfigError("--loss-curve applies to the rnn model kind")
        _write_text(args.loss_curve, loss_curve_csv(scorer.loss_curve_))
    print(f"kind\t{args.model}")
    print(f"train_users\t{len(train_users)}")
    print(f"wrote\t{args.out}")
    return 0


def _evaluation_report(args, ckpt: Checkpoint, ds: Dataset):
    targets = _parse_targets(args.targets)
    scorer = ckpt.scorer
    timeshift = (isinstance(scorer, RecurrentAccessModel)
                 and scorer.mode == "timeshift")
    peak_pct = getattr(scorer, "mode", None) == "peak"
    if timeshift or peak_pct:
        if timeshift:
            start, end = scorer.peak_hours
        else:
            if not args.peak_hours:
                raise ConfigError(
                    "this checkpoint scores peak windows; pass --peak-hours")
            start, end = (int(h) for h in args.peak_hours.split(","))
        peaks = derive_peak_examples(ds, start, end)
        return evaluate_peaks(scorer, ds, peaks,
                              eval_window_days=args.window_days, targets=targets)
    return evaluate_model(scorer, ds, eval_window_days=args.window_days,
                          targets=targets)


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.model)
    ds = _load_for_checkpoint(args, ckpt)
    ds, excluded = _apply_leakage_guard(ds, ckpt, args.include_train_users)
    report = _evaluation_report(args, ckpt, ds)
    text = f"excluded_train_users\t{excluded}\n" + report.to_text()
    if args.out:
        _write_text(args.out, text)
    if args.curve:
        _write_text(args.curve, report.curve.to_csv())
    sys.stdout.write(text)
    return 0


def _cmd_ablate(args) -> int:
    allowed = _train_defaults("gbdt")
    allowed.pop("groups", None)
    config = _collect_config(args, allowed)
    ds = ingest(args.data)
    if not (0.0 < args.split < 1.0):
        raise ConfigError(f"--split must lie in (0, 1), got {args.split}")
    train_ds, eval_ds = split_users(ds, SplitSpec(train_fraction=args.split,
                                                  seed=args.seed))
    group_sets = []
    for spec in args.groups.split(";"):
        groups = tuple(g for g in spec.split("+") if g)
        if not groups:
            raise ConfigError(f"empty group set in --groups value {args.groups!r}")
        group_sets.append(groups)
    reports = workflows.ablation_run(
        train_ds, eval_ds, seed=args.seed, group_sets=group_sets,
        eval_window_days=args.window_days, targets=(0.5,), **config)
    lines = ["groups\texamples\tpositives\tpr_auc"]
    for label, report in reports.items():
        lines.append(f"{label}\t{report.n_examples}\t{report.n_positives}\t"
                     f"{report.pr_auc!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    _write_resolved_config((args.out or "ablate") + ".config", config)
    sys.stdout.write(text)
    return 0


def _cmd_calibrate(args) -> int:
    ckpt = load_checkpoint(args.model)
    ds = _load_for_checkpoint(args, ckpt)
    ds, excluded = _apply_leakage_guard(ds, ckpt, args.include_train_users)
    scores, labels = _window_scores(ckpt.scorer, ds, args.window_days)
    result = calibrate_threshold(scores, labels, args.target_precision)
    text = (f"excluded_train_users\t{excluded}\n"
            f"threshold\t{result.threshold!r}\n"
            f"precision\t{result.precision!r}\n"
            f"recall\t{result.recall!r}\n")
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def _cmd_simulate(args) -> int:
    ckpt = load_checkpoint(args.model)
    if ckpt.kind != "rnn":
        raise ConfigError("simulate requires an rnn checkpoint")
    ds = _load_for_checkpoint(args, ckpt)
    ds, excluded = _apply_leakage_guard(ds, ckpt, args.include_train_users)
    policy = DecisionPolicy(threshold=args.threshold)
    sim = replay(ds, ckpt.scorer, policy, commit_latency=args.commit_latency)
    text = f"excluded_train_users\t{excluded}\n" + sim.to_text()
    if args.baseline_costs:
        featurizer = SessionFeaturizer().fit_schema(ds.schema)
        baseline = replay_baseline_costs(ds, featurizer)
        comparison = compare_costs(sim, baseline)
        text += baseline.to_text() + comparison.to_text()
    if args.out:
        _write_text(args.out, text)
    if args.day_series:
        _write_text(args.day_series, sim.day_series_csv())
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prefetchkit",
                     description="Session-log access prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")

    p = sub.add_parser("generate", help="write a synthetic session log")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stats", help="write summary statistics to this path")
    p.add_argument("--cdf", help="write the per-user rate CDF as CSV")
    add_config_args(p)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("ingest", help="validate and canonicalize a session log")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("train", help="train one model kind")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, choices=workflows.MODEL_KINDS)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, default=0.9,
                   help="fraction of users to train on (1.0 trains on all)")
    p.add_argument("--loss-curve", help="write the rnn loss curve CSV here")
    add_config_args(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on held-out users")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--out", help="write the metrics report here")
    p.add_argument("--curve", help="write the PR curve CSV here")
    p.add_argument("--window-days", type=float, default=7.0)
    p.add_argument("--targets", default="0.5",
                   help="comma-separated precision targets")
    p.add_argument("--peak-hours", help="start,end hours for peak-window models")
    p.add_argument("--include-train-users", action="store_true",
                   help="also score users the checkpoint was trained on")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("ablate", help="boosted-tree quality per feature group")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the report here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--groups", default="C;C+E;C+E+A",
                   help="semicolon-separated group sets, e.g. C;C+E;C+E+A")
    p.add_argument("--window-days", type=float, default=7.0)
    add_config_args(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("calibrate", help="pick a precompute threshold")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--target-precision", type=float, required=True)
    p.add_argument("--out", help="write the calibration result here")
    p.add_argument("--window-days", type=float, default=7.0)
    p.add_argument("--include-train-users", action="store_true")
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("simulate", help="replay the serving loop with costs")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="rnn checkpoint path")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", help="write the simulation report here")
    p.add_argument("--day-series", help="write per-day precompute counts CSV")
    p.add_argument("--commit-latency", type=int, default=None,
                   help="seconds after session end before the state commit")
    p.add_argument("--baseline-costs", action="store_true",
                   help="append aggregation-backed cost accounting")
    p.add_argument("--include-train-users", action="store_true")
    p.set_defaults(fn=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, LeakageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except (DataError, EvaluationError, PrefetchkitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main(argv=sys.argv[1:]))
