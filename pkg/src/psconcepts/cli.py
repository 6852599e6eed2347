"""Command-line front end: ``psconcepts {train,analyze,generalize,scan}``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 training or analysis failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .analysis import (
    AnalysisThresholds,
    analyze_network,
    clip_order,
    correlation_matrix,
    predictability_table,
    subset_scan,
)
from .config import PRESETS, RunConfig, load_run_config, resolve, write_manifest
from .ecm import THREE_LAYER, TWO_LAYER, SnapshotError, load_snapshot, save_snapshot
from .environment import ConfigError, build_environment
from .training import LearningCurve, aggregate_metrics, run_ensemble, run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("psconcepts")


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(type(obj))


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_matrix(path, m, row_labels, col_labels):
    _write_csv(path, ["row"] + [str(c) for c in col_labels],
               ([str(r)] + [repr(float(v)) for v in row] for r, row in zip(row_labels, m)))


def _parse_overrides(items):
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _resolve_args(args) -> RunConfig:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["training.base_seed"] = args.seed
    if args.ensemble is not None:
        overrides["training.ensemble_size"] = args.ensemble
    if getattr(args, "rounds", None) is not None:
        overrides["training.total_rounds"] = args.rounds
    for flag, key in (("exh_min", "exh_min"), ("excl_min", "excl_min"), ("tau", "block_tau")):
        if getattr(args, flag, None) is not None:
            overrides[f"analysis.{key}"] = getattr(args, flag)
    if args.config is not None and not Path(args.config).is_file():
        raise CommandError(f"config file not found: {args.config}", EXIT_IO)
    return load_run_config(args.config, args.preset, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_summary(aggregate):
    return {k: a.to_dict() for k, a in aggregate.items()}


# --- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    run = _resolve_args(args)
    out = _out_dir(args)
    env = build_environment(run.env)
    tc = run.train
    if tc.ensemble_size == 1:
        checkpoint = None
        if args.checkpoint or tc.total_rounds >= 10_000_000:
            if tc.checkpoint_every is None:
                tc = dataclasses.replace(tc, checkpoint_every=max(tc.total_rounds // 10, 1))
            checkpoint = out / "checkpoint.npz"
        net, curve = run_training(env, run.agent, tc, tc.base_seed, checkpoint_path=checkpoint,
                                  resume_from=args.resume)
        curve.to_csv(out / "curve.csv")
        save_snapshot(out / "snapshot.txt", net, run.agent)
        summary = {"final_reward_rate": curve.final_reward_rate}
        if net.three_layer:
            summary.update(analyze_network(net, run.analysis).metrics())
        _write_json(out / "summary.json", _fmt_summary(aggregate_metrics([summary])))
        seeds = [tc.base_seed]
    else:
        res = run_ensemble(run.env, run.agent, tc, analyze=True, thresholds=run.analysis,
                           workers=args.threads)
        (out / "curves").mkdir(exist_ok=True)
        (out / "snapshots").mkdir(exist_ok=True)
        for k, (net, curve) in enumerate(zip(res.networks, res.curves)):
            curve.to_csv(out / "curves" / f"agent_{k:03d}.csv")
            save_snapshot(out / "snapshots" / f"agent_{k:03d}.txt", net, run.agent)
        res.to_json(out / "summary.json")
        seeds = res.seeds
    write_manifest(out, "train", run, seeds)
    print(f"wrote training outputs to {out}")
    return EXIT_OK


# --- analyze ---------------------------------------------------------------

def cmd_analyze(args) -> int:
    path = Path(args.snapshot)
    if not path.is_file():
        raise CommandError(f"snapshot not found: {path}", EXIT_IO)
    try:
        net, cfg = load_snapshot(path)
    except SnapshotError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_IO) from None
    if not net.three_layer:
        raise CommandError(
            f"{path}: two-layer snapshot has no intermediate clips; "
            "variable identification needs a three-layer agent", EXIT_NUMERIC)
    overrides = {}
    for flag, key in (("exh_min", "exh_min"), ("excl_min", "excl_min"), ("tau", "block_tau")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    if args.correlation:
        overrides["correlation"] = args.correlation
    try:
        th = AnalysisThresholds(**overrides)
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_CONFIG) from None

    # compute everything before writing anything
    P1, P2 = net.percept_probabilities(), net.intermediate_probabilities()
    O = net.outcomes_per_experiment
    scores = subset_scan(P1, max_clips=args.max_clips, weight_key=th.weight_key)
    table = predictability_table(P2, O)
    corr = correlation_matrix(table, th.correlation)
    estimate = analyze_network(net, th)
    order = clip_order(estimate, P2, O)

    out = _out_dir(args)
    _write_csv(out / "scatter.csv", ["cardinality", "subset", "exhaustivity", "exclusivity"],
               ([len(s.subset), " ".join(map(str, s.subset)), repr(s.exhaustivity), repr(s.exclusivity)]
                for s in scores))
    n_exp = table.shape[1]
    _write_matrix(out / "predictability.csv", table, range(table.shape[0]), range(n_exp))
    _write_matrix(out / "correlation.csv", corr, range(n_exp), range(n_exp))
    _write_matrix(out / "h1_sorted.csv", P1[:, order], range(P1.shape[0]), order)
    _write_matrix(out / "h2_sorted.csv", P2[order], order, range(P2.shape[1]))
    est = estimate.to_dict()
    est["clip_order"] = order
    _write_json(out / "estimate.json", est)
    write_manifest(out, "analyze", None, [], {"snapshot": str(path), "analysis": th.to_dict(),
                                               "agent": cfg.to_dict() if cfg else None})
    print(json.dumps({k: est[k] for k in estimate.METRICS}, default=_json_default))
    return EXIT_OK


# --- generalize ------------------------------------------------------------

def _parse_holdout(text):
    try:
        s, e = (int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"--holdout {text!r}: expected SETUP,EXPERIMENT") from None
    return s, e


def _mean_curve_rows(curves: list[LearningCurve]):
    rounds = curves[0].rounds
    rates = np.mean([c.reward_rate for c in curves], axis=0)
    hold = np.array([c.holdout_success for c in curves])
    mean, std = hold.mean(axis=0), (hold.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(len(rounds)))
    for r, a, b, c in zip(rounds, rates, mean, std):
        yield [int(r), repr(float(a)), repr(float(b)), repr(float(c))]


def cmd_generalize(args) -> int:
    run = _resolve_args(args)
    env = build_environment(run.env)
    holdout = _parse_holdout(args.holdout) if args.holdout else (run.train.holdout or (0, 0))
    primary = dataclasses.replace(run.train, holdout=holdout)
    primary.check_environment(env)
    archs = [run.agent.architecture]
    if not args.single:
        archs.append(TWO_LAYER if run.agent.architecture == THREE_LAYER else THREE_LAYER)
    out = _out_dir(args)
    summary, seeds = {}, []
    for arch in archs:
        agent = dataclasses.replace(run.agent, architecture=arch)
        if arch == run.agent.architecture:
            tc = primary
        else:
            other = resolve(preset="twolayer" if arch == TWO_LAYER else "default3x2x3")
            tc = dataclasses.replace(other.train, holdout=holdout, ensemble_size=primary.ensemble_size,
                                     base_seed=primary.base_seed)
            if args.other_rounds is not None:
                T = args.other_rounds
                tc = dataclasses.replace(tc, total_rounds=T, curve_window=min(tc.curve_window, T),
                                         eval_interval=max(T // 500, 1))
        res = run_ensemble(run.env, agent, tc, analyze=False, workers=args.threads)
        _write_csv(out / f"holdout_{arch}.csv",
                   ["round", "reward_rate", "holdout_success", "holdout_success_std"],
                   _mean_curve_rows(res.curves))
        (out / "curves").mkdir(exist_ok=True)
        for k, curve in enumerate(res.curves):
            curve.to_csv(out / "curves" / f"{arch}_agent_{k:03d}.csv")
        summary[arch] = _fmt_summary(res.aggregate)
        summary[arch]["total_rounds"] = tc.total_rounds
        seeds = res.seeds
    summary["holdout"] = list(holdout)
    _write_json(out / "summary.json", summary)
    write_manifest(out, "generalize", dataclasses.replace(run, train=primary), seeds,
                   {"architectures": archs})
    for arch in archs:
        a = summary[arch]["holdout_success"]
        print(f"{arch}: holdout success {a['mean']:.3f} +/- {a['std']:.3f}")
    return EXIT_OK


# --- scan ------------------------------------------------------------------

SCAN_METRICS = (
    "final_reward_rate",
    "est_num_variables",
    "est_experiments_per_variable",
    "est_values_per_variable_layer1",
    "est_values_per_variable_layer2",
    "est_distinct_representative_clips",
)


def _load_sweep(path):
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"sweep file not found: {p}", EXIT_IO)
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: expected a mapping with a 'presets' list")
    entries = data.get("presets") or []
    if not isinstance(entries, list):
        raise ConfigError(f"{p}: 'presets' must be a list")
    return data, entries


def cmd_scan(args) -> int:
    data, entries = _load_sweep(args.sweep)
    out = _out_dir(args)
    common = {}
    for key in ("ensemble_size", "base_seed"):
        if key in data:
            common[f"training.{key}"] = data[key]
    if args.ensemble is not None:
        common["training.ensemble_size"] = args.ensemble
    if args.seed is not None:
        common["training.base_seed"] = args.seed
    header = ["preset", "num_variables", "values_per_variable", "experiments_per_variable",
              "total_rounds", "ensemble_size", "status"]
    for m in SCAN_METRICS:
        header += [f"{m}_mean", f"{m}_std"]
    rows, runs, failed = [], [], []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"preset": entry}
        name = entry.get("preset", "custom")
        try:
            overrides = dict(common)
            overrides.update({k if "." in k else f"training.{k}": v for k, v in entry.items() if k != "preset"})
            run = resolve(preset=entry.get("preset"), overrides=overrides, source=f"sweep[{name}]")
            res = run_ensemble(run.env, run.agent, run.train, analyze=True, thresholds=run.analysis,
                               workers=args.threads)
        except Exception as exc:  # reported per preset, sweep continues
            log.error("preset %s failed: %s", name, exc)
            failed.append(name)
            rows.append([name, "", "", "", "", "", f"failed: {exc}"] + [""] * (2 * len(SCAN_METRICS)))
            continue
        row = [name, run.env.num_variables, run.env.values_per_variable, run.env.experiments_per_variable,
               run.train.total_rounds, run.train.ensemble_size, "ok"]
        for m in SCAN_METRICS:
            a = res.aggregate.get(m)
            row += [repr(a.mean), repr(a.std)] if a else ["", ""]
        rows.append(row)
        runs.append({"preset": name, **run.to_dict(), "seeds": res.seeds})
    _write_csv(out / "scan.csv", header, rows)
    write_manifest(out, "scan", None, [], {"sweep": str(args.sweep), "runs": runs, "failed": failed})
    print(f"scanned {len(entries)} preset(s), {len(failed)} failed; wrote {out / 'scan.csv'}")
    return EXIT_NUMERIC if failed else EXIT_OK


# --- entry point -----------------------------------------------------------

def _common(p, with_rounds=True):
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, help="base seed (agent k uses seed + k)")
    p.add_argument("--ensemble", type=int, help="number of agents")
    if with_rounds:
        p.add_argument("--rounds", type=lambda x: int(float(x)), help="total interaction rounds T")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config value")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for ensembles")
    p.add_argument("--exh-min", dest="exh_min", type=float)
    p.add_argument("--excl-min", dest="excl_min", type=float)
    p.add_argument("--tau", type=float, help="correlation threshold for experiment blocks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psconcepts", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent or an ensemble")
    _common(p)
    p.add_argument("--checkpoint", action="store_true", help="write checkpoint.npz every T/10 rounds")
    p.add_argument("--resume", help="resume a single run from a checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="identify variables in a trained snapshot")
    p.add_argument("snapshot")
    p.add_argument("--out", required=True)
    p.add_argument("--exh-min", dest="exh_min", type=float)
    p.add_argument("--excl-min", dest="excl_min", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--correlation", choices=("pearson", "cosine"))
    p.add_argument("--max-clips", dest="max_clips", type=int, default=20)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("generalize", help="holdout experiment for both architectures")
    _common(p)
    p.add_argument("--holdout", help="SETUP,EXPERIMENT pair withheld from feedback (default 0,0)")
    p.add_argument("--single", action="store_true", help="only run the configured architecture")
    p.add_argument("--other-rounds", dest="other_rounds", type=lambda x: int(float(x)),
                   help="rounds for the comparison architecture (default: its preset)")
    p.set_defaults(func=cmd_generalize)

    p = sub.add_parser("scan", help="run ensembles over a list of environment presets")
    p.add_argument("sweep", help="YAML file with a 'presets' list")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--ensemble", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
