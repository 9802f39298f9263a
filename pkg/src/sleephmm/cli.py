"""Command-line front end: ``sleephmm <command> [options]``.

Commands share one declarative config (JSON or YAML).  Every command-line
flag is an override of a config key; ``--set a.b=value`` reaches any key.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import copy
import datetime as dt
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from . import io as fmt
from .errors import InvalidInputError, NumericalError, SleepHMMError
from .evaluation import (METRICS, classification_metrics, dummy_classifier, gmm_classifier, indicator_errors,
                         kmeans_classifier, summarize)
from .hhmm import FitConfig, HhmmParams, decode_many
from .indicators import (DayCalendar, daily_indicators, indicators_from_interval, predict_sleep,
                         unsupervised_asleep_states, weekly_by_subject)
from .preprocessing import (CHANNELS, CONTINUOUS_CHANNELS, DISCRETE_CHANNELS, RAW_CHANNELS, TRAIN_MAX_MISSING,
                            build_day_vectors, parse_records, passes_filter)
from .selection import CONFIGS, fit_best, sweep
from .synthdata import SubjectScenario, simulate_cohort

logger = logging.getLogger("sleephmm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
FIXED_CLOCK = "1970-01-01T00:00:00+00:00"

DEFAULT_CONFIG = {
    "seed": 0,
    "jobs": 1,
    "fixed_clock": False,
    "paths": {
        "output_dir": "out",
        "raw": None,
        "labels": None,
        "days": None,
        "model": None,
        "predictions": None,
    },
    "zones": {},
    "default_zone": "UTC",
    "preprocess": {
        "max_missing": dict(TRAIN_MAX_MISSING),
        # fraction of unparseable rows tolerated before the run fails
        "max_rejected_fraction": 0.01,
    },
    "fit": {
        "n_states": 6,
        "config": "semi-2",
        "restarts": 1,
        "max_iters": 500,
        "rel_tol": 1e-6,
        "cov_floor": 1e-6,
        "fully_missing": "substitute",
    },
    "select": {
        "states": [3, 10],
        "configs": list(CONFIGS),
        "restarts": 1,
    },
    "predict": {
        "asleep_states": None,
        "merge_gap": 3,
    },
    "calendar": {
        "free_weekdays": [5, 6],
        "overrides": {},
    },
    "evaluate": {
        "filter": "eval-complete",
        "baselines": ["dummy_uniform", "dummy_most_frequent", "kmeans_zeros", "kmeans_most_frequent",
                      "gmm_zeros", "gmm_most_frequent"],
    },
    "simulate": {
        "n_subjects": 30,
        "n_days": 20,
        "start_date": "2024-01-01",
        "sleep_start": "23:30",
        "sleep_end": "07:30",
        "jitter_minutes": 15.0,
        "free_day_shift_minutes": 0.0,
        "missing_rate": 0.1,
        "zone": "UTC",
    },
}

DEFAULT_FILES = {
    "raw": "records.csv",
    "labels": "truth.jsonl",
    "days": "days.jsonl",
    "model": "model.json",
    "predictions": "predictions.jsonl",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling

def _merge(base: dict, update: dict, where: str = "") -> dict:
    for key, value in update.items():
        if key not in base:
            raise UsageError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("zones", "overrides"):
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def _set_key(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise UsageError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise UsageError(f"unknown config key {key}")
        node = node[p]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key {key}")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path: Optional[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {p}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a mapping")
    return _merge(cfg, doc)


def resolve_config(args) -> dict:
    cfg = load_config(args.config)
    for assignment in args.set or []:
        _set_key(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.fixed_clock:
        cfg["fixed_clock"] = True
    if args.out is not None:
        cfg["paths"]["output_dir"] = args.out
    for name in DEFAULT_FILES:
        value = getattr(args, name, None)
        if value is not None:
            cfg["paths"][name] = value
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for ch, v in cfg["preprocess"]["max_missing"].items():
        if ch not in CHANNELS or not 0.0 <= float(v) <= 1.0:
            raise UsageError(f"bad missing threshold {ch}={v}")
    if not 0.0 <= float(cfg["preprocess"]["max_rejected_fraction"]) <= 1.0:
        raise UsageError("max_rejected_fraction must lie in [0, 1]")
    if cfg["fit"]["config"] not in CONFIGS:
        raise UsageError(f"fit.config must be one of {sorted(CONFIGS)}")
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be >= 1")


def _path(cfg: dict, name: str) -> Path:
    value = cfg["paths"][name]
    if value is None:
        return Path(cfg["paths"]["output_dir"]) / DEFAULT_FILES[name]
    return Path(value)


def _out(cfg: dict, filename: str) -> Path:
    d = Path(cfg["paths"]["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d / filename


def _stamp(cfg: dict) -> str:
    if cfg["fixed_clock"]:
        return FIXED_CLOCK
    return dt.datetime.now(dt.timezone.utc).replace(microsecond=0).isoformat()


def _fit_config(cfg: dict) -> FitConfig:
    f = cfg["fit"]
    return FitConfig(max_iters=int(f["max_iters"]), rel_tol=float(f["rel_tol"]), cov_floor=float(f["cov_floor"]),
                     seed=int(cfg["seed"]), fully_missing=f["fully_missing"])


def _calendar(cfg: dict) -> DayCalendar:
    c = cfg["calendar"]
    overrides = {dt.date.fromisoformat(str(k)): bool(v) for k, v in (c.get("overrides") or {}).items()}
    return DayCalendar(tuple(int(d) for d in c["free_weekdays"]), overrides)


def _channel_names() -> dict:
    return {"continuous": list(CONTINUOUS_CHANNELS), "discrete": list(DISCRETE_CHANNELS)}


def _load_days(cfg: dict, mode: Optional[str] = None):
    days = fmt.read_days(_path(cfg, "days"))
    if not days:
        raise InvalidInputError(f"no day vectors in {_path(cfg, 'days')}")
    if mode is not None:
        limits = cfg["preprocess"]["max_missing"] if mode == "train" else None
        days = [d for d in days if passes_filter(d, mode, limits)]
    return days


def _load_model(cfg: dict) -> HhmmParams:
    path = _path(cfg, "model")
    if not path.exists():
        raise InvalidInputError(f"no such model file: {path}")
    try:
        return HhmmParams.load(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"cannot read model {path}: {exc}") from None


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: dict) -> str:
    s = cfg["simulate"]
    scenario = SubjectScenario(
        start_date=dt.date.fromisoformat(str(s["start_date"])),
        sleep_start=str(s["sleep_start"]),
        sleep_end=str(s["sleep_end"]),
        jitter_minutes=float(s["jitter_minutes"]),
        free_day_shift_minutes=float(s["free_day_shift_minutes"]),
        missing={ch: float(s["missing_rate"]) for ch in RAW_CHANNELS},
        calendar=_calendar(cfg),
        zone=str(s["zone"]),
        seed=int(cfg["seed"]),
    )
    subjects = simulate_cohort(scenario, int(s["n_subjects"]), int(s["n_days"]))
    raw_path, labels_path = _path(cfg, "raw"), _path(cfg, "labels")
    for p in (raw_path, labels_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    fmt.write_records(raw_path, (r for sub in subjects for r in sub.records))
    fmt.write_truth_episodes(labels_path, ((sub.subject_id, *sub.episodes[d])
                                           for sub in subjects for d in sorted(sub.episodes)))
    truth_daily = {(sub.subject_id, d): ind for sub in subjects for d, ind in sub.truth_daily.items()}
    fmt.write_daily_indicators(_out(cfg, "truth_daily_indicators.csv"), truth_daily)
    n_records = sum(len(sub.records) for sub in subjects)
    fmt.write_json(_out(cfg, "simulate_report.json"), {
        "generated_at": _stamp(cfg),
        "version": __version__,
        "seed": int(cfg["seed"]),
        "n_subjects": len(subjects),
        "n_days": int(s["n_days"]),
        "n_records": n_records,
        "records": str(raw_path),
        "labels": str(labels_path),
    })
    return f"simulated {len(subjects)} subjects x {s['n_days']} days ({n_records} records) -> {raw_path}"


def cmd_preprocess(cfg: dict) -> str:
    raw_path = _path(cfg, "raw")
    rows = list(fmt.read_rows(raw_path))
    if not rows:
        raise InvalidInputError(f"{raw_path} contains no records")
    records, rejected = parse_records(rows)
    n_rejected = sum(rejected.values())
    tolerance = float(cfg["preprocess"]["max_rejected_fraction"])
    if n_rejected > tolerance * len(rows):
        raise InvalidInputError(f"{n_rejected} of {len(rows)} rows rejected ({dict(rejected)}), "
                                f"above the tolerated fraction {tolerance}")
    if not records:
        raise InvalidInputError(f"{raw_path} contains no valid records")

    days = build_day_vectors(records, cfg["zones"], cfg["default_zone"])
    limits = cfg["preprocess"]["max_missing"]
    kept = {"train": 0, "eval-complete": 0}
    over_threshold = Counter()
    flags = Counter()
    flagged_days = []
    for day in days:
        for mode in kept:
            kept[mode] += passes_filter(day, mode, limits if mode == "train" else None)
        missing = day.missing_fraction()
        for ch in CHANNELS:
            if missing[ch] >= dict(TRAIN_MAX_MISSING, **limits)[ch]:
                over_threshold[ch] += 1
        for f in day.flags:
            flags[f] += 1
            if f.startswith("dst_"):
                flagged_days.append({"subject_id": day.subject_id, "date": day.date.isoformat(), "flag": f})

    days_path = _path(cfg, "days")
    days_path.parent.mkdir(parents=True, exist_ok=True)
    fmt.write_days(days_path, days)
    fmt.write_json(_out(cfg, "preprocess_report.json"), {
        "generated_at": _stamp(cfg),
        "version": __version__,
        "n_rows": len(rows),
        "n_records": len(records),
        "rejected_records": {k: rejected[k] for k in sorted(rejected)},
        "n_rejected": n_rejected,
        "n_days": len(days),
        "days_kept": kept,
        "days_dropped": {mode: len(days) - n for mode, n in kept.items()},
        "days_over_threshold": {ch: over_threshold[ch] for ch in CHANNELS},
        "flags": {k: flags[k] for k in sorted(flags)},
        "dst_days": flagged_days,
    })
    return (f"preprocessed {len(records)} records ({n_rejected} rejected) into {len(days)} days; "
            f"train filter keeps {kept['train']}")


def cmd_train(cfg: dict) -> str:
    days = _load_days(cfg, "train")
    if not days:
        raise InvalidInputError("no day passes the training filter")
    f = cfg["fit"]
    params, trace, seed = fit_best([d.seq for d in days], int(f["n_states"]), CONFIGS[f["config"]],
                                   _fit_config(cfg), int(f["restarts"]), _channel_names())
    model_path = _path(cfg, "model")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    params.save(model_path)
    fmt.write_json(_out(cfg, "train_report.json"), {
        "generated_at": _stamp(cfg),
        "version": __version__,
        "n_days": len(days),
        "n_states": int(f["n_states"]),
        "config_label": f["config"],
        "seed": seed,
        "n_iterations": len(trace),
        "loglik": trace[-1],
        "loglik_trace": trace,
    })
    return f"trained {f['n_states']}-state {f['config']} model on {len(days)} days, loglik {trace[-1]:.3f}"


def cmd_select(cfg: dict) -> str:
    days = _load_days(cfg, "train")
    if not days:
        raise InvalidInputError("no day passes the training filter")
    s = cfg["select"]
    lo, hi = (int(x) for x in s["states"])
    report = sweep([d.seq for d in days], range(lo, hi + 1), list(s["configs"]), _fit_config(cfg),
                   int(s["restarts"]), int(cfg["jobs"]))
    _out(cfg, "sweep.json").write_text(report.to_json())
    _out(cfg, "sweep.csv").write_text(report.to_csv())
    best = report.best("bic")
    pick = "none" if best is None else f"{best.n_states} states ({best.config_label})"
    return f"swept {len(report.rows)} cells on {len(days)} days; lowest BIC: {pick}"


def _asleep_states(cfg: dict, params: HhmmParams) -> List[int]:
    chosen = cfg["predict"]["asleep_states"]
    if chosen is not None:
        states = [int(s) for s in chosen]
        if any(not 0 <= s < params.n_states for s in states):
            raise InvalidInputError(f"asleep_states {states} outside the model's {params.n_states} states")
        return states
    return params.frozen_states() or unsupervised_asleep_states(params)


def cmd_predict(cfg: dict) -> str:
    params = _load_model(cfg)
    days = _load_days(cfg)
    asleep = _asleep_states(cfg, params)
    decoded = decode_many(params, [d.seq for d in days], cfg["fit"]["fully_missing"])
    rows = []
    for day, (path, score) in zip(days, decoded):
        pred = predict_sleep(path, asleep, int(cfg["predict"]["merge_gap"]))
        rows.append({"subject_id": day.subject_id, "date": day.date, "states": path, "asleep": pred.binary,
                     "episode": pred.episode, "score": score})
    out = _path(cfg, "predictions")
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt.write_predictions(out, rows)
    return f"decoded {len(rows)} days, asleep states {asleep} -> {out}"


def _predicted_daily(predictions: dict) -> dict:
    return {key: daily_indicators(p["episode"]) for key, p in predictions.items()}


def cmd_indicators(cfg: dict) -> str:
    predictions = fmt.read_predictions(_path(cfg, "predictions"))
    if not predictions:
        raise InvalidInputError("no predictions to summarize")
    daily = _predicted_daily(predictions)
    weekly = weekly_by_subject(daily, _calendar(cfg))
    fmt.write_daily_indicators(_out(cfg, "daily_indicators.csv"), daily)
    fmt.write_weekly_indicators(_out(cfg, "weekly_indicators.csv"), weekly)
    n_ep = sum(1 for v in daily.values() if v is not None)
    return f"{n_ep} of {len(daily)} days with a main sleep episode; {len(weekly)} valid weeks"


def _baseline_predictions(name: str, train_seqs, eval_pairs, seed: int) -> Dict[tuple, np.ndarray]:
    kind, _, impute = name.partition("_")
    factory = {"kmeans": kmeans_classifier, "gmm": gmm_classifier}.get(kind)
    if factory is None or impute not in ("zeros", "most_frequent"):
        raise UsageError(f"unknown baseline {name!r}")
    model = factory(train_seqs, impute=impute, seed=seed)
    return {key: model.predict(seq) for key, seq in eval_pairs}


def cmd_evaluate(cfg: dict) -> str:
    labels_path = _path(cfg, "labels")
    truth = fmt.read_truth(labels_path, cfg["zones"], cfg["default_zone"])
    predictions = fmt.read_predictions(_path(cfg, "predictions"))
    all_days = _load_days(cfg)
    mode = cfg["evaluate"]["filter"]
    eval_days = [d for d in all_days if mode == "none" or passes_filter(d, mode)]
    keys = [(d.subject_id, d.date) for d in eval_days]
    usable = [(k, d) for k, d in zip(keys, eval_days) if k in truth and k in predictions and truth[k][1].any()]
    if not usable:
        raise InvalidInputError("no evaluated day has both a prediction and reference labels")
    train_limits = cfg["preprocess"]["max_missing"]
    train_days = [d.seq for d in all_days if passes_filter(d, "train", train_limits)]
    if not train_days:
        raise InvalidInputError("no day passes the training filter for the baselines")

    methods = {"hhmm": {k: predictions[k]["asleep"] for k, _ in usable}}
    seed = int(cfg["seed"])
    eval_pairs = [(k, d.seq) for k, d in usable]
    train_truth = np.concatenate([truth[(d.subject_id, d.date)][0][truth[(d.subject_id, d.date)][1]]
                                  for d in all_days if (d.subject_id, d.date) in truth])
    for name in cfg["evaluate"]["baselines"]:
        if name == "dummy_most_frequent":
            methods[name] = {k: dummy_classifier("most_frequent", train_truth, len(s)) for k, s in eval_pairs}
        elif name == "dummy_uniform":
            methods[name] = {k: dummy_classifier("uniform", None, len(s), seed + i)
                             for i, (k, s) in enumerate(eval_pairs)}
        else:
            methods[name] = _baseline_predictions(name, train_days, eval_pairs, seed)

    per_seq_rows, summary = [], {}
    for name, preds in methods.items():
        metrics = []
        for k, _ in usable:
            labels, mask = truth[k]
            m = classification_metrics(preds[k], labels, mask)
            metrics.append(m)
            per_seq_rows.append([name, k[0], k[1].isoformat(), m.accuracy, m.sensitivity, m.specificity, m.n_slots])
        summary[name] = summarize(metrics)

    indicator_report = {}
    if labels_path.suffix.lower() in (".jsonl", ".json", ".ndjson"):
        episodes = fmt.read_truth_episodes(labels_path, cfg["zones"], cfg["default_zone"])
        truth_daily = {k: indicators_from_interval(*max(v, key=lambda e: e[1] - e[0])) for k, v in episodes.items()}
        pred_daily = {k: daily_indicators(predictions[k]["episode"]) for k, _ in usable}
        calendar = _calendar(cfg)
        for level, pred_ind, truth_ind in (
            ("daily", pred_daily, truth_daily),
            ("weekly", weekly_by_subject(pred_daily, calendar),
             weekly_by_subject({k: truth_daily.get(k) for k in pred_daily}, calendar)),
        ):
            try:
                errs = indicator_errors(pred_ind, truth_ind)
            except InvalidInputError:
                continue
            indicator_report[level] = {n: {"rmse": e.rmse, "mae": e.mae, "n": e.n} for n, e in errs.items()}

    fmt.write_json(_out(cfg, "eval_report.json"), {
        "generated_at": _stamp(cfg),
        "version": __version__,
        "positive_class": "asleep",
        "filter": mode,
        "n_sequences": len(usable),
        "classification": summary,
        "indicators": indicator_report,
    })
    fmt.write_table(_out(cfg, "eval_sequences.csv"),
                    ("method", "subject_id", "date", "accuracy", "sensitivity", "specificity", "n_slots"),
                    per_seq_rows)
    summary_rows = [[name] + [summary[name][m][s] for m in METRICS for s in ("mean", "std")] for name in methods]
    fmt.write_table(_out(cfg, "eval_summary.csv"),
                    ("method",) + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std")), summary_rows)
    acc = summary["hhmm"]["accuracy"]["mean"]
    return f"evaluated {len(usable)} days; HHMM mean accuracy {acc:.4f}"


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "select": cmd_select,
    "predict": cmd_predict,
    "indicators": cmd_indicators,
    "evaluate": cmd_evaluate,
}

HELP = {
    "simulate": "generate synthetic raw records and reference labels",
    "preprocess": "raw records -> cleaned day vectors and a run report",
    "train": "fit the model on days passing the training filter",
    "select": "sweep state counts and supervision setups, report BIC/AIC",
    "predict": "Viterbi-decode every day and map states to asleep/awake",
    "indicators": "daily and weekly sleep indicators from predictions",
    "evaluate": "compare predictions and baselines against reference labels",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--seed", type=int, help="override config key seed")
    common.add_argument("--jobs", type=int, help="worker processes where supported")
    common.add_argument("--fixed-clock", action="store_true", help="write a constant timestamp into reports")
    common.add_argument("--out", help="output directory (paths.output_dir)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="count", default=0)
    for name in DEFAULT_FILES:
        common.add_argument(f"--{name}", help=f"paths.{name}")

    parser = _Parser(prog="sleephmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        summary = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"sleephmm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"sleephmm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SleepHMMError, OSError, ValueError) as exc:
        print(f"sleephmm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
