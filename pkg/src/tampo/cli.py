"""Experiment runner: ``run``, ``eval`` and ``export-plots`` subcommands.

All randomness derives from one integer seed: training streams are keyed by
``(seed, purpose, step, prompt slot)`` and evaluation by ``(seed, eval, 0)``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_overrides
from .envs import pass_at_k
from .policy import PolicyParams
from .trainer import MetricsRecord, TrainingAborted, optimal_temperature_diagnostic, stream, train

log = logging.getLogger("tampo")

METRICS_FILE = "metrics.jsonl"
TIMINGS_FILE = "timings.jsonl"
CONFIG_FILE = "config_resolved.txt"
PARAMS_FILE = "params.json"
EVAL_FILE = "eval_report.json"
DIAGNOSTIC_FILE = "diagnostic.jsonl"


def _encode(value) -> str:
    """JSON with floats written to 17 significant digits."""
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError(f"cannot serialize non-finite float {value}")
        text = format(float(value), ".17g")
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(value, (int, np.integer, str)):
        return json.dumps(value if isinstance(value, str) else int(value))
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def metrics_line(rec: MetricsRecord) -> str:
    # wall time is not reproducible, so it goes to the timings file instead
    d = rec.to_dict()
    d.pop("wall_ms")
    return _encode(d)


def save_params(params: PolicyParams, path: Path) -> None:
    path.write_text(
        _encode({"per_prompt": params.per_prompt, "shape": list(params.table.shape), "table": params.table.ravel()})
        + "\n"
    )


def load_params(path: Path) -> PolicyParams:
    d = json.loads(Path(path).read_text())
    table = np.asarray(d["table"], dtype=np.float64).reshape(d["shape"])
    return PolicyParams(table, per_prompt=d["per_prompt"])


def run(cfg: ExperimentConfig) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_FILE).write_text(cfg.to_text())
    tasks = cfg.tasks()
    p0 = cfg.initial_params(tasks)
    with open(out / METRICS_FILE, "w") as mf, open(out / TIMINGS_FILE, "w") as tf:

        def sink(rec: MetricsRecord) -> None:
            mf.write(metrics_line(rec) + "\n")
            mf.flush()
            tf.write(_encode({"step": rec.step, "wall_ms": rec.wall_ms}) + "\n")

        try:
            result = train(
                p0,
                tasks,
                cfg.schedule,
                cfg.grpo,
                cfg.tampo,
                steps=cfg["train.steps"],
                batch_size=cfg["train.batch_size"],
                G=cfg["train.group_size"],
                seed=cfg["seed"],
                archive=cfg["archive_rollouts"],
                on_record=sink,
            )
        except TrainingAborted as exc:
            log.error("%s; diagnostic dump: %s", exc, _encode(exc.dump))
            return 3

    save_params(result.params, out / PARAMS_FILE)
    report = pass_at_k(
        result.params,
        tasks,
        cfg["eval.k"],
        cfg["eval.temperature"],
        stream(cfg["seed"], "eval", 0),
        cfg["eval.success_threshold"],
    )
    (out / EVAL_FILE).write_text(_encode(report.to_dict()) + "\n")
    if cfg["archive_rollouts"]:
        diag = optimal_temperature_diagnostic(result.archive, cfg.grid, cfg["diagnostic.window"])
        with open(out / DIAGNOSTIC_FILE, "w") as f:
            for w in diag.windows:
                f.write(_encode(w.to_dict(cfg.grid)) + "\n")
    log.info("run finished: %d steps, %d rollouts -> %s", len(result.records), result.generation_counter, out)
    return 0


def evaluate(cfg: ExperimentConfig, params_path: Path, out: Path) -> int:
    if not Path(params_path).is_file():
        log.error("params artifact not found: %s", params_path)
        return 2
    params = load_params(params_path)
    report = pass_at_k(
        params,
        cfg.tasks(),
        cfg["eval.k"],
        cfg["eval.temperature"],
        stream(cfg["seed"], "eval", 0),
        cfg["eval.success_threshold"],
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / EVAL_FILE).write_text(_encode(report.to_dict()) + "\n")
    return 0


class MetricsFormatError(ValueError):
    pass


def load_metrics(path: Path) -> list[dict]:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MetricsFormatError(f"{path}:{lineno}: malformed line ({exc.msg})") from None
            for key in ("step", "sampled_T", "mean_reward", "meta_dist"):
                if key not in rows[-1]:
                    raise MetricsFormatError(f"{path}:{lineno}: missing field {key!r}")
    if not rows:
        raise MetricsFormatError(f"{path}: no metrics records")
    return rows


def sliding_stats(values: Sequence[float], window: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trailing-window mean/std; the first ``window - 1`` entries use truncated windows.

    Returns ``(mean, std, count)`` per position.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(values, dtype=np.float64)
    mean = np.empty_like(x)
    std = np.empty_like(x)
    count = np.empty(len(x), dtype=np.int64)
    for i in range(len(x)):
        w = x[max(0, i - window + 1) : i + 1]
        mean[i], std[i], count[i] = w.mean(), w.std(), len(w)
    return mean, std, count


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def export_plots(metrics_path: Path, window: int, out: Path) -> list[Path]:
    """Write plot-ready CSV tables next to (or into ``out`` from) a metrics file."""
    rows = load_metrics(metrics_path)
    out.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in rows]
    written = []

    temps = [r["sampled_T"] for r in rows]
    m, s, c = sliding_stats(temps, window)
    _write_csv(
        out / "temperature.csv",
        ["step", "sampled_T", "window_mean", "window_std", "window_count"],
        [(st, _fmt(t), _fmt(a), _fmt(b), n) for st, t, a, b, n in zip(steps, temps, m, s, c)],
    )
    written.append(out / "temperature.csv")

    rewards = [r["mean_reward"] for r in rows]
    m, s, c = sliding_stats(rewards, window)
    _write_csv(
        out / "reward.csv",
        ["step", "mean_reward", "window_mean", "window_std", "window_count"],
        [(st, _fmt(x), _fmt(a), _fmt(b), n) for st, x, a, b, n in zip(steps, rewards, m, s, c)],
    )
    written.append(out / "reward.csv")

    K = len(rows[0]["meta_dist"])
    grid = _grid_from_config(metrics_path.parent / CONFIG_FILE, K)
    _write_csv(
        out / "meta_dist.csv",
        ["step"] + [f"T={t}" for t in grid],
        [[r["step"]] + [_fmt(p) for p in r["meta_dist"]] for r in rows],
    )
    written.append(out / "meta_dist.csv")

    diag_path = metrics_path.parent / DIAGNOSTIC_FILE
    if diag_path.is_file():
        diag_rows = []
        for line in diag_path.read_text().splitlines():
            w = json.loads(line)
            for sign in ("positive", "negative"):
                d = w[sign]
                diag_rows.append(
                    [w["window"], w["first_step"], w["last_step"], sign, d["count"],
                     _fmt(d["mean"]), _fmt(d["std"]), _fmt(d["median"])] + d["histogram"]
                )
        _write_csv(
            out / "optimal_temperature.csv",
            ["window", "first_step", "last_step", "sign", "count", "mean", "std", "median"]
            + [f"T={t}" for t in grid],
            diag_rows,
        )
        written.append(out / "optimal_temperature.csv")
    return written


def _grid_from_config(path: Path, K: int) -> list[str]:
    if path.is_file():
        try:
            cfg = ExperimentConfig.load(path)
            if len(cfg.grid) == K:
                return [repr(t) for t in cfg.grid.values]
        except ConfigError:
            pass
    return [str(k) for k in range(K)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tampo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", type=Path)

    p_run = sub.add_parser("run", help="train one configuration")
    add_common(p_run)

    p_eval = sub.add_parser("eval", help="Pass@k of a saved params artifact")
    add_common(p_eval)
    p_eval.add_argument("--params", type=Path, required=True)
    p_eval.add_argument("--k", type=int)

    p_plot = sub.add_parser("export-plots", help="CSV tables from metrics.jsonl")
    p_plot.add_argument("--metrics", type=Path, required=True)
    p_plot.add_argument("--window", type=int, default=25)
    p_plot.add_argument("--out", type=Path)
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = str(args.out)
    if getattr(args, "k", None) is not None:
        overrides["eval.k"] = str(args.k)
    return ExperimentConfig.load(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "export-plots":
            out = args.out if args.out is not None else args.metrics.parent / "plots"
            export_plots(args.metrics, args.window, out)
            return 0
        cfg = _load_config(args)
        if args.command == "run":
            return run(cfg)
        out = args.out if args.out is not None else args.params.parent
        return evaluate(cfg, args.params, out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (MetricsFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
