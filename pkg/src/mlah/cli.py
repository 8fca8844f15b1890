"""Command-line entry point.

    mlah train --config F --seed N
    mlah eval --checkpoint C --episodes K
    mlah analyze --params F
    mlah sweep --grid F [--workers W]
    mlah emit-plots --log F

Results go to stdout as tab-delimited ``key<TAB>value`` lines (``train``,
``eval``, ``analyze``; ``analyze --format csv|json`` prints a header plus
one row, or one JSON object) or a
tab-delimited table (``sweep``). Exit status is 0
on success, 2 for a configuration or input error, 3 for a numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, config, harness
from .hierarchy import Streams, evaluate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("mlah")


def _emit(pairs, out=None) -> None:
    out = out or sys.stdout
    for k, v in pairs:
        if isinstance(v, float):
            v = repr(v)
        out.write(f"{k}\t{v}\n")


def _overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise config.ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _summary(result: harness.RunResult, normalizer: float) -> list:
    ev = result.log.column("eval_return")
    tr = result.log.column("train_return")
    return [
        ("seed", result.log.seed),
        ("algorithm", result.log.algorithm),
        ("config_hash", result.log.config_hash),
        ("iterations", len(ev)),
        ("final_eval", harness.final_value(ev)),
        ("final_eval_norm", harness.final_value(ev) / normalizer),
        ("mean_train_norm", float(np.mean(tr)) / normalizer if tr.size else float("nan")),
    ]


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.output_dir:
        overrides["run.output_dir"] = args.output_dir
    cfg = config.load(args.config, overrides=overrides)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    for seed in seeds:
        result = harness.run_seed(cfg, seed, cfg.output_dir)
        _emit(_summary(result, cfg.normalizer) + sorted(result.paths.items()))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        hier, cfg, _ = harness.load_bundle(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise config.ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    rng = Streams(args.seed).eval
    returns = [evaluate(hier, cfg.env, 1, rng, cfg.ppo) for _ in range(args.episodes)]
    _emit([("episodes", args.episodes),
           ("mean_return", float(np.mean(returns))),
           ("normalized", float(np.mean(returns)) / cfg.normalizer)]
          + [(f"episode_{i}", r) for i, r in enumerate(returns)])
    return EXIT_OK


_CHAIN_KEYS = {"m", "n", "v0", "v1", "gamma", "alpha", "delta", "max_abs_adv", "a_hat"}


def cmd_analyze(args) -> int:
    raw = config.read_file(args.params)
    raw = {k.split(".", 1)[-1]: config.parse_value(v) for k, v in raw.items()}
    mc_steps = int(raw.pop("mc_steps", 0))
    seed = int(raw.pop("seed", 0))
    unknown = sorted(set(raw) - _CHAIN_KEYS)
    if unknown or not {"m", "n"} <= set(raw):
        raise config.ConfigError(
            f"analysis params need m and n; unknown keys: {', '.join(unknown) or 'none'}")
    kw = {("V0" if k == "v0" else "V1" if k == "v1" else k): float(v) for k, v in raw.items()}
    try:
        report = analysis.analyze(analysis.ChainParams(**kw), mc_steps=mc_steps, seed=seed)
    except analysis.DegenerateChainError as exc:
        raise config.ConfigError(str(exc)) from exc
    if args.format == "json":
        sys.stdout.write(json.dumps(report.as_dict()) + "\n")
    elif args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        d = report.as_dict()
        w.writerow(d)
        w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])
    else:
        _emit(report.as_dict().items())
    return EXIT_OK


def grid_points(path) -> list:
    """Base keys plus a ``[grid]`` section whose comma lists are crossed."""
    raw = config.read_file(path)
    grid = {k[len("grid."):]: config.split_list(v) for k, v in raw.items() if k.startswith("grid.")}
    base = {k: v for k, v in raw.items() if not k.startswith("grid.")}
    keys = sorted(grid)
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        point = dict(base)
        point.update({k: str(v) for k, v in zip(keys, combo)})
        points.append(point)
    return points or [base]


def _sweep_job(job) -> list:
    idx, raw, seed, out_dir = job
    cfg = config.build(raw)
    try:
        result = harness.run_seed(cfg, seed, out_dir)
    except harness.NumericalFailure as exc:
        return [idx, seed, cfg.algorithm, "numerical_failure", str(exc)]
    ev = result.log.column("eval_return")
    return [idx, seed, cfg.algorithm, "ok", repr(harness.final_value(ev) / cfg.normalizer)]


def cmd_sweep(args) -> int:
    points = grid_points(args.grid)
    jobs = []
    for i, raw in enumerate(points):
        cfg = config.build(raw)  # validate every point before any work starts
        out_dir = str(Path(args.output_dir or cfg.output_dir) / f"point{i:03d}")
        jobs.extend((i, raw, s, out_dir) for s in cfg.seeds)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    sys.stdout.write("point\tseed\talgorithm\tstatus\tfinal_eval_norm\n")
    for r in rows:
        sys.stdout.write("\t".join(str(v) for v in r) + "\n")
    return EXIT_NUMERIC if any(r[3] != "ok" for r in rows) else EXIT_OK


def cmd_emit_plots(args) -> int:
    from .plotting import emit_plot_data

    try:
        paths = emit_plot_data(args.log, args.out)
    except (OSError, harness.SchemaError) as exc:
        raise config.ConfigError(str(exc)) from exc
    _emit(sorted(paths.items()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlah", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seed (or every configured seed)")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--output-dir")
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="attack-free deterministic evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="two-state chain calculators")
    a.add_argument("--params", required=True)
    a.add_argument("--format", choices=("tsv", "csv", "json"), default="tsv")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="run a config grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("emit-plots", help="plot-ready CSVs and an SVG summary from a run log")
    g.add_argument("--log", required=True)
    g.add_argument("--out")
    g.set_defaults(func=cmd_emit_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except config.ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (harness.NumericalFailure, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
