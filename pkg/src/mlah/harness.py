"""Experiment orchestration: seeded runs, CSV run logs and checkpoint bundles.

Files written per (config, seed) into ``output_dir``::

    <stem>.csv             run log, one row per iteration (versioned header)
    <stem>.selections.csv  iteration, step, controller, attack_flag per step
    <stem>.npz             final checkpoint bundle
    <stem>.meta.json       wall-clock and host details (kept out of the CSV so
                           the log itself is reproducible bit for bit)

``<stem>`` is ``<algorithm>_seed<N>``.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import subprocess
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .approximator import params_from_arrays, params_to_arrays
from .config import ExperimentConfig, from_text
from .hierarchy import (
    Hierarchy,
    IterationReport,
    Streams,
    init_hierarchy,
    make_runner,
    pretrain_nominal,
    train_iteration,
)

log = logging.getLogger(__name__)

SCHEMA = "mlah-runlog"
SCHEMA_VERSION = 1
ROW_FIELDS = ["status"] + [f.name for f in fields(IterationReport)]
_INT_FIELDS = {"iteration", "timesteps", "episodes", "steps_nom", "steps_adv"}
_BOOL_FIELDS = {"nom_skipped", "adv_skipped"}


class NumericalFailure(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


def revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunLog:
    seed: int
    algorithm: str
    config_hash: str
    revision: str
    normalizer: float
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r["status"] == "ok"], dtype=np.float64)

    def append(self, report: IterationReport, status: str = "ok") -> None:
        self.rows.append({"status": status, **asdict(report)})


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_runlog(runlog: RunLog, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA} v{SCHEMA_VERSION}\n")
        fh.write(f"# seed={runlog.seed} algorithm={runlog.algorithm} "
                 f"config_hash={runlog.config_hash} revision={runlog.revision} "
                 f"normalizer={runlog.normalizer!r}\n")
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for row in runlog.rows:
            w.writerow([_fmt_cell(row[k]) for k in ROW_FIELDS])


def read_runlog(path) -> RunLog:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        parts = first.lstrip("# ").split()
        if len(parts) != 2 or parts[0] != SCHEMA:
            raise SchemaError(f"{path}: not a run log")
        if parts[1] != f"v{SCHEMA_VERSION}":
            raise SchemaError(f"{path}: unsupported run-log version {parts[1]}")
        meta = dict(kv.split("=", 1) for kv in fh.readline().lstrip("# ").split())
        reader = csv.DictReader(fh)
        if reader.fieldnames != ROW_FIELDS:
            raise SchemaError(f"{path}: unexpected columns")
        rows = []
        for r in reader:
            row = {}
            for k, v in r.items():
                if k == "status":
                    row[k] = v
                elif k in _INT_FIELDS:
                    row[k] = int(v)
                elif k in _BOOL_FIELDS:
                    row[k] = v == "1"
                else:
                    row[k] = float(v)
            rows.append(row)
    return RunLog(int(meta["seed"]), meta["algorithm"], meta["config_hash"],
                  meta["revision"], float(meta["normalizer"]), rows)


# -- checkpoints -------------------------------------------------------------

def save_bundle(path, hier: Hierarchy, config: ExperimentConfig, streams: Streams) -> None:
    """Six parameter sets, config text and generator states in one ``.npz``."""
    arrays = {}
    for name, params in hier.nets().items():
        arrays.update(params_to_arrays(params, prefix=f"{name}/"))
    arrays["config"] = np.array(config.to_text())
    arrays["rng_state"] = np.array(json.dumps(streams.state()))
    arrays["seed"] = np.array(streams.seed, dtype=np.int64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_bundle(path) -> tuple:
    """Returns ``(hierarchy, config, streams)``; streams resume at the saved state."""
    with np.load(path, allow_pickle=False) as z:
        config = from_text(str(z["config"]))
        nets = {name: params_from_arrays(z, prefix=f"{name}/") for name in Hierarchy.NETS}
        streams = Streams(int(z["seed"]))
        streams.set_state(json.loads(str(z["rng_state"])))
    hier = Hierarchy(**nets, config=config.effective_hierarchy)
    return hier, config, streams


# -- runs --------------------------------------------------------------------

@dataclass
class RunResult:
    log: RunLog
    hierarchy: Hierarchy
    selections: list = field(default_factory=list)  # per iteration: (controllers, flags)
    paths: dict = field(default_factory=dict)


def run_seed(config: ExperimentConfig, seed: int, output_dir: Optional[str] = None,
             on_iteration: Optional[Callable] = None) -> RunResult:
    """Train one seed; every iteration ends with attack-free deterministic eval."""
    out = None
    if output_dir is not None:
        out = Path(output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            probe = out / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise OSError(f"output directory {out} is not writable: {exc}") from exc

    started = time.time()
    streams = Streams(seed)
    hcfg = config.effective_hierarchy
    hier = init_hierarchy(config.env, hcfg, config.ppo, streams)
    runlog = RunLog(seed, config.algorithm, config.digest(), revision(), config.normalizer)
    result = RunResult(runlog, hier)
    stem = f"{config.algorithm}_seed{seed}"
    try:
        hier = pretrain_nominal(hier, config.env, config.pretrain_iterations, config.ppo, streams)
        runner = make_runner(config.env, config.attack, config.schedule.build(), streams, hcfg.h)
        for it in range(config.iterations):
            hier, report, traj = train_iteration(hier, runner, config.ppo, streams, it,
                                                 config.eval_episodes)
            runlog.append(report)
            if config.record_selections:
                result.selections.append((traj.controllers.copy(), traj.attack_flags.copy()))
            if on_iteration is not None:
                on_iteration(report)
            log.debug("seed %d it %d train %.1f eval %.1f", seed, it,
                      report.train_return, report.eval_return)
    except FloatingPointError as exc:
        nan = float("nan")
        runlog.rows.append({"status": "numerical_failure",
                            **{f.name: (len(runlog.rows) if f.name == "iteration" else
                                        0 if f.name in _INT_FIELDS else
                                        False if f.name in _BOOL_FIELDS else nan)
                               for f in fields(IterationReport)}})
        if out is not None:
            write_runlog(runlog, out / f"{stem}.csv")
        raise NumericalFailure(f"seed {seed}: {exc}") from exc
    result.hierarchy = hier

    if out is not None:
        paths = {"log": out / f"{stem}.csv"}
        write_runlog(runlog, paths["log"])
        if config.record_selections:
            paths["selections"] = out / f"{stem}.selections.csv"
            write_selections(result.selections, paths["selections"])
        if config.save_checkpoint:
            paths["checkpoint"] = out / f"{stem}.npz"
            save_bundle(paths["checkpoint"], hier, config, streams)
        paths["meta"] = out / f"{stem}.meta.json"
        paths["meta"].write_text(json.dumps({
            "wall_clock_s": time.time() - started,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "host": platform.node(),
            "python": platform.python_version(),
            "config_hash": runlog.config_hash,
        }, indent=2) + "\n")
        result.paths = {k: str(v) for k, v in paths.items()}
    return result


def run(config: ExperimentConfig, output_dir: Optional[str] = None) -> list:
    """All seeds of ``config`` sequentially."""
    return [run_seed(config, s, output_dir if output_dir is not None else config.output_dir)
            for s in config.seeds]


def write_selections(selections, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "step", "controller", "attack_flag"])
        for it, (ctrl, flags) in enumerate(selections):
            for t in range(ctrl.size):
                w.writerow([it, t, int(ctrl[t]), int(flags[t])])


def read_selections(path) -> tuple:
    """Returns (iteration, step, controller, attack_flag) integer arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if data.size == 0:
        return tuple(np.zeros(0, dtype=np.int64) for _ in range(4))
    return data[:, 0], data[:, 1], data[:, 2], data[:, 3]


# -- normalization -----------------------------------------------------------

@dataclass
class Normalized:
    values: np.ndarray
    above_max: np.ndarray  # reporting flag only; values are never clipped


def normalize_returns(returns, baseline_max: float, tolerance: float = 0.05) -> Normalized:
    if baseline_max <= 0:
        raise ValueError("baseline_max must be positive")
    v = np.asarray(returns, dtype=np.float64) / baseline_max
    return Normalized(v, v > 1.0 + tolerance)


def final_value(series, window: int = 10) -> float:
    """Mean over the last ``window`` entries."""
    s = np.asarray(series, dtype=np.float64)
    return float(np.mean(s[-window:])) if s.size else float("nan")


def selection_accuracy(selections, start_fraction: float = 0.75) -> float:
    """Fraction of steps where the chosen sub-policy matches the attack flag,
    over iterations from ``start_fraction`` of the run onward."""
    if not selections:
        return float("nan")
    k = int(len(selections) * start_fraction)
    ctrl = np.concatenate([c for c, _ in selections[k:]])
    flags = np.concatenate([f for _, f in selections[k:]])
    return float(np.mean(ctrl == flags.astype(np.int64)))
