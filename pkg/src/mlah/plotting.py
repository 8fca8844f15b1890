"""Plot-ready files from a run log.

``emit_plot_data`` writes, next to each other::

    <stem>.returns.csv   timesteps, train/eval returns (raw and normalized),
                         attack_frac and a 0/1 attack_shade column
    <stem>.raster.csv    iteration, step, controller, attack_flag, agree
                         (only when a selections file exists)
    <stem>.summary.svg   returns with shaded attack intervals, plus the
                         selection/flag agreement over time

All outputs depend only on the input files, so re-emitting is byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .harness import read_runlog, read_selections

RASTER_BINS = 400


def _selections_path(log_path: Path) -> Path:
    return log_path.with_name(log_path.name[: -len(".csv")] + ".selections.csv")


def emit_plot_data(log_path, out_dir=None, selections_path=None) -> dict:
    """Write returns/raster CSVs and an SVG summary; returns the written paths."""
    log_path = Path(log_path)
    runlog = read_runlog(log_path)
    rows = [r for r in runlog.rows if r["status"] == "ok"]
    if not rows:
        raise ValueError(f"{log_path}: run log has no completed iterations")
    out = Path(out_dir) if out_dir is not None else log_path.parent
    out.mkdir(parents=True, exist_ok=True)
    stem = log_path.name[: -len(".csv")] if log_path.name.endswith(".csv") else log_path.name
    paths = {"returns": out / f"{stem}.returns.csv"}

    norm = runlog.normalizer
    with open(paths["returns"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "timesteps", "train_return", "eval_return",
                    "train_norm", "eval_norm", "attack_frac", "attack_shade"])
        for r in rows:
            w.writerow([r["iteration"], r["timesteps"], repr(r["train_return"]),
                        repr(r["eval_return"]), repr(r["train_return"] / norm),
                        repr(r["eval_return"] / norm), repr(r["attack_frac"]),
                        int(r["attack_frac"] > 0)])

    sel = None
    sel_path = Path(selections_path) if selections_path else _selections_path(log_path)
    if sel_path.exists():
        sel = read_selections(sel_path)
        if sel[0].size:
            paths["raster"] = out / f"{stem}.raster.csv"
            it, step, ctrl, flag = sel
            with open(paths["raster"], "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "step", "controller", "attack_flag", "agree"])
                for row in zip(it, step, ctrl, flag, (ctrl == flag).astype(int)):
                    w.writerow([int(v) for v in row])
        else:
            sel = None

    paths["summary"] = out / f"{stem}.summary.svg"
    _render_summary(rows, norm, sel, paths["summary"], title=stem)
    return {k: str(v) for k, v in paths.items()}


def _block_means(x: np.ndarray, bins: int) -> np.ndarray:
    edges = np.linspace(0, x.size, min(bins, x.size) + 1).astype(int)
    return np.array([x[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])


def _render_summary(rows, norm: float, sel: Optional[tuple], path: Path, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "mlah"
    ts = np.array([r["timesteps"] for r in rows], dtype=float)
    ev = np.array([r["eval_return"] for r in rows]) / norm
    tr = np.array([r["train_return"] for r in rows]) / norm
    shade = np.array([r["attack_frac"] for r in rows])

    n_ax = 2 if sel is not None else 1
    fig, axes = plt.subplots(n_ax, 1, figsize=(7, 2.6 * n_ax), squeeze=False)
    ax = axes[0, 0]
    prev = np.concatenate([[0.0], ts[:-1]])
    for a, b, s in zip(prev, ts, shade):
        if s > 0:
            ax.axvspan(a, b, color="tab:red", alpha=0.15 * s + 0.05, lw=0)
    ax.plot(ts, ev, label="eval (attack-free)", color="tab:blue")
    ax.plot(ts, tr, label="train", color="tab:orange")
    ax.set_xlabel("timesteps")
    ax.set_ylabel("normalized return")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)

    if sel is not None:
        _, _, ctrl, flag = sel
        ax = axes[1, 0]
        x = np.linspace(0, 1, min(RASTER_BINS, ctrl.size)) * ctrl.size
        ax.fill_between(x, _block_means(flag.astype(float), RASTER_BINS), step="mid",
                        color="tab:red", alpha=0.3, label="attack flag")
        ax.plot(x, _block_means(ctrl.astype(float), RASTER_BINS), color="k", lw=0.8,
                drawstyle="steps-mid", label="adversarial policy chosen")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("recorded step")
        ax.set_ylabel("fraction per bin")
        ax.legend(loc="upper right", fontsize=8)

    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
