"""Summaries and plot emission for episode logs, accuracy and training reports.

Everything renders to files (CSV summaries, PNG figures); nothing opens a
display.  Malformed inputs fail loudly with the offending file and row.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "read_csv_rows",
    "summarize_episode_logs",
    "write_summary_csv",
    "plot_accuracy_report",
    "plot_eval_report",
    "plot_training_diagnostics",
    "report_and_plot",
]


def read_csv_rows(path, required: tuple[str, ...]) -> list[dict]:
    """Read a CSV and parse the required columns as floats, naming bad rows."""
    rows = []
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            parsed = dict(row)
            for col in required:
                try:
                    parsed[col] = float(row[col])
                except (TypeError, ValueError) as exc:
                    raise ValueError(
                        f"{path}: row {lineno}: column {col!r} is not numeric: {row[col]!r}"
                    ) from exc
            rows.append(parsed)
    return rows


EPISODE_COLUMNS = ("chunk", "r_in", "r_out", "l_c", "q1", "q2", "q3", "qoe_total", "buffer")


def summarize_episode_logs(paths) -> list[dict]:
    """Per-episode means of the QoE terms plus stall and bitrate statistics."""
    summaries = []
    for path in paths:
        rows = read_csv_rows(path, EPISODE_COLUMNS)
        if not rows:
            continue
        arr = {col: np.array([r[col] for r in rows]) for col in EPISODE_COLUMNS}
        summaries.append({
            "episode": Path(path).stem,
            "chunks": len(rows),
            "mean_qoe": float(arr["qoe_total"].mean()),
            "mean_q1": float(arr["q1"].mean()),
            "mean_q2": float(arr["q2"].mean()),
            "mean_q3": float(arr["q3"].mean()),
            "mean_r_in": float(arr["r_in"].mean()),
            "mean_r_out": float(arr["r_out"].mean()),
            "total_stall": float(arr["q3"].sum()),
            "mean_buffer": float(arr["buffer"].mean()),
        })
    return summaries


SUMMARY_HEADER = ["episode", "chunks", "mean_qoe", "mean_q1", "mean_q2", "mean_q3",
                  "mean_r_in", "mean_r_out", "total_stall", "mean_buffer"]


def write_summary_csv(path, summaries: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        writer.writeheader()
        for row in summaries:
            writer.writerow({k: _fmt(row[k]) for k in SUMMARY_HEADER})


def _fmt(value) -> str:
    return f"{value:.9g}" if isinstance(value, float) else str(value)


def plot_accuracy_report(report_csv, out_png) -> None:
    """Accuracy-versus-horizon curves, one line per viewing-pattern family."""
    rows = read_csv_rows(report_csv, ("horizon_step", "mean_iou"))
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    families = sorted({r.get("family", "all") for r in rows})
    for family in families:
        fam_rows = sorted((r for r in rows if r.get("family", "all") == family),
                          key=lambda r: r["horizon_step"])
        ax.plot([r["horizon_step"] for r in fam_rows], [r["mean_iou"] for r in fam_rows],
                marker="o", label=family)
    ax.set_xlabel("horizon step")
    ax.set_ylabel("mean IoU")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_eval_report(report_csv, out_png) -> None:
    """Per-preference QoE bars with the three-term breakdown."""
    rows = read_csv_rows(report_csv, ("pref_index", "mean_qoe", "mean_q1", "mean_q2",
                                      "mean_q3"))
    if not rows:
        return
    prefs = sorted({int(r["pref_index"]) for r in rows})
    means = {key: [] for key in ("mean_qoe", "mean_q1", "mean_q2", "mean_q3")}
    for p in prefs:
        sub = [r for r in rows if int(r["pref_index"]) == p]
        for key in means:
            means[key].append(float(np.mean([r[key] for r in sub])))
    x = np.arange(len(prefs))
    width = 0.2
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, (key, label) in enumerate([("mean_qoe", "QoE total"), ("mean_q1", "quality"),
                                      ("mean_q2", "variation"), ("mean_q3", "rebuffer")]):
        ax.bar(x + (i - 1.5) * width, means[key], width, label=label)
    ax.set_xticks(x, [f"pref {p}" for p in prefs])
    ax.set_ylabel("mean value")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def plot_training_diagnostics(diag_csv, out_png) -> None:
    """Reward and identifier-error convergence curves."""
    rows = read_csv_rows(diag_csv, ("iter", "mean_reward"))
    if not rows:
        return
    iters = [r["iter"] for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(iters, [r["mean_reward"] for r in rows])
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("mean reward")
    axes[0].grid(alpha=0.3)
    mses = [float(r["identifier_mse"]) for r in rows
            if r.get("identifier_mse") not in (None, "")]
    if mses:
        axes[1].plot(iters[: len(mses)], mses, color="tab:orange")
        axes[1].set_xlabel("iteration")
        axes[1].set_ylabel("identifier MSE")
        axes[1].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def report_and_plot(in_csv, out_png) -> None:
    """Dispatch on the CSV header and emit the matching figure."""
    with Path(in_csv).open(newline="") as fh:
        header = set(next(csv.reader(fh), []))
    if {"family", "horizon_step", "mean_iou"} <= header:
        plot_accuracy_report(in_csv, out_png)
    elif {"pref_index", "mean_qoe"} <= header:
        plot_eval_report(in_csv, out_png)
    elif {"iter", "mean_reward"} <= header:
        plot_training_diagnostics(in_csv, out_png)
    else:
        raise ValueError(f"{in_csv}: unrecognized report header {sorted(header)}")
