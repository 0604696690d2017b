"""Figures for the benchmark report, rendered to PNG files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training(train_reports: dict, path) -> None:
    """Validation Delta-L and training loss per epoch for each model."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 4))
    for target, rep in train_reports.items():
        name = getattr(target, "value", target)
        ep = np.arange(1, rep.epochs_run + 1)
        a1.semilogy(ep, rep.epoch_val_delta_l, label=name)
        a2.semilogy(ep, rep.epoch_train_loss, label=name)
    a1.set(xlabel="epoch", ylabel="validation dL (%)")
    a2.set(xlabel="epoch", ylabel="training loss")
    for a in (a1, a2):
        a.grid(True, which="both", alpha=0.3)
        a.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_iterations(records, path) -> None:
    """Histogram of Newton iterations per test sample, warm vs hot start."""
    warm = np.array([r.n_warm for r in records])
    hot = np.array([r.iterations for r in records if r.converged])
    top = int(max(warm.max(initial=0), hot.max(initial=0)))
    bins = np.arange(-0.5, top + 1.5)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist([warm, hot], bins=bins, label=["warm start", "hot start"])
    ax.set(xlabel="Newton iterations", ylabel="test samples")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_timing(reports, path) -> None:
    """Average solve time per T: warm AC next to the stacked hot-start parts."""
    fig, ax = plt.subplots(figsize=(max(5, 1.6 * len(reports) + 2), 4))
    x = np.arange(len(reports))
    w = 0.38
    ax.bar(x - w / 2, [r.warm.t_avg for r in reports], w, label="warm: AC")
    bottom = np.zeros(len(reports))
    for key, label in (("t_dc", "hot: DC"), ("t_inf", "hot: inference"), ("t_ac", "hot: AC")):
        vals = np.array([getattr(r.hot, key) for r in reports])
        ax.bar(x + w / 2, vals, w, bottom=bottom, label=label)
        bottom += vals
    ax.set_xticks(x, [f"T={r.t}" for r in reports])
    ax.set_ylabel("t_avg (ms)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_delta_l(reports, path) -> None:
    """Hot-start Delta-L and average iterations against the training-set size."""
    ts = [r.t for r in reports]
    fig, a1 = plt.subplots(figsize=(6, 4))
    a1.semilogy(ts, [r.hot.delta_l for r in reports], "o-", color="C0")
    a1.set(xlabel="T", ylabel="dL (%)")
    a2 = a1.twinx()
    a2.plot(ts, [r.hot.avg_iter for r in reports], "s--", color="C1")
    a2.plot(ts, [r.warm.avg_iter for r in reports], ":", color="C2")
    a2.set_ylabel("avg. iterations (hot dashed, warm dotted)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_all(reports, out_dir, records=None, train_reports=None) -> dict:
    """Write every applicable figure; ``records`` and ``train_reports`` are keyed by T."""
    out = Path(out_dir)
    paths = {"fig_timing": out / "timing.png"}
    plot_timing(reports, paths["fig_timing"])
    if len(reports) > 1:
        paths["fig_delta_l"] = out / "delta_l_vs_t.png"
        plot_delta_l(reports, paths["fig_delta_l"])
    for t, recs in (records or {}).items():
        paths[f"fig_iterations_T{t}"] = out / f"iterations_T{t}.png"
        plot_iterations(recs, paths[f"fig_iterations_T{t}"])
    for t, reps in (train_reports or {}).items():
        paths[f"fig_training_T{t}"] = out / f"training_T{t}.png"
        plot_training(reps, paths[f"fig_training_T{t}"])
    return paths
