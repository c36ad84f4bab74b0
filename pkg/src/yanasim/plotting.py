"""Render sweep results as figure files next to the CSV report."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (5.0, 3.4)


def _style(ax, xlabel, ylabel):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3, linewidth=0.5)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)


def plot_sweep(rows, out_dir, fmt: str = "png") -> list[Path]:
    """Plot aggregate sweep rows; returns the written paths.

    ``rows`` are dicts as written by the sweep command. Only rows whose
    ``sample_id`` is ``"aggregate"`` and whose status is ``ok`` are used.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = [r for r in rows if r["sample_id"] == "aggregate" and r["status"] == "ok"]
    if not agg:
        return []
    by_prune = defaultdict(list)
    by_drop = defaultdict(list)
    for r in agg:
        by_prune[float(r["prune_fraction"])].append(r)
        by_drop[float(r["drop_rate"])].append(r)
    written = []

    def ms(r):
        return float(r["wall_us"]) / 1000.0

    fig, ax = plt.subplots(figsize=FIGSIZE)
    for p, rs in sorted(by_prune.items()):
        rs = sorted(rs, key=lambda r: float(r["drop_rate"]))
        ax.plot([float(r["drop_rate"]) for r in rs], [ms(r) for r in rs], marker="o",
                markersize=3, label=f"prune {p:g}")
    _style(ax, "input drop rate", "inference time [ms]")
    ax.legend(fontsize=7, frameon=False)
    path = out_dir / f"time_vs_drop.{fmt}"
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=FIGSIZE)
    for q, rs in sorted(by_drop.items()):
        rs = sorted(rs, key=lambda r: float(r["prune_fraction"]))
        ax.plot([float(r["prune_fraction"]) for r in rs], [ms(r) for r in rs], marker="s",
                markersize=3, label=f"drop {q:g}")
    _style(ax, "pruned weight fraction", "inference time [ms]")
    ax.legend(fontsize=7, frameon=False, ncol=2)
    path = out_dir / f"time_vs_prune.{fmt}"
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.scatter([float(r["synaptic_events"]) for r in agg], [float(r["cycles"]) for r in agg], s=8)
    _style(ax, "synaptic events processed", "cycles")
    path = out_dir / f"cycles_vs_events.{fmt}"
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written
