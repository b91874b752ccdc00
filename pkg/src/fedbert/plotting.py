"""Figures for a finished run, written next to the TSV outputs."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .attention import AttentionProfile, mds_project_2d  # noqa: E402


def plot_attention(profiles: Sequence[AttentionProfile], path) -> Path:
    """Per model: head entropy by layer (left) and a 2-D MDS map of heads (right)."""
    n = len(profiles)
    fig, axes = plt.subplots(n, 2, figsize=(9, 3.2 * n), squeeze=False)
    for row, prof in zip(axes, profiles):
        L, A = prof.entropy.shape
        ax = row[0]
        for a in range(A):
            ax.plot(np.arange(1, L + 1), prof.entropy[:, a], "o-", alpha=0.7, label=f"head {a}")
        ax.axhline(np.log(prof.max_len), color="grey", ls=":", lw=1, label="uniform bound")
        ax.set_xticks(np.arange(1, L + 1))
        ax.set_xlabel("layer")
        ax.set_ylabel("entropy (nats)")
        ax.set_title(f"{prof.tag}: attention entropy")

        ax = row[1]
        xy = mds_project_2d(prof.jsd_matrix)
        layer_of = np.repeat(np.arange(1, L + 1), A)
        sc = ax.scatter(xy[:, 0], xy[:, 1], c=layer_of, cmap="viridis", vmin=1, vmax=max(L, 2), s=40)
        for h, (x, y) in enumerate(xy):
            ax.annotate(f"{h // A + 1}.{h % A}", (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
        ax.set_title(f"{prof.tag}: heads by JSD (MDS)")
        ax.set_aspect("equal", adjustable="datalim")
        fig.colorbar(sc, ax=ax, label="layer", ticks=np.arange(1, L + 1))
    axes[0][0].legend(fontsize=7, loc="best")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _read_metrics(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _weighted(record: dict, key: str = "silo_losses") -> float:
    sizes = np.asarray(record["silo_sizes"], dtype=float)
    return float(np.dot(record[key], sizes) / sizes.sum())


def plot_training_curves(metrics_path, path) -> Path | None:
    """Sample-weighted silo loss per cycle, pre-training and fine-tuning side by side."""
    records = [r for r in _read_metrics(Path(metrics_path)) if "cycle" in r]
    if not records:
        return None
    curves: dict[str, dict[str, list]] = {"pretrain": defaultdict(list), "finetune": defaultdict(list)}
    for r in records:
        if r["stage"] == "pretrain":
            label, key = r["pretraining"], "silo_mlm_losses" if "silo_mlm_losses" in r else "silo_losses"
        else:
            label, key = f'{r["pretraining"]} / {r["fine_tuning"]}', "silo_losses"
        curves[r["stage"]][label].append((r["cycle"], _weighted(r, key)))
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.8))
    titles = {"pretrain": "pre-training (MLM loss)", "finetune": "fine-tuning (NER loss)"}
    for ax, stage in zip(axes, ("pretrain", "finetune")):
        for label, pts in curves[stage].items():
            cyc, loss = zip(*pts)
            ax.plot(cyc, loss, "o-", label=label)
        ax.set_xlabel("cycle / epoch")
        ax.set_ylabel("loss")
        ax.set_title(titles[stage])
        if curves[stage]:
            ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_results(rows, path) -> Path | None:
    """Grouped precision / recall / F1 bars, one group per experiment."""
    if not rows:
        return None
    labels = [f"{r.pretraining}\n{r.fine_tuning}" for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(max(6, 1.4 * len(rows)), 4))
    for k, (name, attr) in enumerate((("precision", "prec"), ("recall", "rec"), ("F1", "f1"))):
        ax.bar(x + (k - 1) * 0.27, [getattr(r, attr) for r in rows], 0.27, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("span-level score")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def render_report(out_dir, profiles: Sequence[AttentionProfile] = ()) -> list[Path]:
    """Render every figure whose inputs exist in ``out_dir``; returns the files written."""
    from .experiments import read_results

    out = Path(out_dir)
    written = []
    results = out / "results.tsv"
    if results.exists():
        written.append(plot_results(read_results(results), out / "results.png"))
    written.append(plot_training_curves(out / "metrics.jsonl", out / "training_curves.png"))
    if profiles:
        written.append(plot_attention(profiles, out / "attention.png"))
    return [p for p in written if p is not None]
