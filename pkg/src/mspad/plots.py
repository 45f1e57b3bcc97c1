"""Deterministic SVG figures: ROC panels and labelled 2-D scatters."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EvaluationReport  # noqa: E402

_RC = {"svg.hashsalt": "mspad", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> None:
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def roc_svg(reports: Mapping[str, EvaluationReport], path: str | Path, log_fpr: bool = False) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4.5))
        for name, rep in reports.items():
            fpr = rep.roc.fpr
            if log_fpr:
                fpr = np.maximum(fpr, 1e-4)
            ax.step(fpr, rep.roc.tpr, where="post",
                    label=f"{name}: AUC {rep.auc:.3f}, TPR0.2% {rep.tpr_at_fpr_002:.3f}, "
                          f"BPCER20 {rep.bpcer20:.3f}")
        if log_fpr:
            ax.set_xscale("log")
            ax.set_xlim(1e-4, 1)
        ax.set_xlabel("False positive rate (BPCER)")
        ax.set_ylabel("True positive rate (1 - APCER)")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=6, loc="lower right")
    _save(fig, path)


def scatter_svg(coords: np.ndarray, groups: Sequence[str], path: str | Path, title: str = "",
                highlight: Sequence[bool] | None = None) -> None:
    """Scatter coloured by group; highlighted points get a black ring."""
    coords = np.asarray(coords)
    groups = np.asarray(groups)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        cmap = plt.get_cmap("tab20")
        for i, g in enumerate(sorted(set(groups.tolist()))):
            sel = groups == g
            ax.scatter(coords[sel, 0], coords[sel, 1], s=8, color=cmap(i % 20), label=g)
        if highlight is not None:
            hl = np.asarray(highlight, dtype=bool)
            ax.scatter(coords[hl, 0], coords[hl, 1], s=40, facecolors="none", edgecolors="k",
                       linewidths=0.8, label="misclassified")
        ax.set_title(title, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        ax.legend(fontsize=5, markerscale=1.5, loc="best")
    _save(fig, path)


def sweep_svg(rows: Sequence[Mapping], path: str | Path) -> None:
    """Bar panel of mean AUC / TPR0.2% / BPCER20 per modality combination."""
    labels = [r["selection"] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rows)), 4))
        for k, (name, key) in enumerate((("AUC", "auc"), ("TPR0.2%", "tpr_at_fpr_002"), ("BPCER20", "bpcer20"))):
            ax.bar(x + (k - 1) * 0.27, [r[f"{key}_mean"] for r in rows], 0.27,
                   yerr=[r[f"{key}_std"] for r in rows], label=name)
        ax.set_xticks(x)
        ax.set_xticklabels([f"{lab}\n(C={r['channels']})" for lab, r in zip(labels, rows)], fontsize=5, rotation=45)
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=7)
    _save(fig, path)
