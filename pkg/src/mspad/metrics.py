"""Threshold-free PAD metrics computed from ROC vertices.

Attacks are the positive class and a sample is called an attack when its
score is >= the threshold, so FPR equals BPCER and 1 - TPR equals APCER.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

TOL = 1e-12


@dataclass(frozen=True)
class ScoredSample:
    sample_id: str
    score: float
    label: int


@dataclass(frozen=True)
class Roc:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf (nothing called an attack)
    n_bf: int
    n_pa: int

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def _arrays(scores, labels=None) -> tuple[np.ndarray, np.ndarray]:
    if labels is None:
        samples: Sequence[ScoredSample] = scores
        scores = [s.score for s in samples]
        labels = [s.label for s in samples]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (bona-fide) or 1 (attack)")
    return s, y


def roc_curve(scores, labels=None) -> Roc:
    """One vertex per distinct score, plus the (0, 0) start. Ends at (1, 1)."""
    s, y = _arrays(scores, labels)
    n_pa = int(y.sum())
    n_bf = len(y) - n_pa
    if n_pa == 0 or n_bf == 0:
        raise ValueError("ROC needs at least one bona-fide and one attack sample")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    return Roc(
        fpr=np.r_[0.0, fp[last] / n_bf],
        tpr=np.r_[0.0, tp[last] / n_pa],
        thresholds=np.r_[np.inf, s[last]],
        n_bf=n_bf,
        n_pa=n_pa,
    )


def auc(roc: Roc) -> float:
    return float(np.sum(np.diff(roc.fpr) * (roc.tpr[1:] + roc.tpr[:-1]) / 2))


def tpr_at_fpr(roc: Roc, fpr_target: float = 0.002) -> float:
    """Best TPR over operating points whose FPR does not exceed the target."""
    return float(roc.tpr[roc.fpr <= fpr_target + TOL].max())


def bpcer_at_apcer(roc: Roc, apcer_target: float = 0.05) -> float:
    """Lowest BPCER over operating points whose APCER does not exceed the target.

    With fewer than 1/target attacks the attainable APCER values are coarser
    than the target; the same rule applies.
    """
    return float(roc.fpr[(1 - roc.tpr) <= apcer_target + TOL].min())


def eer(roc: Roc) -> float:
    """Rate where BPCER equals APCER, interpolated linearly between vertices."""
    d = roc.fpr - (1 - roc.tpr)  # strictly increasing from -1 to 1
    k = int(np.argmax(d >= 0))
    if d[k] == 0:
        return float(roc.fpr[k])
    w = d[k - 1] / (d[k - 1] - d[k])
    return float(roc.fpr[k - 1] + w * (roc.fpr[k] - roc.fpr[k - 1]))


def accuracy_at_threshold(scores, labels=None, tau: float = 0.5) -> float:
    s, y = _arrays(scores, labels)
    if len(s) == 0:
        raise ValueError("no samples")
    return float(np.mean((s >= tau).astype(int) == y))


def threshold_at_eer(roc: Roc) -> float:
    """Score threshold of the ROC vertex closest to the equal-error point."""
    d = np.abs(roc.fpr - (1 - roc.tpr))
    k = int(np.argmin(d[1:])) + 1
    return float(roc.thresholds[k])


@dataclass
class EvaluationReport:
    roc: Roc
    auc: float
    tpr_at_fpr_002: float
    bpcer20: float
    eer: float
    accuracy_at_05: float
    n_bf: int
    n_pa: int

    def as_dict(self, include_roc: bool = True) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "roc"}
        if include_roc:
            out["roc"] = [list(p) for p in self.roc.points()]
        return out

    def write_json(self, path: str | Path) -> None:
        d = self.as_dict()
        d["roc"] = [[f, t, None if np.isinf(th) else th] for f, t, th in d["roc"]]
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    def write_roc_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in self.roc.points():
                w.writerow([repr(f), repr(t), "inf" if np.isinf(th) else repr(th)])


def evaluate(scores, labels=None) -> EvaluationReport:
    s, y = _arrays(scores, labels)
    roc = roc_curve(s, y)
    return EvaluationReport(
        roc=roc,
        auc=auc(roc),
        tpr_at_fpr_002=tpr_at_fpr(roc, 0.002),
        bpcer20=bpcer_at_apcer(roc, 0.05),
        eer=eer(roc),
        accuracy_at_05=accuracy_at_threshold(s, y, 0.5),
        n_bf=roc.n_bf,
        n_pa=roc.n_pa,
    )


METRIC_NAMES = ("auc", "tpr_at_fpr_002", "bpcer20", "eer", "accuracy_at_05")


def aggregate(reports: Sequence[EvaluationReport]) -> dict[str, dict[str, float]]:
    """Mean and standard deviation of each scalar metric across folds."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
