"""Train/evaluate folds of a split plan for one or many modality selections."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import DatasetManifest, Modality, ModalitySelection, SampleRecord, channel_count
from .metrics import EvaluationReport, ScoredSample, aggregate, evaluate
from .model import FCN, ModelConfig, build_model, predict_scores
from .preprocess import MissingModalityError, RoiSpec, modality_channels
from .protocols import Fold, SplitPlan
from .tensorio import read_blob
from .train import TrainConfig, TrainHistory, train

log = logging.getLogger(__name__)


class CubeStore:
    """Caches preprocessed channels per (sample, modality) so every selection reuses them."""

    def __init__(self, records: Sequence[SampleRecord], rois: Mapping[Modality, RoiSpec] | None = None):
        self.records = {r.sample_id: r for r in records}
        self.rois = dict(rois or {})
        self._cache: dict[tuple[str, Modality], np.ndarray] = {}

    def channels(self, sample_id: str, mod: Modality) -> np.ndarray:
        key = (sample_id, mod)
        if key not in self._cache:
            rec = self.records[sample_id]
            if mod not in rec.tensor_refs:
                raise MissingModalityError(f"{sample_id}: no tensor for {mod.value}")
            raw = read_blob(rec.tensor_refs[mod])
            self._cache[key] = modality_channels(mod, raw, self.rois.get(mod)).astype(np.float32)
        return self._cache[key]

    def cubes(self, sample_ids: Sequence[str], sel: ModalitySelection) -> np.ndarray:
        if not sample_ids:
            return np.zeros((0, channel_count(sel), 80, 160), np.float32)
        return np.stack([np.concatenate([self.channels(s, m) for m in sel.ordered]) for s in sample_ids])

    def labels(self, sample_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.records[s].ground_truth for s in sample_ids], dtype=np.float32)


@dataclass
class FoldResult:
    fold: str
    selection: str
    report: EvaluationReport
    scores: list[ScoredSample]
    history: TrainHistory
    model: FCN


def run_fold(store: CubeStore, fold: Fold, sel: ModalitySelection, model_cfg: ModelConfig,
             train_cfg: TrainConfig, fold_index: int = 0) -> FoldResult:
    model_cfg = dataclasses.replace(model_cfg, input_channels=channel_count(sel))
    seed = train_cfg.seed + fold_index
    model = build_model(model_cfg, seed=seed)
    tr_ids, va_ids, te_ids = list(fold.train), list(fold.val), list(fold.test)
    val = (store.cubes(va_ids, sel), store.labels(va_ids)) if va_ids else None
    model, history = train(model, (store.cubes(tr_ids, sel), store.labels(tr_ids)), val,
                           dataclasses.replace(train_cfg, seed=seed))
    test_x = store.cubes(te_ids, sel)
    scores = predict_scores(model, test_x)
    labels = store.labels(te_ids).astype(int)
    report = evaluate(scores, labels)
    log.info("%s %s: AUC %.4f TPR0.2%% %.4f BPCER20 %.4f", sel.label, fold.name, report.auc,
             report.tpr_at_fpr_002, report.bpcer20)
    scored = [ScoredSample(s, float(v), int(t)) for s, v, t in zip(te_ids, scores, labels)]
    return FoldResult(fold.name, sel.label, report, scored, history, model)


def run_plan(manifest: DatasetManifest, plan: SplitPlan, sel: ModalitySelection, model_cfg: ModelConfig,
             train_cfg: TrainConfig, store: CubeStore | None = None) -> list[FoldResult]:
    store = store or CubeStore(manifest.records)
    return [run_fold(store, f, sel, model_cfg, train_cfg, i) for i, f in enumerate(plan.folds)]


def sweep_row(sel: ModalitySelection, results: Sequence[FoldResult]) -> dict:
    row = {"selection": sel.label, "channels": channel_count(sel), "folds": len(results)}
    for name, stats in aggregate([r.report for r in results]).items():
        row[f"{name}_mean"] = stats["mean"]
        row[f"{name}_std"] = stats["std"]
    return row
