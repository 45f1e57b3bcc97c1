"""Mean-intensity and score-map features, 2-D embeddings and error overlays."""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.manifold import TSNE

from .metrics import ScoredSample
from .model import FCN, forward, predict_maps


class FeatureKind(str, enum.Enum):
    MEAN_INTENSITY = "MEAN_INTENSITY"
    SCORE_MAP = "SCORE_MAP"


@dataclass(frozen=True)
class FeatureVector:
    sample_id: str
    values: np.ndarray
    kind: FeatureKind


def mean_intensity(cube: np.ndarray, sample_id: str = "") -> FeatureVector:
    cube = np.asarray(cube, dtype=np.float64)
    return FeatureVector(sample_id, cube.reshape(cube.shape[0], -1).mean(axis=1), FeatureKind.MEAN_INTENSITY)


def score_map_features(model: FCN, cube: np.ndarray, sample_id: str = "") -> FeatureVector:
    return FeatureVector(sample_id, forward(model, cube).values.ravel(), FeatureKind.SCORE_MAP)


def score_map_feature_matrix(model: FCN, cubes: np.ndarray) -> np.ndarray:
    maps = predict_maps(model, cubes)
    return maps.reshape(len(maps), -1)


def embed_2d(features: Sequence[FeatureVector] | np.ndarray, perplexity: float = 30.0, seed: int = 0,
             n_iter: int = 1000) -> np.ndarray:
    """t-SNE to 2-D with random initialisation; deterministic for a given seed.

    Each point's random start is drawn from a stream keyed by the seed and the
    point's own values, so identical feature vectors start (and stay) together.
    """
    x = np.stack([f.values for f in features]) if not isinstance(features, np.ndarray) else features
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3 * perplexity:
        raise ValueError(f"need >= {3 * perplexity:g} samples for perplexity {perplexity:g}, got {len(x)}")
    init = np.stack([_start(row, seed) for row in x]).astype(np.float32)
    tsne = TSNE(n_components=2, perplexity=perplexity, init=init, random_state=seed,
                max_iter=n_iter, method="exact" if len(x) < 200 else "barnes_hut")
    return tsne.fit_transform(x)


def _start(row: np.ndarray, seed: int) -> np.ndarray:
    key = int.from_bytes(hashlib.sha256(np.ascontiguousarray(row).tobytes()).digest()[:8], "little")
    return 1e-4 * np.random.default_rng([seed, key]).standard_normal(2)


@dataclass(frozen=True)
class OverlayRow:
    sample_id: str
    x: float
    y: float
    label: int
    predicted: int
    pai_code: str

    @property
    def misclassified(self) -> bool:
        return self.label != self.predicted


def misclassification_overlay(samples: Sequence[ScoredSample], coords: np.ndarray, threshold: float,
                              pai_codes: Mapping[str, str] | None = None) -> list[OverlayRow]:
    """Label each embedded sample with its decision at ``threshold`` (attack if score >= threshold)."""
    coords = np.asarray(coords)
    if len(coords) != len(samples):
        raise ValueError("one coordinate pair per sample is required")
    pai_codes = pai_codes or {}
    return [
        OverlayRow(s.sample_id, float(xy[0]), float(xy[1]), int(s.label), int(s.score >= threshold),
                   pai_codes.get(s.sample_id, "bona-fide" if s.label == 0 else ""))
        for s, xy in zip(samples, coords)
    ]


def write_overlay_csv(rows: Sequence[OverlayRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "x", "y", "label", "predicted_at_eer", "misclassified", "pai_code"])
        for r in rows:
            w.writerow([r.sample_id, repr(r.x), repr(r.y), r.label, r.predicted, int(r.misclassified), r.pai_code])


def write_features_csv(ids: Sequence[str], matrix: np.ndarray, path: str | Path, prefix: str = "f") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id"] + [f"{prefix}{i}" for i in range(matrix.shape[1])])
        for sid, row in zip(ids, matrix):
            w.writerow([sid] + [repr(float(v)) for v in row])
