"""Combined GAP-level and patch-level binary cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

EPS = 1e-7
DEFAULT_LAMBDA = 10.0


@dataclass(frozen=True)
class LossBreakdown:
    l_gap: float
    l_patch: float
    lam: float
    total: float


def bce(p, t):
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    return -(t * np.log(p) + (1 - t) * np.log1p(-p))


def _values(score_map) -> np.ndarray:
    return np.asarray(getattr(score_map, "values", score_map), dtype=np.float64)


def loss_gap(score_map, t: int) -> float:
    return float(bce(_values(score_map).mean(), t))


def loss_patch(score_map, t: int) -> float:
    return float(bce(_values(score_map), t).mean())


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")


def total_loss(score_map, t: int, lam: float = DEFAULT_LAMBDA) -> LossBreakdown:
    _check_lambda(lam)
    g, p = loss_gap(score_map, t), loss_patch(score_map, t)
    return LossBreakdown(g, p, lam, g + lam * p)


def _bce_t(p: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    p = p.clamp(EPS, 1 - EPS)
    return -(t * torch.log(p) + (1 - t) * torch.log1p(-p))


def batch_loss(maps: torch.Tensor, targets: torch.Tensor, lam: float = DEFAULT_LAMBDA):
    """Differentiable losses for (B, H_m, W_m) maps; each is the mean over samples.

    Returns ``(total, l_gap, l_patch)`` as scalar tensors.
    """
    _check_lambda(lam)
    t = targets.to(maps.dtype)
    flat = maps.reshape(maps.shape[0], -1)
    l_gap = _bce_t(flat.mean(dim=1), t)
    l_patch = _bce_t(flat, t[:, None]).mean(dim=1)
    return (l_gap + lam * l_patch).mean(), l_gap.mean(), l_patch.mean()
