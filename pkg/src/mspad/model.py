"""Fully-convolutional score-map network.

Five conv blocks (ReLU after each) with batch norm after blocks 2 and 4, then a
1x1 conv + sigmoid giving one attack probability per receptive-field patch.
The PAD score is the global average of that map.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .tensorio import read_blob, write_blob


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int
    h: int = 16
    block_kernels: tuple[int, ...] = (4, 4, 4, 3, 3)
    block_strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    batchnorm_after_blocks: tuple[int, ...] = (2, 4)
    bn_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.input_channels < 1 or self.h < 1:
            raise ValueError(f"input_channels and h must be >= 1, got {self.input_channels}, {self.h}")
        if len(self.block_kernels) != len(self.block_strides):
            raise ValueError("block_kernels and block_strides differ in length")
        object.__setattr__(self, "block_kernels", tuple(self.block_kernels))
        object.__setattr__(self, "block_strides", tuple(self.block_strides))
        object.__setattr__(self, "batchnorm_after_blocks", tuple(self.batchnorm_after_blocks))

    @property
    def block_channels(self) -> tuple[int, ...]:
        return tuple(self.h * 2**i for i in range(len(self.block_kernels)))

    @property
    def paddings(self) -> tuple[int, ...]:
        return tuple((k - 1) // 2 for k in self.block_kernels)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


@dataclass
class ScoreMap:
    values: np.ndarray  # (H_m, W_m) rows x cols
    gap_score: float = field(init=False)

    def __post_init__(self) -> None:
        self.gap_score = float(np.mean(self.values))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


class FCN(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        c_in = cfg.input_channels
        for i, (k, s, p, c_out) in enumerate(
            zip(cfg.block_kernels, cfg.block_strides, cfg.paddings, cfg.block_channels), start=1
        ):
            layers += [nn.Conv2d(c_in, c_out, k, s, p), nn.ReLU()]
            if i in cfg.batchnorm_after_blocks:
                layers.append(nn.BatchNorm2d(c_out, momentum=cfg.bn_momentum))
            c_in = c_out
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(c_in, 1, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))[:, 0]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B, H_m, W_m) score maps in (0, 1)."""
        return torch.sigmoid(self.logits(x))


def build_model(cfg: ModelConfig, seed: int = 0) -> FCN:
    model = FCN(cfg)
    gen = torch.Generator().manual_seed(seed)
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu", generator=gen)
            nn.init.zeros_(m.bias)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def receptive_field(cfg: ModelConfig) -> int:
    r, j = 1, 1
    for k, s in zip(cfg.block_kernels, cfg.block_strides):
        r += (k - 1) * j
        j *= s
    return r  # the 1x1 head adds nothing


def score_map_size(cfg: ModelConfig, height: int = 80, width: int = 160) -> tuple[int, int]:
    """(H_m, W_m) for a given input size."""
    for k, s, p in zip(cfg.block_kernels, cfg.block_strides, cfg.paddings):
        height = (height + 2 * p - k) // s + 1
        width = (width + 2 * p - k) // s + 1
    return height, width


def receptive_window(cfg: ModelConfig, row: int, col: int) -> tuple[int, int, int, int]:
    """Inclusive input window (y0, y1, x0, x1) feeding score cell (row, col), before clipping to the image."""
    y0 = y1 = row
    x0 = x1 = col
    for k, s, p in reversed(list(zip(cfg.block_kernels, cfg.block_strides, cfg.paddings))):
        y0, y1 = y0 * s - p, y1 * s - p + k - 1
        x0, x1 = x0 * s - p, x1 * s - p + k - 1
    return y0, y1, x0, x1


def _as_batch(model: FCN, cube) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(cube))
    if x.ndim == 3:
        x = x[None]
    p = next(model.parameters())
    if x.shape[1] != model.cfg.input_channels:
        raise ValueError(f"cube has {x.shape[1]} channels, model expects {model.cfg.input_channels}")
    return x.to(dtype=p.dtype)


def forward(model: FCN, cube: np.ndarray) -> ScoreMap:
    """Score map of a single (C, H, W) cube, in evaluation mode."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        m = model(_as_batch(model, cube))[0].double().numpy()
    model.train(was_training)
    return ScoreMap(m)


def score(model: FCN, cube: np.ndarray) -> float:
    return forward(model, cube).gap_score


def predict_maps(model: FCN, cubes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Score maps (N, H_m, W_m) for a stack of cubes, in evaluation mode."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(cubes), batch_size):
            out.append(model(_as_batch(model, cubes[i:i + batch_size])).double().numpy())
    model.train(was_training)
    if not out:
        h, w = score_map_size(model.cfg, cubes.shape[-2], cubes.shape[-1])
        return np.zeros((0, h, w))
    return np.concatenate(out)


def predict_scores(model: FCN, cubes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    maps = predict_maps(model, cubes, batch_size)
    return maps.reshape(len(maps), -1).mean(axis=1)


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: FCN, directory: str | Path) -> None:
    """Write ``model.json`` plus one tensor container per float parameter/buffer."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    names = []
    for name, t in model.state_dict().items():
        if not t.is_floating_point():
            continue
        write_blob(directory / "params" / f"{name}.tns", t.detach().float().contiguous().numpy())
        names.append(name)
    meta = {"config": json.loads(model.cfg.to_json()), "tensors": names}
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory: str | Path, expect: ModelConfig | None = None) -> FCN:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    cfg = ModelConfig(**meta["config"])
    if expect is not None and expect != cfg:
        raise CheckpointError(f"checkpoint config {cfg} does not match expected {expect}")
    model = FCN(cfg)
    state = model.state_dict()
    wanted = {k for k, t in state.items() if t.is_floating_point()}
    if set(meta["tensors"]) != wanted:
        raise CheckpointError("checkpoint tensor names do not match the model layout")
    for name in meta["tensors"]:
        arr = read_blob(directory / "params" / f"{name}.tns")
        if tuple(arr.shape) != tuple(state[name].shape):
            raise CheckpointError(f"{name}: shape {arr.shape} != {tuple(state[name].shape)}")
        state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model
