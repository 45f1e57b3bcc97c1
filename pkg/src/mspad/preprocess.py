"""Raw frames to model-ready data cubes, plus legacy-image ROI detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .datamodel import Modality, ModalitySelection, SampleRecord, channel_count
from .tensorio import read_blob

CUBE_HEIGHT = 80
CUBE_WIDTH = 160


class NoFingerError(ValueError):
    pass


class MissingModalityError(KeyError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    x0: int
    y0: int
    width: int
    height: int

    def check(self, frame_height: int, frame_width: int) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"ROI must have positive size, got {self}")
        if self.x0 < 0 or self.y0 < 0 or self.x0 + self.width > frame_width or self.y0 + self.height > frame_height:
            raise ValueError(f"ROI {self} exceeds frame bounds {frame_width}x{frame_height}")


# width, height of the legacy-sensor ROI windows
LEGACY_ROI_PRESETS: dict[str, tuple[int, int]] = {
    "crossmatch": (320, 256),
    "greenbit": (320, 256),
    "hiscan": (600, 480),
    "persona": (260, 200),
}


def subtract_dark(illuminated: np.ndarray, dark: np.ndarray | None) -> np.ndarray:
    """Subtract the time-averaged dark frame of each channel, clamping at 0.

    ``dark`` holds ``k`` consecutive frames per illuminated channel (k >= 1).
    An empty or missing ``dark`` stack returns the input unchanged.
    """
    ill = np.asarray(illuminated, dtype=np.float64)
    if dark is None or len(dark) == 0:
        return ill
    dark = np.asarray(dark, dtype=np.float64)
    if ill.ndim != 3 or dark.ndim != 3 or ill.shape[1:] != dark.shape[1:]:
        raise ValueError(f"shape mismatch: illuminated {ill.shape} vs dark {dark.shape}")
    n, m = ill.shape[0], dark.shape[0]
    if m % n:
        raise ValueError(f"{m} dark frames cannot be split evenly over {n} channels")
    dark_mean = dark.reshape(n, m // n, *dark.shape[1:]).mean(axis=1)
    return np.maximum(ill - dark_mean, 0.0)


def normalize_bit_depth(frames: np.ndarray, bit_depth: int) -> np.ndarray:
    if bit_depth not in (8, 12, 16):
        raise ValueError(f"unsupported bit depth {bit_depth}")
    full = float(2**bit_depth - 1)
    arr = np.asarray(frames, dtype=np.float64)
    if arr.size and (arr.max() > full or arr.min() < 0):
        raise ValueError(f"values outside [0, {full:.0f}]; bit depth {bit_depth} looks mislabeled")
    return arr / full


def select_frames(modality: Modality, stack: np.ndarray) -> np.ndarray:
    spec = Modality(modality).spec
    if spec.selected is None:
        if len(stack) != spec.n_illuminated:
            raise ValueError(f"{spec.tag.value}: expected {spec.n_illuminated} frames, got {len(stack)}")
        return stack
    need = max(spec.selected) + 1
    if len(stack) < need:
        raise ValueError(f"{spec.tag.value}: insufficient frames ({len(stack)} < {need})")
    return stack[list(spec.selected)]


def crop_fixed_roi(frame: np.ndarray, roi: RoiSpec) -> np.ndarray:
    """Exact window copy; works on (H, W) and (..., H, W) arrays."""
    roi.check(frame.shape[-2], frame.shape[-1])
    return frame[..., roi.y0:roi.y0 + roi.height, roi.x0:roi.x0 + roi.width].copy()


def _disk(diameter: int) -> np.ndarray:
    r = (diameter - 1) / 2
    yy, xx = np.mgrid[:diameter, :diameter] - r
    return (xx**2 + yy**2) <= r**2


def legacy_roi_center(image: np.ndarray) -> tuple[float, float]:
    """Centroid (x, y) of the largest dark region after Otsu binarization and dilation."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("legacy image must be single-channel 2-D")
    fg = img < threshold_otsu(img) if img.min() < img.max() else np.zeros(img.shape, bool)
    if not fg.any():
        raise NoFingerError("no foreground pixels found")
    fg = ndimage.binary_dilation(fg, structure=_disk(7))
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), bool))
    sizes = np.bincount(labels.ravel())[1:]
    ys, xs = np.nonzero(labels == int(np.argmax(sizes)) + 1)
    return float(xs.mean()), float(ys.mean())


def legacy_roi(image: np.ndarray, preset: str | tuple[int, int]) -> np.ndarray:
    """Cut a preset-size window centered on the detected finger, clamped to the image.

    Windows larger than the image along an axis are padded with the image maximum
    (background).
    """
    w, h = LEGACY_ROI_PRESETS[preset] if isinstance(preset, str) else preset
    img = np.asarray(image)
    cx, cy = legacy_roi_center(img)
    H, W = img.shape
    if h > H or w > W:
        ph, pw = max(h - H, 0), max(w - W, 0)
        img = np.pad(img, ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)), constant_values=img.max())
        cx, cy = cx + pw // 2, cy + ph // 2
        H, W = img.shape
    x0 = int(np.clip(round(cx - w / 2), 0, W - w))
    y0 = int(np.clip(round(cy - h / 2), 0, H - h))
    return img[y0:y0 + h, x0:x0 + w].copy()


def cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    u = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(u).astype(int)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = base + tap
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), cubic_kernel(u - idx))
    return mat


def resize_bicubic(image: np.ndarray, out_w: int = CUBE_WIDTH, out_h: int = CUBE_HEIGHT) -> np.ndarray:
    """Catmull-Rom bicubic resize of (H, W) or (..., H, W), edge-clamped, output clipped to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim < 2 or img.shape[-1] < 4 or img.shape[-2] < 4:
        raise ValueError(f"input must be at least 4x4, got {img.shape}")
    wy = _resize_matrix(img.shape[-2], out_h)
    wx = _resize_matrix(img.shape[-1], out_w)
    out = np.einsum("oh,...hw,pw->...op", wy, img, wx, optimize=True)
    return np.clip(out, 0.0, 1.0)


Loader = Callable[[str], np.ndarray]


def modality_channels(
    modality: Modality,
    raw: np.ndarray,
    roi: RoiSpec | None = None,
) -> np.ndarray:
    """Run one modality's raw stack through the preprocessing chain."""
    spec = Modality(modality).spec
    if raw.ndim != 3:
        raise ValueError(f"{spec.tag.value}: raw stack must be 3-D, got {raw.shape}")
    n_ill = raw.shape[0] - spec.n_dark
    if n_ill <= 0:
        raise ValueError(f"{spec.tag.value}: stack of {raw.shape[0]} frames has no illuminated frames")
    frames = subtract_dark(raw[:n_ill], raw[n_ill:] if spec.n_dark else None)
    frames = normalize_bit_depth(frames, spec.bit_depth)
    frames = select_frames(modality, frames)
    if roi is not None:
        frames = crop_fixed_roi(frames, roi)
    return resize_bicubic(frames)


def build_cube(
    record: SampleRecord,
    sel: ModalitySelection,
    rois: Mapping[Modality, RoiSpec] | None = None,
    loader: Loader = read_blob,
) -> np.ndarray:
    """Stack the selected modalities of one sample into a (C, 80, 160) float32 cube."""
    parts = []
    for mod in sel.ordered:
        if mod not in record.tensor_refs:
            raise MissingModalityError(f"{record.sample_id}: no tensor for {mod.value}")
        raw = loader(record.tensor_refs[mod])
        parts.append(modality_channels(mod, raw, (rois or {}).get(mod)))
    cube = np.concatenate(parts, axis=0).astype(np.float32)
    assert cube.shape[0] == channel_count(sel)
    return cube


def build_cubes(
    records, sel: ModalitySelection, rois: Mapping[Modality, RoiSpec] | None = None
) -> np.ndarray:
    return np.stack([build_cube(r, sel, rois) for r in records]) if records else np.zeros(
        (0, channel_count(sel), CUBE_HEIGHT, CUBE_WIDTH), np.float32
    )
