"""Deterministic synthetic multi-spectral finger captures.

Each channel of a capture is ``mean + amplitude * texture + noise`` where the
mean comes from the class/category spectral profile and the texture is a sum
of three oriented sinusoidal gratings. Bona-fide gratings are fine
(ridge-like); PAI gratings are coarser. Bona-fide SWIR has a strong dip at
1450 nm. Speckle (F_L) frames of bona-fides get fresh noise per frame, PAIs
a single static noise field.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .datamodel import (
    FINGER_IDS,
    PROTOTYPE_MODALITIES,
    DatasetManifest,
    Modality,
    PaiAttributes,
    SampleRecord,
    Site,
    save_manifest,
)
from .tensorio import write_blob

DARK_LEVEL = 0.02  # dark-frame offset, fraction of full scale

# one value per illuminated channel for F_M/F_S; one value for all frames of F_L/B_N
Profile = Mapping[Modality, tuple[float, ...]]

BONA_FIDE_PROFILE: dict[Modality, tuple[float, ...]] = {
    Modality.F_M: (0.55, 0.35, 0.45, 0.60, 0.62, 0.60, 0.55),
    Modality.F_S: (0.50, 0.45, 0.12, 0.25),
    Modality.F_L: (0.45,),
    Modality.B_N: (0.40,),
}
BONA_FIDE_FREQS = (0.10, 0.12, 0.14)  # cycles per pixel


@dataclass(frozen=True)
class SynthCategory:
    name: str  # LOO grouping key
    pai_code: str
    material: str
    transparency: str
    attack_type: str
    profile: Profile
    texture_freqs: tuple[float, float, float]
    texture_amplitude: float = 0.08
    n_species: int = 2


_MATERIALS = ("silicone", "gelatin", "playdoh", "latex", "glue", "wax", "paper",
              "film", "ecoflex", "resin", "ink", "dragonskin", "gold", "nusil")


def default_categories(n: int = 11) -> tuple[SynthCategory, ...]:
    """Fixed PAI taxonomy; profiles come from a constant RNG so every config shares them."""
    rng = np.random.default_rng(20201)
    cats = []
    for i in range(n):
        transparency = ("opaque", "transparent", "semi")[i % 3] if i % 4 == 1 else "opaque"
        fm = rng.uniform(0.2, 0.8, 7)
        if transparency != "opaque":
            fm = 0.5 * fm + 0.5 * np.array(BONA_FIDE_PROFILE[Modality.F_M])
        profile = {
            Modality.F_M: tuple(np.round(fm, 4)),
            Modality.F_S: tuple(np.round(rng.uniform(0.35, 0.8, 4), 4)),
            Modality.F_L: (round(float(rng.uniform(0.2, 0.7)), 4),),
            Modality.B_N: (round(float(rng.uniform(0.1, 0.7)), 4),),
        }
        freqs = tuple(np.round(np.sort(rng.uniform(0.025, 0.06, 3)), 4))
        material = _MATERIALS[i % len(_MATERIALS)]
        cats.append(SynthCategory(
            name=f"cat{i:02d}_{material}",
            pai_code=f"PAI{i + 1:02d}",
            material=material,
            transparency=transparency,
            attack_type="full-fake" if i % 2 == 0 else "overlay",
            profile=profile,
            texture_freqs=freqs,
            texture_amplitude=round(float(rng.uniform(0.06, 0.1)), 4),
            n_species=1 + i % 3,
        ))
    return tuple(cats)


@dataclass(frozen=True)
class SynthConfig:
    n_participants: int = 30
    fingers_per_participant: int = 8
    sessions: int = 2
    pa_fraction: float = 0.5
    categories: tuple[SynthCategory, ...] = field(default_factory=default_categories)
    bona_fide_profile: Profile = field(default_factory=lambda: dict(BONA_FIDE_PROFILE))
    bona_fide_freqs: tuple[float, float, float] = BONA_FIDE_FREQS
    bona_fide_texture_amplitude: float = 0.08
    noise_sigma: float = 0.02
    mean_jitter: float = 0.02
    speckle_sigma: float = 0.05
    frame_size: tuple[int, int] | None = (80, 160)  # (H, W); None = native sensor size
    modalities: tuple[Modality, ...] = PROTOTYPE_MODALITIES
    site: Site = Site.SYNTH
    participant_prefix: str = "P"
    seed: int = 0

    def validate(self) -> None:
        if self.n_participants < 1 or not 1 <= self.fingers_per_participant <= len(FINGER_IDS):
            raise ValueError("need >= 1 participant and 1..8 fingers per participant")
        if self.sessions < 1 or not 0 <= self.pa_fraction <= 1:
            raise ValueError("sessions must be >= 1 and pa_fraction in [0, 1]")
        if self.pa_fraction > 0 and len(self.categories) < 2:
            raise ValueError("at least 2 PAI categories are required")
        if min(self.noise_sigma, self.mean_jitter, self.speckle_sigma) < 0:
            raise ValueError("noise levels must be >= 0")
        for prof in [self.bona_fide_profile] + [c.profile for c in self.categories]:
            for mod in PROTOTYPE_MODALITIES:
                vals = prof[mod]
                n_expected = mod.spec.n_illuminated if mod.spec.selected is None else 1
                if len(vals) != n_expected:
                    raise ValueError(f"{mod.value} profile needs {n_expected} values, got {len(vals)}")
                if not all(0 <= v <= 1 for v in vals):
                    raise ValueError(f"{mod.value} profile values must be in [0, 1]")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("category names must be unique")


def hardness_dial(cfg: SynthConfig, overlap: float) -> SynthConfig:
    """Move every PAI spectral profile toward the bona-fide profile by ``overlap``.

    At overlap 1 the class means coincide and only texture separates classes.
    """
    if not 0 <= overlap <= 1:
        raise ValueError("overlap must be in [0, 1]")
    bf = cfg.bona_fide_profile
    cats = tuple(
        dataclasses.replace(c, profile={
            m: tuple((1 - overlap) * np.asarray(c.profile[m]) + overlap * np.asarray(bf[m]))
            for m in PROTOTYPE_MODALITIES
        })
        for c in cfg.categories
    )
    return dataclasses.replace(cfg, categories=cats)


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    digest = hashlib.sha256(sample_id.encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def _texture(rng: np.random.Generator, shape: tuple[int, int], freqs) -> np.ndarray:
    yy, xx = np.mgrid[:shape[0], :shape[1]].astype(np.float64)
    tex = np.zeros(shape)
    for f in freqs:
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        f = f * rng.uniform(0.95, 1.05)
        tex += np.sin(2 * np.pi * f * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    return tex / np.sqrt(len(freqs) / 2)  # unit RMS


def _to_raw(values: np.ndarray, bits: int) -> np.ndarray:
    full = 2**bits - 1
    return np.clip(np.rint(values * full), 0, full).astype(np.uint16)


def render_modality(mod: Modality, means: np.ndarray, texture: np.ndarray, amplitude: float,
                    is_attack: bool, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Raw stack for one modality: illuminated frames followed by dark frames."""
    spec = mod.spec
    shape = texture.shape
    n_ill = spec.n_illuminated
    ch_means = means if len(means) == n_ill else np.full(n_ill, means[0])
    base = ch_means[:, None, None] + amplitude * texture[None]
    if mod is Modality.F_L:
        if is_attack:
            noise = np.broadcast_to(rng.normal(0, cfg.speckle_sigma, shape), (n_ill, *shape))
        else:
            noise = rng.normal(0, cfg.speckle_sigma, (n_ill, *shape))
    else:
        noise = rng.normal(0, cfg.noise_sigma, (n_ill, *shape)) if cfg.noise_sigma else 0.0
    frames = [base + noise]
    if spec.n_dark:
        dark = DARK_LEVEL + (rng.normal(0, cfg.noise_sigma, (spec.n_dark, *shape)) if cfg.noise_sigma else
                             np.zeros((spec.n_dark, *shape)))
        dark_mean = dark.reshape(n_ill, spec.dark_per_channel, *shape).mean(axis=1)
        frames = [frames[0] + dark_mean, dark]
    return _to_raw(np.concatenate(frames), spec.bit_depth)


def generate(cfg: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write tensors, ``manifest.jsonl`` and ``profiles.txt`` under ``out_dir``."""
    cfg.validate()
    out_dir = Path(out_dir)
    tdir = out_dir / "tensors"
    tdir.mkdir(parents=True, exist_ok=True)
    order_rng = np.random.default_rng(cfg.seed)
    cat_rank = order_rng.permutation(cfg.n_participants)
    n_pa = round(cfg.pa_fraction * cfg.fingers_per_participant)
    records = []
    for p in range(cfg.n_participants):
        pid = f"{cfg.participant_prefix}{p:03d}"
        cat = cfg.categories[cat_rank[p] % len(cfg.categories)] if cfg.categories else None
        for s in range(cfg.sessions):
            fingers = list(FINGER_IDS[:cfg.fingers_per_participant])
            pa_fingers = set(_sample_rng(cfg.seed, f"{pid}/s{s}").permutation(fingers)[:n_pa].tolist())
            for finger in fingers:
                sid = f"{pid}_s{s}_{finger}"
                is_attack = finger in pa_fingers
                records.append(_make_sample(cfg, sid, pid, finger, cat if is_attack else None, tdir))
    manifest = DatasetManifest(tuple(records))
    save_manifest(manifest, out_dir / "manifest.jsonl")
    (out_dir / "profiles.txt").write_text(describe(cfg))
    return manifest


def _make_sample(cfg: SynthConfig, sid: str, pid: str, finger: str, cat: SynthCategory | None,
                 tdir: Path) -> SampleRecord:
    rng = _sample_rng(cfg.seed, sid)
    if cat is None:
        profile, freqs, amp = cfg.bona_fide_profile, cfg.bona_fide_freqs, cfg.bona_fide_texture_amplitude
        pai = PaiAttributes.bona_fide()
    else:
        profile, freqs, amp = cat.profile, cat.texture_freqs, cat.texture_amplitude
        species = f"{cat.pai_code}-sp{int(rng.integers(cat.n_species)) + 1}"
        pai = PaiAttributes(cat.pai_code, cat.material, species, cat.transparency, cat.attack_type, cat.name)
    refs = {}
    for mod in PROTOTYPE_MODALITIES:
        # draw every modality so the stream does not depend on which ones are written
        shape = cfg.frame_size or (mod.spec.native_height, mod.spec.native_width)
        means = np.asarray(profile[mod], dtype=np.float64)
        means = means + rng.normal(0, cfg.mean_jitter, means.shape) if cfg.mean_jitter else means
        tex_rng = np.random.default_rng(rng.integers(2**63))
        mod_rng = np.random.default_rng(rng.integers(2**63))
        if mod not in cfg.modalities:
            continue
        texture = _texture(tex_rng, shape, freqs)
        raw = render_modality(mod, means, texture, amp, cat is not None, cfg, mod_rng)
        path = tdir / f"{sid}_{mod.value}.tns"
        write_blob(path, raw)
        refs[mod] = path.resolve()
    return SampleRecord(sid, pid, finger, cfg.site, int(cat is not None), pai, refs)


def describe(cfg: SynthConfig) -> str:
    lines = [f"seed {cfg.seed}; participants {cfg.n_participants}; sessions {cfg.sessions}; "
             f"pa_fraction {cfg.pa_fraction}; noise {cfg.noise_sigma}; jitter {cfg.mean_jitter}"]

    def row(name, prof, freqs, amp):
        vals = " | ".join(f"{m.value}: " + ",".join(f"{v:.3f}" for v in prof[m]) for m in PROTOTYPE_MODALITIES)
        return f"{name}: {vals} | freqs {','.join(f'{f:.3f}' for f in freqs)} | amp {amp:.3f}"

    lines.append(row("bona-fide", cfg.bona_fide_profile, cfg.bona_fide_freqs, cfg.bona_fide_texture_amplitude))
    for c in cfg.categories:
        lines.append(row(f"{c.name} ({c.pai_code}, {c.transparency})", c.profile, c.texture_freqs,
                         c.texture_amplitude))
    return "\n".join(lines) + "\n"
