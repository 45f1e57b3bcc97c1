"""Dataset schema: modalities, PAI taxonomy, sample records and manifests.

Manifests are stored as UTF-8 JSON lines. The first line is a header object
``{"schema_version": N}``; every following line is one sample record.
Tensor paths inside a manifest are resolved relative to the manifest file.
"""

from __future__ import annotations

import enum
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

SCHEMA_VERSION = 1
BONA_FIDE = "bona-fide"

HANDS = ("L", "R")
FINGER_NAMES = ("thumb", "index", "middle", "ring")
FINGER_IDS = tuple(f"{hand}_{name}" for hand in HANDS for name in FINGER_NAMES)


class ManifestError(ValueError):
    """Base class for manifest problems."""


class ManifestParseError(ManifestError):
    pass


class ManifestValidationError(ManifestError):
    pass


class Modality(str, enum.Enum):
    F_M = "F_M"
    F_S = "F_S"
    F_L = "F_L"
    B_N = "B_N"
    LEGACY = "LEGACY"

    @property
    def spec(self) -> "ModalitySpec":
        return MODALITY_SPECS[self]


@dataclass(frozen=True)
class ModalitySpec:
    """Capture layout of one sensing modality.

    Raw tensor files hold the illuminated frames first, followed by the
    non-illuminated (dark) frames. ``dark_per_channel`` dark frames belong to
    each illuminated channel, in channel order.
    """

    tag: Modality
    native_width: int | None
    native_height: int | None
    bit_depth: int
    stored_bits: int
    channel_names: tuple[str, ...]
    dark_per_channel: int
    selected: tuple[int, ...] | None  # frame indices fed to the model; None = all

    @property
    def n_illuminated(self) -> int:
        return len(self.channel_names)

    @property
    def n_dark(self) -> int:
        return self.dark_per_channel * self.n_illuminated

    @property
    def n_frames(self) -> int:
        return self.n_illuminated + self.n_dark

    @property
    def n_model_channels(self) -> int:
        return self.n_illuminated if self.selected is None else len(self.selected)


MODALITY_SPECS: dict[Modality, ModalitySpec] = {
    Modality.F_M: ModalitySpec(
        Modality.F_M, 1282, 1026, 12, 16,
        ("white", "465nm", "591nm", "720nm", "780nm", "870nm", "940nm"),
        dark_per_channel=1, selected=None,
    ),
    Modality.F_S: ModalitySpec(
        Modality.F_S, 320, 256, 16, 16,
        ("1200nm", "1300nm", "1450nm", "1550nm"),
        dark_per_channel=4, selected=None,
    ),
    Modality.F_L: ModalitySpec(
        Modality.F_L, 320, 256, 16, 16,
        tuple(f"1310nm_f{i:02d}" for i in range(100)),
        dark_per_channel=0, selected=tuple(range(10, 20)),
    ),
    Modality.B_N: ModalitySpec(
        Modality.B_N, 1282, 1026, 12, 16,
        tuple(f"940nm_f{i:02d}" for i in range(20)),
        dark_per_channel=0, selected=(10, 11, 12),
    ),
    Modality.LEGACY: ModalitySpec(
        Modality.LEGACY, None, None, 8, 8, ("gray",), dark_per_channel=0, selected=None,
    ),
}

# Channel stacking order of the data cube.
PROTOTYPE_MODALITIES = (Modality.F_M, Modality.F_S, Modality.F_L, Modality.B_N)


class Site(str, enum.Enum):
    USC1 = "USC1"
    USC2 = "USC2"
    APL = "APL"
    SYNTH = "SYNTH"


class Transparency(str, enum.Enum):
    TRANSPARENT = "transparent"
    OPAQUE = "opaque"
    SEMI = "semi"


@dataclass(frozen=True)
class PaiAttributes:
    pai_code: str
    material: str
    species: str
    transparency: str
    attack_type: str
    category_for_loo: str

    @classmethod
    def bona_fide(cls) -> "PaiAttributes":
        return cls(BONA_FIDE, BONA_FIDE, BONA_FIDE, BONA_FIDE, BONA_FIDE, BONA_FIDE)

    @property
    def is_bona_fide(self) -> bool:
        return self == PaiAttributes.bona_fide()

    def validate(self) -> None:
        if self.is_bona_fide:
            return
        if BONA_FIDE in (self.pai_code, self.category_for_loo):
            raise ManifestValidationError("partial bona-fide sentinel in PAI attributes")
        if not self.pai_code.strip() or not self.category_for_loo.strip():
            raise ManifestValidationError("attack PAI needs a nonempty pai_code and category_for_loo")
        if self.transparency not in {t.value for t in Transparency}:
            raise ManifestValidationError(f"unknown transparency {self.transparency!r}")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    participant_id: str
    finger_id: str
    collection_site: Site
    ground_truth: int
    pai: PaiAttributes
    tensor_refs: Mapping[Modality, Path] = field(default_factory=dict)
    extra: Mapping[str, str] = field(default_factory=dict)

    @property
    def is_attack(self) -> bool:
        return self.ground_truth == 1

    def validate(self) -> None:
        if not self.sample_id or not self.participant_id:
            raise ManifestValidationError("sample_id and participant_id must be nonempty")
        if self.finger_id not in FINGER_IDS:
            raise ManifestValidationError(f"{self.sample_id}: unknown finger_id {self.finger_id!r}")
        if self.ground_truth not in (0, 1):
            raise ManifestValidationError(f"{self.sample_id}: ground_truth must be 0 or 1")
        self.pai.validate()
        if self.is_attack == self.pai.is_bona_fide:
            raise ManifestValidationError(
                f"{self.sample_id}: ground_truth {self.ground_truth} inconsistent with PAI attributes"
            )

    def to_json(self, base: Path | None = None) -> dict:
        refs = {}
        for mod, path in self.tensor_refs.items():
            p = Path(path)
            if base is not None:
                try:
                    p = p.relative_to(base)
                except ValueError:
                    pass
            refs[Modality(mod).value] = p.as_posix()
        out = {
            "sample_id": self.sample_id,
            "participant_id": self.participant_id,
            "finger_id": self.finger_id,
            "collection_site": Site(self.collection_site).value,
            "ground_truth": self.ground_truth,
            "pai": {
                "pai_code": self.pai.pai_code,
                "material": self.pai.material,
                "species": self.pai.species,
                "transparency": self.pai.transparency,
                "attack_type": self.pai.attack_type,
                "category_for_loo": self.pai.category_for_loo,
            },
            "tensor_refs": refs,
        }
        if self.extra:
            out["extra"] = dict(self.extra)
        return out


_RECORD_FIELDS = {"sample_id", "participant_id", "finger_id", "collection_site",
                  "ground_truth", "pai", "tensor_refs", "extra"}
_PAI_FIELDS = {"pai_code", "material", "species", "transparency", "attack_type", "category_for_loo"}


def _record_from_json(obj: dict, base: Path, lenient: bool, lineno: int) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ManifestParseError(f"line {lineno}: record must be a JSON object")
    unknown = set(obj) - _RECORD_FIELDS
    if unknown and not lenient:
        raise ManifestParseError(f"line {lineno}: unknown fields {sorted(unknown)}")
    try:
        pai_obj = obj["pai"]
        unknown_pai = set(pai_obj) - _PAI_FIELDS
        if unknown_pai and not lenient:
            raise ManifestParseError(f"line {lineno}: unknown PAI fields {sorted(unknown_pai)}")
        pai = PaiAttributes(**{k: str(pai_obj[k]) for k in _PAI_FIELDS})
        refs = {Modality(k): base / v for k, v in obj.get("tensor_refs", {}).items()}
        gt = obj["ground_truth"]
        if isinstance(gt, bool) or not isinstance(gt, int):
            raise ManifestParseError(f"line {lineno}: ground_truth must be an integer")
        return SampleRecord(
            sample_id=str(obj["sample_id"]),
            participant_id=str(obj["participant_id"]),
            finger_id=str(obj["finger_id"]),
            collection_site=Site(obj["collection_site"]),
            ground_truth=gt,
            pai=pai,
            tensor_refs=refs,
            extra={str(k): str(v) for k, v in obj.get("extra", {}).items()},
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManifestParseError(f"line {lineno}: malformed record ({exc!r})") from exc
    except ValueError as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestParseError(f"line {lineno}: {exc}") from exc


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def participants(self) -> set[str]:
        return {r.participant_id for r in self.records}

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.sample_id: r for r in self.records}

    def class_counts(self) -> dict[str, int]:
        n_pa = sum(r.is_attack for r in self.records)
        return {"bona-fide": len(self.records) - n_pa, "attack": n_pa}

    def pai_counts(self) -> Counter:
        return Counter(r.pai.pai_code for r in self.records if r.is_attack)

    def validate(self, check_files: bool = True) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise ManifestValidationError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            rec.validate()
            if check_files:
                for mod, path in rec.tensor_refs.items():
                    if not Path(path).is_file():
                        raise ManifestValidationError(
                            f"{rec.sample_id}: missing tensor file for {Modality(mod).value}: {path}"
                        )

    def subset(self, sample_ids: Iterable[str]) -> "DatasetManifest":
        wanted = set(sample_ids)
        return DatasetManifest(tuple(r for r in self.records if r.sample_id in wanted), self.schema_version)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = [json.dumps({"schema_version": manifest.schema_version})]
    for rec in manifest.records:
        lines.append(json.dumps(rec.to_json(base), sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    base = path.parent.resolve()
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ManifestParseError(f"{path}: not UTF-8") from exc
    version = SCHEMA_VERSION
    records: list[SampleRecord] = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"line {lineno}: {exc.msg}") from exc
        if not header_seen and isinstance(obj, dict) and set(obj) == {"schema_version"}:
            version = obj["schema_version"]
            if not isinstance(version, int) or version < 1:
                raise ManifestParseError(f"line {lineno}: bad schema_version {version!r}")
            header_seen = True
            continue
        header_seen = True
        records.append(_record_from_json(obj, base, lenient=version > SCHEMA_VERSION, lineno=lineno))
    manifest = DatasetManifest(tuple(records), version)
    manifest.validate(check_files=check_files)
    return manifest


@dataclass(frozen=True)
class ModalitySelection:
    included: frozenset[Modality]

    def __post_init__(self) -> None:
        inc = frozenset(Modality(m) for m in self.included)
        if not inc:
            raise ValueError("modality selection must be nonempty")
        if not inc <= set(PROTOTYPE_MODALITIES):
            raise ValueError(f"only prototype modalities can be selected, got {sorted(m.value for m in inc)}")
        object.__setattr__(self, "included", inc)

    @classmethod
    def of(cls, *mods: Modality | str) -> "ModalitySelection":
        return cls(frozenset(Modality(m) for m in mods))

    @classmethod
    def parse(cls, text: str) -> "ModalitySelection":
        """Parse ``"F_M+F_S"`` (also accepts commas)."""
        parts = [p.strip() for p in text.replace(",", "+").split("+") if p.strip()]
        try:
            return cls.of(*parts)
        except ValueError as exc:
            raise ValueError(f"bad modality selection {text!r}: {exc}") from exc

    @property
    def ordered(self) -> tuple[Modality, ...]:
        return tuple(m for m in PROTOTYPE_MODALITIES if m in self.included)

    @property
    def label(self) -> str:
        return "+".join(m.value for m in self.ordered)

    def __str__(self) -> str:
        return self.label


def channel_count(sel: ModalitySelection) -> int:
    if not sel.included:
        raise ValueError("empty modality selection")
    return sum(m.spec.n_model_channels for m in sel.ordered)


def all_selections() -> list[ModalitySelection]:
    """The 15 nonempty modality subsets, by size then in stacking order."""
    out = []
    for k in range(1, len(PROTOTYPE_MODALITIES) + 1):
        for combo in itertools.combinations(PROTOTYPE_MODALITIES, k):
            out.append(ModalitySelection(frozenset(combo)))
    return out


@dataclass(frozen=True)
class ManifestSummary:
    participants: int
    unique_fingers: int
    total_samples: int
    bona_fide_samples: int
    pai_samples: int
    pai_species: int

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


def summarize(manifest: DatasetManifest) -> ManifestSummary:
    recs = manifest.records
    n_pa = sum(r.is_attack for r in recs)
    return ManifestSummary(
        participants=len({r.participant_id for r in recs}),
        unique_fingers=len({(r.participant_id, r.finger_id) for r in recs}),
        total_samples=len(recs),
        bona_fide_samples=len(recs) - n_pa,
        pai_samples=n_pa,
        pai_species=len({(r.pai.pai_code, r.pai.species) for r in recs if r.is_attack}),
    )
