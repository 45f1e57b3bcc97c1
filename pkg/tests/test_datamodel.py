import itertools
import json
import random

import pytest

from mspad.datamodel import (
    FINGER_IDS,
    DatasetManifest,
    ManifestParseError,
    ManifestValidationError,
    Modality,
    ModalitySelection,
    PaiAttributes,
    SampleRecord,
    Site,
    all_selections,
    channel_count,
    load_manifest,
    save_manifest,
    summarize,
)


def _rec(sid, pid="p1", finger="L_index", attack=False, refs=None):
    pai = (PaiAttributes("PAI01", "silicone", "PAI01-sp1", "opaque", "full-fake", "red")
           if attack else PaiAttributes.bona_fide())
    return SampleRecord(sid, pid, finger, Site.SYNTH, int(attack), pai, refs or {})


def test_modality_table():
    fm, fs, fl, bn = (m.spec for m in (Modality.F_M, Modality.F_S, Modality.F_L, Modality.B_N))
    assert (fm.n_illuminated, fm.n_dark, fm.bit_depth) == (7, 7, 12)
    assert fm.channel_names[0] == "white" and fm.channel_names[-1] == "940nm"
    assert fs.channel_names == ("1200nm", "1300nm", "1450nm", "1550nm")
    assert (fs.n_illuminated, fs.dark_per_channel, fs.bit_depth) == (4, 4, 16)
    assert (fl.n_illuminated, fl.n_dark, fl.bit_depth) == (100, 0, 16)
    assert (bn.n_illuminated, bn.n_dark, bn.bit_depth) == (20, 0, 12)
    assert Modality.LEGACY.spec.bit_depth == 8
    assert (fm.native_width, fm.native_height) == (1282, 1026)
    assert (fs.native_width, fs.native_height) == (320, 256)


@pytest.mark.parametrize("mods,expected", [
    (("F_M",), 7), (("F_L",), 10), (("F_S",), 4), (("B_N",), 3), (("F_M", "F_S", "F_L", "B_N"), 24),
])
def test_channel_count(mods, expected):
    assert channel_count(ModalitySelection.of(*mods)) == expected


def test_all_15_selections_against_lookup():
    lookup = {"F_M": 7, "F_S": 4, "F_L": 10, "B_N": 3}
    sels = all_selections()
    assert len(sels) == 15 == len({s.included for s in sels})
    brute = []
    for k in range(1, 5):
        for combo in itertools.combinations(lookup, k):
            brute.append(sum(lookup[m] for m in combo))
    assert sorted(channel_count(s) for s in sels) == sorted(brute)
    assert {channel_count(s) for s in sels} == {3, 4, 7, 10, 11, 13, 14, 17, 20, 21, 24}


def test_empty_selection_rejected():
    with pytest.raises(ValueError):
        ModalitySelection(frozenset())
    with pytest.raises(ValueError):
        ModalitySelection.of("LEGACY")


def test_selection_order_is_canonical():
    a = ModalitySelection.parse("B_N+F_M")
    b = ModalitySelection.parse("F_M,B_N")
    assert a == b and a.label == "F_M+B_N"


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    m = load_manifest(p)
    assert len(m) == 0 and m.participants == set()
    s = summarize(m)
    assert s.as_dict() == dict(participants=0, unique_fingers=0, total_samples=0, bona_fide_samples=0,
                               pai_samples=0, pai_species=0)


def test_duplicate_id_rejected(tmp_path):
    m = DatasetManifest((_rec("a"), _rec("a", finger="R_ring")))
    p = tmp_path / "m.jsonl"
    save_manifest(m, p)
    with pytest.raises(ManifestValidationError):
        load_manifest(p)


def test_label_pai_consistency():
    bad = SampleRecord("x", "p", "L_thumb", Site.SYNTH, 1, PaiAttributes.bona_fide())
    with pytest.raises(ManifestValidationError):
        bad.validate()
    empty_code = _rec("y", attack=True)
    empty_code = SampleRecord("y", "p", "L_thumb", Site.SYNTH, 1,
                              PaiAttributes("", "m", "s", "opaque", "a", "c"))
    with pytest.raises(ManifestValidationError):
        empty_code.validate()


def test_missing_tensor_file(tmp_path):
    m = DatasetManifest((_rec("a", refs={Modality.F_M: tmp_path / "nope.tns"}),))
    save_manifest(m, tmp_path / "m.jsonl")
    with pytest.raises(ManifestValidationError, match="missing tensor"):
        load_manifest(tmp_path / "m.jsonl")


@pytest.mark.parametrize("line", ["{not json", '{"sample_id": "a"}', "[1, 2]"])
def test_parse_errors(tmp_path, line):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps({"schema_version": 1}) + "\n" + line + "\n")
    with pytest.raises(ManifestParseError):
        load_manifest(p)


def test_unknown_fields_need_newer_schema(tmp_path):
    rec = _rec("a").to_json()
    rec["color"] = "blue"
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps({"schema_version": 1}) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ManifestParseError, match="unknown fields"):
        load_manifest(p)
    p.write_text(json.dumps({"schema_version": 2}) + "\n" + json.dumps(rec) + "\n")
    assert len(load_manifest(p)) == 1


def test_round_trip(tmp_path, tiny_dataset):
    manifest, out = tiny_dataset
    p = tmp_path / "copy.jsonl"
    save_manifest(manifest, p)
    again = load_manifest(p)
    assert again.records == manifest.records


def test_synthetic_manifest_counts(tiny_dataset):
    manifest, out = tiny_dataset
    loaded = load_manifest(out / "manifest.jsonl")
    assert len(loaded) == 24
    assert len(loaded.participants) == 3
    assert loaded.class_counts() == {"bona-fide": 12, "attack": 12}
    s = summarize(loaded)
    assert (s.participants, s.unique_fingers, s.total_samples) == (3, 24, 24)


def test_unique_fingers_below_total_with_repeat():
    m = DatasetManifest((_rec("a"), _rec("b")))  # same participant and finger twice
    s = summarize(m)
    assert s.unique_fingers == 1 < s.total_samples == 2


def test_summarize_permutation_invariant(tiny_dataset):
    manifest, _ = tiny_dataset
    recs = list(manifest.records)
    random.Random(3).shuffle(recs)
    assert summarize(DatasetManifest(tuple(recs))) == summarize(manifest)


def test_finger_ids():
    assert len(FINGER_IDS) == 8
