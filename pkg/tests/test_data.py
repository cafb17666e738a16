import struct

import numpy as np
import pytest

from pifnet.data import (DegenerateVolumeWarning, Site, SynthSpec, VolumeRecord, augment, check_augment_mode,
                         check_no_leakage, flip_sagittal, generate_dataset, largest_remainder, load_dataset,
                         normalize_max, parse_volume, read_volume, save_dataset, split_subjects, translate,
                         write_volume)
from pifnet.errors import ConfigError, FormatError, LeakageError
from pifnet.tensor import Rng

from oracles import oracle_classifier_bacc

SMALL = SynthSpec(extents=(8, 8, 8), n_per_class=6, sites=(Site((3.0, 4.0, 4.0), 1.5, 1.0),))


def test_generation_is_deterministic():
    a, b = generate_dataset(SMALL, 3), generate_dataset(SMALL, 3)
    assert [r.subject_id for r in a] == [r.subject_id for r in b]
    assert all(x.volume.tobytes() == y.volume.tobytes() for x, y in zip(a, b))
    c = generate_dataset(SMALL, 4)
    assert a[0].volume.tobytes() != c[0].volume.tobytes()


def test_generated_records_are_valid():
    recs = generate_dataset(SMALL, 0)
    assert len(recs) == 12 and sum(r.label for r in recs) == 6
    assert all(r.volume.dtype == np.float32 and r.volume.min() >= 0 for r in recs)


def test_zero_amplitude_means_no_class_signal():
    spec = SynthSpec(extents=(8, 8, 8), n_per_class=4, noise=0.0, sites=(Site((4.0, 4.0, 4.0), 2.0, 0.0),))
    recs = generate_dataset(spec, 1)
    assert all(np.array_equal(r.volume, recs[0].volume) for r in recs)


def test_site_outside_extents_rejected():
    with pytest.raises(ConfigError):
        generate_dataset(SynthSpec(extents=(8, 8, 8), sites=(Site((9.0, 1.0, 1.0), 1.0, 1.0),)), 0)


def test_oracle_classifier_separates_strong_signal():
    spec = SynthSpec(n_per_class=60)
    recs = split_subjects(generate_dataset(spec, 2), seed=2)
    assert oracle_classifier_bacc(recs, spec.sites[0]) > 0.95


def test_largest_remainder_examples():
    assert largest_remainder(10, (0.2, 0.16, 0.64)) == [2, 2, 6]
    assert largest_remainder(7, (1 / 3, 1 / 3, 1 / 3)) == [3, 2, 2]


def _records(n_subjects, per_subject=1):
    return [VolumeRecord(np.zeros((2, 2, 2), np.float32), i % 2, f"s{i:02d}")
            for i in range(n_subjects) for _ in range(per_subject)]


def test_split_ten_subjects():
    recs = split_subjects(_records(10), (0.2, 0.16, 0.64), seed=1)
    counts = {s: sum(r.split == s for r in recs) for s in ("test", "val", "train")}
    assert counts == {"test": 2, "val": 2, "train": 6}


def test_split_keeps_subjects_together_and_ignores_order():
    recs = _records(9, per_subject=3)
    a = split_subjects(recs, seed=5)
    check_no_leakage(a)
    b = split_subjects(list(reversed(recs)), seed=5)
    assert {r.subject_id: r.split for r in a} == {r.subject_id: r.split for r in b}


def test_split_errors_and_leakage_guard():
    with pytest.raises(ConfigError):
        split_subjects(_records(2), seed=0)
    with pytest.raises(ConfigError):
        split_subjects(_records(10), (0.5, 0.5, 0.5))
    recs = split_subjects(_records(10), seed=0)
    recs.append(VolumeRecord(recs[0].volume, recs[0].label, recs[0].subject_id,
                             "train" if recs[0].split != "train" else "test"))
    with pytest.raises(LeakageError):
        check_no_leakage(recs)


def test_normalize_max():
    v = np.array([[[1.0, 4.0]]])
    np.testing.assert_array_equal(normalize_max(v), v / 4)
    np.testing.assert_array_equal(normalize_max(normalize_max(v)), v / 4)
    with pytest.warns(DegenerateVolumeWarning):
        z = normalize_max(np.zeros(3))
    assert not z.any()


def test_translate_and_flip():
    v = np.arange(27.0).reshape(3, 3, 3)
    np.testing.assert_array_equal(translate(v, (0, 0, 0)), v)
    t = translate(v, (1, 0, 0))
    np.testing.assert_array_equal(t[1:], v[:-1])
    assert not t[0].any()
    np.testing.assert_array_equal(flip_sagittal(flip_sagittal(v)), v)
    assert flip_sagittal(v)[0, 0, 0] == v[0, 0, 2]


def test_augment_rules():
    v = np.random.default_rng(0).uniform(size=(6, 6, 6))
    out = augment(v, "translate", Rng(1), is_pif=True)
    assert out.shape == v.shape
    np.testing.assert_array_equal(augment(v, "none", Rng(1)), v)
    with pytest.raises(ConfigError, match="only translation"):
        check_augment_mode("flip", True)
    with pytest.raises(ConfigError):
        augment(v, "both", Rng(1), is_pif=True)
    with pytest.raises(ConfigError):
        check_augment_mode("rotate", False)


def test_pifv_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=(2, 3, 4, 5)).astype(np.float32)
    write_volume(v, tmp_path / "v.pifv")
    back = read_volume(tmp_path / "v.pifv")
    assert back.dtype == np.float32 and back.tobytes() == v.tobytes()
    raw = (tmp_path / "v.pifv").read_bytes()
    assert raw[:4] == b"PIFV" and struct.unpack("<H4I", raw[4:22]) == (1, 2, 3, 4, 5)
    assert len(raw) == 22 + 4 * v.size


def _header(*shape, magic=b"PIFV", version=1):
    return struct.pack("<4sH4I", magic, version, *shape)


@pytest.mark.parametrize("raw,match", [
    (_header(1, 2, 2, 2, magic=b"PIFX") + bytes(32), "magic"),
    (_header(1, 2, 2, 2) + bytes(28), "truncated payload, 7 of 8"),
    (_header(1, 2, 2, 2) + bytes(36), "trailing"),
    (_header(1, 2, 2, 2, version=2) + bytes(32), "version"),
    (_header(4096, 4096, 4096, 4096), "overflow"),
    (_header(1, 0, 2, 2), "zero extent"),
    (b"PIFV", "truncated header"),
])
def test_pifv_format_errors(raw, match):
    with pytest.raises(FormatError, match=match):
        parse_volume(raw)


def test_dataset_round_trip(tmp_path):
    recs = split_subjects(generate_dataset(SMALL, 0), seed=0)
    manifest = save_dataset(recs, tmp_path)
    back = load_dataset(manifest)
    assert [(r.label, r.subject_id, r.split) for r in back] == [(r.label, r.subject_id, r.split) for r in recs]
    assert all(a.volume.tobytes() == b.volume.tobytes() for a, b in zip(recs, back))


def test_manifest_errors(tmp_path):
    (tmp_path / "m.tsv").write_text("not a manifest\n")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "m.tsv")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "missing.tsv")
