"""Task generators, manifests, and the on-disk dataset layout."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from evp.dataset import (
    COVERAGE_HI,
    COVERAGE_LO,
    DatasetManifest,
    SampleRecord,
    SegmentationSample,
    TASKS,
    hfc_energy_ratio,
    load_manifest,
    load_samples,
    sample_pairs,
    synth_dataset,
)
from evp.errors import ConfigError, FormatError, ShapeError
from evp.tensor import F32, Tensor


def _tree_digest(root: Path) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_rerun_is_byte_identical(tmp_path):
    a = synth_dataset("texture", 4, 32, 7, tmp_path / "a")
    b = synth_dataset("texture", 4, 32, 7, tmp_path / "b")
    da, db = _tree_digest(tmp_path / "a"), _tree_digest(tmp_path / "b")
    assert da == db
    assert set(da) == {r.image for r in a.samples} | {r.mask for r in a.samples} | {"manifest.json"}
    c = synth_dataset("texture", 4, 32, 8, tmp_path / "c")
    assert _tree_digest(tmp_path / "c") != da


@pytest.mark.parametrize("task", TASKS)
def test_coverage_and_border(task, tmp_path):
    man = synth_dataset(task, 4, 64, 11, tmp_path)
    for s in load_samples(man):
        m = s.mask.data
        assert COVERAGE_LO <= m.mean() <= COVERAGE_HI
        assert not m[0, :].any() and not m[-1, :].any()
        assert not m[:, 0].any() and not m[:, -1].any()
        assert s.image.data.shape == (3, 64, 64)
        assert s.image.data.dtype == F32


def test_texture_blob_is_high_frequency(tmp_path):
    man = synth_dataset("texture", 6, 64, 7, tmp_path)
    ratios = [hfc_energy_ratio(s.image.data, s.mask.data) for s in load_samples(man)]
    assert min(ratios) > 2.0


def test_blur_blob_is_low_frequency(tmp_path):
    man = synth_dataset("blur", 4, 64, 7, tmp_path)
    for s in load_samples(man):
        assert hfc_energy_ratio(s.image.data, s.mask.data) < 0.5


def test_camo_blob_matches_background_energy(tmp_path):
    # phase jump only: spectral energy balance should stay near parity
    man = synth_dataset("camo", 4, 64, 7, tmp_path)
    for s in load_samples(man):
        assert 0.5 < hfc_energy_ratio(s.image.data, s.mask.data) < 2.0


def test_shade_blob_is_darker(tmp_path):
    man = synth_dataset("shade", 4, 64, 7, tmp_path)
    for s in load_samples(man):
        img, m = s.image.data, s.mask.data
        assert img[:, m == 1.0].mean() < img[:, m == 0.0].mean() - 0.1


def test_default_splits(tmp_path):
    man = synth_dataset("texture", 20, 32, 3, tmp_path)
    assert len(load_samples(man, "train")) == 16
    assert len(load_samples(man, "val")) == 2
    assert len(load_samples(man, "test")) == 2
    assert len(load_samples(man)) == 20


def test_explicit_splits(tmp_path):
    man = synth_dataset("texture", 5, 32, 3, tmp_path, splits=(3, 0, 2))
    assert [r.split for r in man.samples] == ["train"] * 3 + ["test"] * 2
    assert load_samples(man, "val") == []


def test_synth_validation():
    with pytest.raises(ConfigError):
        synth_dataset("edges", 4, 32, 0, "/tmp/nope")
    with pytest.raises(ConfigError):
        synth_dataset("texture", 3, 32, 0, "/tmp/nope")
    with pytest.raises(ConfigError):
        synth_dataset("texture", 4, 16, 0, "/tmp/nope")
    with pytest.raises(ConfigError):
        synth_dataset("texture", 4, 40, 0, "/tmp/nope", stride=16)
    with pytest.raises(ConfigError):
        synth_dataset("texture", 4, 32, 0, "/tmp/nope", splits=(2, 1, 0))
    with pytest.raises(ConfigError):
        synth_dataset("texture", 4, 32, 0, "/tmp/nope", splits=(5, 0, -1))


def test_manifest_round_trip(tmp_path):
    man = synth_dataset("camo", 4, 32, 9, tmp_path)
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.task == "camo"
    assert loaded.seed == 9
    assert loaded.size == 32
    assert loaded.root == tmp_path
    assert [(r.image, r.mask, r.split) for r in loaded.samples] == [
        (r.image, r.mask, r.split) for r in man.samples
    ]
    assert load_samples(loaded)[0].image.data.shape == (3, 32, 32)


def test_manifest_errors(tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        load_manifest(bad)
    bad.write_text(json.dumps({"task": "texture", "seed": 0, "samples": []}))
    with pytest.raises(FormatError):
        load_manifest(bad)
    bad.write_text(json.dumps({"task": "texture", "seed": 0, "size": 32,
                               "samples": [{"image": "x"}]}))
    with pytest.raises(FormatError):
        load_manifest(bad)


def test_manifest_rejects_bad_fields():
    with pytest.raises(ConfigError):
        DatasetManifest(task="edges", seed=0, size=32, samples=[])
    with pytest.raises(ConfigError):
        DatasetManifest(task="texture", seed=0, size=32,
                        samples=[SampleRecord("i", "m", "holdout")])


def test_load_samples_unknown_split(tmp_path):
    man = synth_dataset("texture", 4, 32, 1, tmp_path)
    with pytest.raises(ConfigError):
        load_samples(man, "holdout")


def test_sample_invariants():
    img = np.zeros((3, 8, 8), dtype=F32)
    msk = np.zeros((8, 8), dtype=F32)
    SegmentationSample(image=Tensor(img), mask=Tensor(msk), split="train")
    with pytest.raises(ShapeError):
        SegmentationSample(image=Tensor(img[:2]), mask=Tensor(msk), split="train")
    with pytest.raises(ShapeError):
        SegmentationSample(image=Tensor(img), mask=Tensor(msk[:4]), split="train")
    with pytest.raises(ConfigError):
        SegmentationSample(image=Tensor(img + 1.5), mask=Tensor(msk), split="train")
    with pytest.raises(ConfigError):
        SegmentationSample(image=Tensor(img), mask=Tensor(msk + 0.5), split="train")
    with pytest.raises(ConfigError):
        SegmentationSample(image=Tensor(img), mask=Tensor(msk), split="holdout")


def test_sample_pairs_order(tmp_path):
    man = synth_dataset("texture", 4, 32, 2, tmp_path)
    samples = load_samples(man)
    pairs = sample_pairs(samples)
    assert len(pairs) == 4
    assert pairs[1][0] is samples[1].image.data
    assert pairs[1][1] is samples[1].mask.data


def test_hfc_energy_ratio_needs_both_classes():
    img = np.random.default_rng(0).random((3, 32, 32))
    with pytest.raises(ConfigError):
        hfc_energy_ratio(img, np.ones((32, 32)))
