import hashlib

import numpy as np
import pytest

from segcl.datasets import (
    ShiftSpec,
    default_four_domain_suite,
    generate_domain,
    load_dataset,
    save_dataset,
)
from segcl.errors import CheckpointError, ConfigError

IDENTITY = ShiftSpec()


def test_same_seed_bit_identical():
    a = generate_domain(3, (32, 32), 4, IDENTITY, seed=5)
    b = generate_domain(3, (32, 32), 4, IDENTITY, seed=5)
    for ia, ib in zip(a.images, b.images):
        np.testing.assert_array_equal(ia, ib)
    for la, lb in zip(a.labels, b.labels):
        np.testing.assert_array_equal(la, lb)


def test_different_seed_differs():
    a = generate_domain(2, (32, 32), 4, IDENTITY, seed=5)
    b = generate_domain(2, (32, 32), 4, IDENTITY, seed=6)
    assert any(not np.array_equal(x, y) for x, y in zip(a.images, b.images))


def test_values_and_labels_in_range():
    ds = generate_domain(4, (32, 32), 4, ShiftSpec(noise_std=0.3, intensity_bias=0.2), seed=1)
    for img in ds.images:
        assert img.min() >= 0.0 and img.max() <= 1.0
    for lab in ds.labels:
        assert lab.min() >= 0 and lab.max() < 4


def test_every_class_present_in_train_labels():
    ds = generate_domain(5, (32, 32), 4, IDENTITY, seed=2)
    present = set()
    for lab in ds.labels:
        present |= set(np.unique(lab).tolist())
    assert present == {0, 1, 2, 3}


def test_image_only_shifts_keep_labels():
    clean = generate_domain(3, (32, 32), 4, IDENTITY, seed=9)
    shifted = generate_domain(
        3,
        (32, 32),
        4,
        ShiftSpec(intensity_scale=1.2, intensity_bias=-0.05, noise_std=0.1, blur_radius=1, ring_artifact=True),
        seed=9,
    )
    for lc, ls in zip(clean.labels, shifted.labels):
        np.testing.assert_array_equal(lc, ls)
    assert any(not np.array_equal(a, b) for a, b in zip(clean.images, shifted.images))


def test_noise_std_calibration():
    clean = generate_domain(6, (32, 32), 4, IDENTITY, seed=3)
    noisy = generate_domain(6, (32, 32), 4, ShiftSpec(noise_std=0.1), seed=3)
    diffs = np.concatenate(
        [(n - c).reshape(-1) for n, c in zip(noisy.images, clean.images)]
    )
    assert abs(diffs.std() - 0.1) < 0.02  # within 20% of the requested std


def test_structure_scale_grows_label_area():
    base = generate_domain(4, (32, 32), 4, IDENTITY, seed=4)
    grown = generate_domain(4, (32, 32), 4, ShiftSpec(structure_scale=1.3), seed=4)
    for lb, lg in zip(base.labels, grown.labels):
        assert (lg == 2).sum() > (lb == 2).sum()


def test_structure_scale_moves_image_and_label_together():
    base = generate_domain(1, (32, 32), 4, IDENTITY, seed=4)
    grown = generate_domain(1, (32, 32), 4, ShiftSpec(structure_scale=1.3), seed=4)
    changed = base.labels[0] != grown.labels[0]
    assert changed.any()
    assert (base.images[0][0][changed] != grown.images[0][0][changed]).any()


def test_generate_domain_validation():
    with pytest.raises(ConfigError):
        generate_domain(1, (30, 32), 4, IDENTITY, seed=0)
    with pytest.raises(ConfigError):
        generate_domain(1, (8, 8), 4, IDENTITY, seed=0)
    with pytest.raises(ConfigError):
        generate_domain(1, (32, 32), 9, IDENTITY, seed=0)
    with pytest.raises(ConfigError):
        generate_domain(0, (32, 32), 4, IDENTITY, seed=0)
    with pytest.raises(ConfigError):
        ShiftSpec(intensity_scale=0.0)


def test_suite_sizes_and_distinct_eval_sets():
    suite = default_four_domain_suite(7)
    assert len(suite) == 4
    assert [t.size for t, _ in suite] == [12, 2, 2, 2]
    assert all(e.size == 4 for _, e in suite)
    hashes = set()
    for _, evalset in suite:
        digest = hashlib.sha256(b"".join(img.tobytes() for img in evalset.images)).hexdigest()
        hashes.add(digest)
    assert len(hashes) == 4
    # train and eval splits differ within each domain
    for train, evalset in suite:
        assert not np.array_equal(train.images[0], evalset.images[0])


def test_num_classes_range_supported():
    for c in (2, 8):
        ds = generate_domain(2, (32, 32), c, IDENTITY, seed=11)
        present = set()
        for lab in ds.labels:
            present |= set(np.unique(lab).tolist())
        assert present == set(range(c))


def test_dataset_roundtrip_bit_exact(tmp_path):
    ds = generate_domain(3, (32, 32), 4, ShiftSpec(noise_std=0.05, ring_artifact=True), seed=8)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.num_classes == ds.num_classes
    assert loaded.split == ds.split
    assert loaded.seed == ds.seed
    assert loaded.shift == ds.shift
    for a, b in zip(ds.images, loaded.images):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(ds.labels, loaded.labels):
        np.testing.assert_array_equal(a, b)


def test_dataset_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"WRONGMAG" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_dataset(path)


def test_dataset_rejects_truncation(tmp_path):
    ds = generate_domain(2, (32, 32), 4, IDENTITY, seed=8)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-100])
    with pytest.raises(CheckpointError):
        load_dataset(path)
