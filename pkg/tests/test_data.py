import json

import numpy as np
import pytest

from vissm import data as D
from vissm.data import SynthGenSpec, make_dataset


# -- real images -----------------------------------------------------------------


def test_real_is_deterministic():
    a = D.synth_real(123, 32, 32)
    b = D.synth_real(123, 32, 32)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, D.synth_real(124, 32, 32))


def test_real_pixel_range():
    for seed in range(20):
        img = D.synth_real(seed, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_real_rejects_tiny_extents():
    with pytest.raises(ValueError):
        D.synth_real(0, 4, 32)


def test_real_energy_is_low_frequency():
    # oracle: FFT energy above half-Nyquist, averaged over 100 samples
    ratios = []
    for seed in range(100):
        img = D.synth_real(seed, 32, 32)
        power = np.abs(np.fft.fft2(img)) ** 2
        power[0, 0] = 0.0  # DC carries the mid-gray offset, not texture
        fy = np.abs(np.fft.fftfreq(32))[:, None]
        fx = np.abs(np.fft.fftfreq(32))[None, :]
        hi = np.maximum(fy, fx) > 0.25
        ratios.append(power[hi].sum() / power.sum())
    assert np.mean(ratios) < 0.10


# -- fake images ------------------------------------------------------------------


def test_fake_strength_zero_limit():
    real = D.synth_real(7, 32, 32)
    for gen in D.GENERATORS:
        near = D.synth_fake(7, 32, 32, SynthGenSpec(gen, 1e-9))
        assert np.max(np.abs(near - real)) < 1e-8, gen


def test_fake_is_deterministic():
    spec = SynthGenSpec("G3_gridnoise", 0.7)
    assert np.array_equal(D.synth_fake(5, 32, 32, spec), D.synth_fake(5, 32, 32, spec))


def test_g1_difference_peaks_at_nyquist():
    # oracle: FFT magnitude of (fake - real) peaks at the (N/2, N/2) bin
    for seed in (1, 2, 3):
        diff = D.synth_fake(seed, 32, 32, SynthGenSpec("G1_checkerboard", 0.8)) \
            - D.synth_real(seed, 32, 32)
        mag = np.abs(np.fft.fft2(diff))
        mag[0, 0] = 0.0
        assert np.unravel_index(np.argmax(mag), mag.shape) == (16, 16)


def test_unknown_generator_rejected():
    with pytest.raises(ValueError):
        SynthGenSpec("G4_dream", 0.5)
    with pytest.raises(ValueError):
        SynthGenSpec("G1_checkerboard", 0.0)


def test_generators_differ_from_each_other():
    imgs = [D.synth_fake(9, 32, 32, SynthGenSpec(g, 0.8)) for g in D.GENERATORS]
    assert not np.array_equal(imgs[0], imgs[1])
    assert not np.array_equal(imgs[1], imgs[2])


# -- analytic reference detector -----------------------------------------------------


def test_analytic_detector_separates_g1():
    fakes = np.stack([D.synth_fake(s, 32, 32, SynthGenSpec("G1_checkerboard", 0.8))
                      for s in range(50)])
    reals = np.stack([D.synth_real(10_000 + s, 32, 32) for s in range(50)])
    assert D.analytic_g1_detector(fakes).all()
    assert not D.analytic_g1_detector(reals).any()


# -- dataset assembly ------------------------------------------------------------------


def test_dataset_counts_and_purity():
    bundle = make_dataset(seed=1, train_count=100, val_count=20, test_count=50)
    assert len(bundle.train) == 100
    assert len(bundle.val) == 20
    assert [len(ds) for ds in bundle.test_subsets] == [50, 50, 50, 50]
    tags = [ds.subset_tag for ds in bundle.test_subsets]
    assert tags == ["real", "G1_checkerboard", "G2_ringing", "G3_gridnoise"]
    for ds in bundle.test_subsets:
        expected = ds.subset_tag != "real"
        assert np.all(ds.labels == expected)
    assert bundle.train.labels.sum() == 50  # even real/fake split


def test_dataset_splits_share_no_images():
    bundle = make_dataset(seed=2, train_count=40, val_count=20, test_count=20)
    pools = [bundle.train.images, bundle.val.images] + \
        [ds.images for ds in bundle.test_subsets]
    seen = set()
    for pool in pools:
        for img in pool:
            key = img.tobytes()
            assert key not in seen
            seen.add(key)


def test_seed_ranges_disjoint_in_manifest():
    bundle = make_dataset(seed=3, train_count=10, val_count=10, test_count=10)
    ranges = sorted(bundle.manifest["seed_ranges"].values())
    for (lo1, hi1), (lo2, hi2) in zip(ranges, ranges[1:]):
        assert hi1 < lo2


def test_dataset_regenerates_from_manifest(tmp_path):
    bundle = make_dataset(seed=4, train_count=30, val_count=10, test_count=10)
    path = tmp_path / "manifest.json"
    D.save_manifest(bundle.manifest, path)
    again = D.dataset_from_manifest(D.load_manifest(path))
    assert np.array_equal(again.train.images, bundle.train.images)
    assert np.array_equal(again.test_subsets[2].images, bundle.test_subsets[2].images)


def test_manifest_schema_guard(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema": "other/9"}))
    with pytest.raises(ValueError):
        D.load_manifest(path)


def test_make_dataset_validation():
    with pytest.raises(ValueError):
        make_dataset(seed=0, train_count=0, val_count=10, test_count=10)
    with pytest.raises(ValueError):
        make_dataset(seed=0, train_count=10, val_count=10, test_count=10, specs=[])
    with pytest.raises(ValueError):
        make_dataset(seed=0, train_count=10, val_count=10, test_count=10,
                     train_generator="G9_unknown")


def test_write_pgm(tmp_path):
    img = D.synth_real(5, 16, 16)
    path = tmp_path / "img.pgm"
    D.write_pgm(img, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n16 16\n255\n")
    assert len(raw) == len(b"P5\n16 16\n255\n") + 256
