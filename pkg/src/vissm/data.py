"""Procedural real-vs-synthetic image corpus.

"Real" images are band-limited smooth random fields plus mild sensor noise.
"Fake" images start from the same base field and composite one of three
generator signatures on top:

  G1_checkerboard  period-2 checkerboard (peak at the Nyquist frequency)
  G2_ringing       over-sharpening overshoot around the field's edges
  G3_gridnoise     noise bursts along a 4x4 block-boundary lattice

All sampling flows through the splitmix stream, keyed by (dataset seed,
split, subset, index), so any image can be regenerated from the manifest
alone; datasets are never stored as pixels unless explicitly exported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64, hash_combine

GENERATORS = ("G1_checkerboard", "G2_ringing", "G3_gridnoise")

# stream tags keep base-field draws and artifact draws independent
_TAG_BASE = 0x42415345  # "BASE"
_TAG_ART = 0x46414B45   # "FAKE"

NOISE_SIGMA = 0.02
_MIN_WAVES, _MAX_WAVES = 3, 6
_FREQ_LO, _FREQ_HI = 0.5, 3.0  # cycles per image: well below Nyquist/2
_AMP_LO, _AMP_HI = 0.04, 0.12
_RING_GAIN = 3.0
_BLOCK = 4


@dataclass
class SynthGenSpec:
    generator_id: str
    artifact_strength: float = 0.8

    def __post_init__(self):
        if self.generator_id not in GENERATORS:
            raise ValueError(
                f"unknown generator {self.generator_id!r}; known: {GENERATORS}"
            )
        if not 0.0 < self.artifact_strength <= 1.0:
            raise ValueError("artifact_strength must lie in (0, 1]")


def _smooth_field(rng: SplitMix64, h: int, w: int) -> np.ndarray:
    """Sum of a few random low-frequency plane waves around mid-gray."""
    yy = np.arange(h, dtype=np.float64)[:, None] / h
    xx = np.arange(w, dtype=np.float64)[None, :] / w
    field = np.full((h, w), 0.5)
    n_waves = _MIN_WAVES + rng.below(_MAX_WAVES - _MIN_WAVES + 1)
    for _ in range(n_waves):
        amp = rng.uniform(_AMP_LO, _AMP_HI)
        fx = rng.uniform(_FREQ_LO, _FREQ_HI) * (1.0 if rng.below(2) else -1.0)
        fy = rng.uniform(_FREQ_LO, _FREQ_HI) * (1.0 if rng.below(2) else -1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        field += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    return field


def _box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 box blur with edge replication."""
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            out += padded[i:i + img.shape[0], j:j + img.shape[1]]
    return out / 9.0


def _base_parts(seed: int, h: int, w: int):
    rng = SplitMix64(hash_combine(seed, _TAG_BASE))
    field = _smooth_field(rng, h, w)
    noise = rng.normal_array((h, w), 0.0, NOISE_SIGMA)
    return field, noise


def synth_real(seed: int, h: int, w: int) -> np.ndarray:
    """Deterministic pseudo-natural image in [0, 1]."""
    if h < 8 or w < 8:
        raise ValueError(f"image extents must be >= 8, got ({h}, {w})")
    field, noise = _base_parts(seed, h, w)
    return np.clip(field + noise, 0.0, 1.0)


def _artifact(seed: int, h: int, w: int, field: np.ndarray,
              spec: SynthGenSpec) -> np.ndarray:
    s = spec.artifact_strength
    gen = spec.generator_id
    if gen == "G1_checkerboard":
        ii = np.arange(h)[:, None]
        jj = np.arange(w)[None, :]
        checker = np.where((ii + jj) % 2 == 0, 1.0, -1.0)
        return 0.1 * s * checker
    if gen == "G2_ringing":
        # over-shoot sharpening of the base field: halo ringing at edges
        return s * _RING_GAIN * (field - _box_blur3(field))
    # G3: noise bursts pinned to the 4x4 block lattice
    rng = SplitMix64(hash_combine(seed, _TAG_ART, GENERATORS.index(gen)))
    burst = rng.uniform_array((h, w), -1.0, 1.0)
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    mask = ((ii % _BLOCK == 0) | (jj % _BLOCK == 0)).astype(np.float64)
    return 0.1 * s * burst * mask


def synth_fake(seed: int, h: int, w: int, spec: SynthGenSpec) -> np.ndarray:
    """Base field of the same seed plus the generator's signature.

    As artifact_strength -> 0 this converges to synth_real(seed, h, w).
    """
    if h < 8 or w < 8:
        raise ValueError(f"image extents must be >= 8, got ({h}, {w})")
    field, noise = _base_parts(seed, h, w)
    art = _artifact(seed, h, w, field, spec)
    return np.clip(field + art + noise, 0.0, 1.0)


# -- datasets --------------------------------------------------------------------


@dataclass
class DetectionDataset:
    images: np.ndarray  # (M, H, W) in [0, 1]
    labels: np.ndarray  # (M,) bool, True = fake
    subset_tag: str
    split: str

    def __len__(self):
        return len(self.images)


@dataclass
class DatasetBundle:
    train: DetectionDataset
    val: DetectionDataset
    test_subsets: list
    manifest: dict


# disjoint sample-index blocks per (split, subset); 2^20 samples each is
# far beyond any desk-scale count
_BLOCK_WIDTH = 1 << 20
_RANGE_KEYS = (
    ("train", "real"), ("train", "fake"),
    ("val", "real"), ("val", "fake"),
    ("test", "real"),
    ("test", GENERATORS[0]), ("test", GENERATORS[1]), ("test", GENERATORS[2]),
)
_RANGE_OFFSET = {key: i * _BLOCK_WIDTH for i, key in enumerate(_RANGE_KEYS)}


def _sample_seed(dataset_seed: int, split: str, subset: str, index: int) -> int:
    return hash_combine(dataset_seed, _RANGE_OFFSET[(split, subset)] + index)


def _gen_block(dataset_seed, split, subset, count, h, w, spec=None):
    imgs = np.empty((count, h, w))
    for i in range(count):
        seed = _sample_seed(dataset_seed, split, subset, i)
        imgs[i] = synth_real(seed, h, w) if spec is None else synth_fake(seed, h, w, spec)
    return imgs


def make_dataset(seed: int, train_count: int, val_count: int, test_count: int,
                 h: int = 32, w: int = 32,
                 train_generator: str = "G1_checkerboard",
                 strength: float = 0.8,
                 specs: list | None = None) -> DatasetBundle:
    """Train/val on one generator; test subsets for every generator plus real.

    train_count / val_count are totals, split evenly between real and fake
    (real gets the extra sample when odd). test_count is per subset. Each
    (split, subset) pair draws from its own disjoint sample-seed block.
    """
    if min(train_count, val_count, test_count) < 1:
        raise ValueError("all split counts must be >= 1")
    if specs is None:
        specs = [SynthGenSpec(g, strength) for g in GENERATORS]
    if not specs:
        raise ValueError("at least one generator spec is required")
    by_id = {s.generator_id: s for s in specs}
    if train_generator not in by_id:
        raise ValueError(f"training generator {train_generator!r} not in specs")
    train_spec = by_id[train_generator]

    def mixed(split, total):
        n_real = (total + 1) // 2
        n_fake = total - n_real
        reals = _gen_block(seed, split, "real", n_real, h, w)
        fakes = _gen_block(seed, split, "fake", n_fake, h, w, train_spec)
        images = np.concatenate([reals, fakes])
        labels = np.concatenate([np.zeros(n_real, bool), np.ones(n_fake, bool)])
        return DetectionDataset(images, labels, subset_tag=f"real+{train_generator}",
                                split=split)

    train = mixed("train", train_count)
    val = mixed("val", val_count)

    tests = [DetectionDataset(
        _gen_block(seed, "test", "real", test_count, h, w),
        np.zeros(test_count, bool), subset_tag="real", split="test")]
    for s in specs:
        tests.append(DetectionDataset(
            _gen_block(seed, "test", s.generator_id, test_count, h, w, s),
            np.ones(test_count, bool), subset_tag=s.generator_id, split="test"))

    manifest = {
        "schema": "vissm.dataset/1",
        "seed": seed,
        "image": {"h": h, "w": w},
        "counts": {"train": train_count, "val": val_count, "test_per_subset": test_count},
        "train_generator": train_generator,
        "specs": [{"generator_id": s.generator_id,
                   "artifact_strength": s.artifact_strength} for s in specs],
        "seed_ranges": {f"{sp}/{su}": [_RANGE_OFFSET[(sp, su)],
                                       _RANGE_OFFSET[(sp, su)] + _BLOCK_WIDTH - 1]
                        for sp, su in _RANGE_KEYS},
    }
    return DatasetBundle(train=train, val=val, test_subsets=tests, manifest=manifest)


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != "vissm.dataset/1":
        raise ValueError(f"{path} is not a dataset manifest (schema mismatch)")
    return manifest


def dataset_from_manifest(manifest: dict) -> DatasetBundle:
    """Regenerate the full bundle; bit-identical for equal manifests."""
    specs = [SynthGenSpec(**s) for s in manifest["specs"]]
    return make_dataset(
        seed=manifest["seed"],
        train_count=manifest["counts"]["train"],
        val_count=manifest["counts"]["val"],
        test_count=manifest["counts"]["test_per_subset"],
        h=manifest["image"]["h"], w=manifest["image"]["w"],
        train_generator=manifest["train_generator"],
        specs=specs,
    )


# -- image export -------------------------------------------------------------------


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM (P5), for eyeballing generated samples."""
    h, w = image.shape
    quant = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


def checkerboard_score(image: np.ndarray) -> float:
    """Correlation with the period-2 checkerboard (the G1 signature).

    The analytic reference detector thresholds this score; it separates G1
    fakes from everything else by construction.
    """
    h, w = image.shape
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    checker = np.where((ii + jj) % 2 == 0, 1.0, -1.0)
    return float(abs(np.mean(image * checker)))


def analytic_g1_detector(images: np.ndarray, threshold: float = 0.02) -> np.ndarray:
    """Hand-built detector: labels an image fake when the Nyquist
    checkerboard component exceeds the threshold."""
    return np.array([checkerboard_score(img) > threshold for img in images])
