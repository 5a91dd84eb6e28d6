"""Deterministic synthetic multi-class segmentation domains.

A scene is layered geometry on a [0,1] intensity canvas: background, an
outer ring, and one blob per remaining class placed around the ring's
interior. Domain shift is a ShiftSpec: intensity scale/bias, additive
gaussian noise, box blur, scaling of one structure (both image and label
geometry move), and a concentric sinusoidal ring artifact. Image-only shifts
never touch the label maps.

The default four-domain suite mirrors a sequential acquisition story: a
larger first domain with ring artifacts, then three small domains with an
intensity+anatomy shift, a noisy acquisition, and a blurred low-contrast one.
Shift magnitudes below are the one tuning point for forgetting calibration.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError

DS_MAGIC = b"SEGCLDS1"
DS_VERSION = 1

# --- default suite calibration (the only knobs for forgetting strength) ----
SUITE_IMAGE_SIZE = (32, 32)
SUITE_NUM_CLASSES = 4
SUITE_TRAIN_SIZES = (12, 2, 2, 2)
SUITE_EVAL_SIZE = 4
SUITE_SHIFTS = (
    dict(ring_artifact=True),
    dict(intensity_scale=0.75, intensity_bias=0.18, structure_scale=1.3),
    dict(noise_std=0.10),
    dict(blur_radius=1, intensity_scale=1.25, intensity_bias=-0.10),
)


@dataclass
class ShiftSpec:
    intensity_scale: float = 1.0
    intensity_bias: float = 0.0
    noise_std: float = 0.0
    blur_radius: int = 0
    structure_scale: float = 1.0
    ring_artifact: bool = False

    def __post_init__(self):
        if self.intensity_scale <= 0:
            raise ConfigError("shift.intensity_scale", "must be > 0")
        if self.noise_std < 0:
            raise ConfigError("shift.noise_std", "must be >= 0")
        if self.blur_radius < 0 or int(self.blur_radius) != self.blur_radius:
            raise ConfigError("shift.blur_radius", "must be a nonnegative integer")
        if self.structure_scale <= 0:
            raise ConfigError("shift.structure_scale", "must be > 0")
        self.blur_radius = int(self.blur_radius)

    def to_dict(self):
        return {
            "intensity_scale": self.intensity_scale,
            "intensity_bias": self.intensity_bias,
            "noise_std": self.noise_std,
            "blur_radius": self.blur_radius,
            "structure_scale": self.structure_scale,
            "ring_artifact": self.ring_artifact,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            intensity_scale=float(d["intensity_scale"]),
            intensity_bias=float(d["intensity_bias"]),
            noise_std=float(d["noise_std"]),
            blur_radius=int(d["blur_radius"]),
            structure_scale=float(d["structure_scale"]),
            ring_artifact=bool(d["ring_artifact"]),
        )


@dataclass
class DomainDataset:
    images: list
    labels: list
    shift: ShiftSpec
    split: str
    seed: int
    num_classes: int

    @property
    def size(self):
        return len(self.images)

    @property
    def image_size(self):
        return self.images[0].shape[1:]

    def stacked(self):
        return np.stack(self.images), np.stack(self.labels)


def _box_blur(img, radius):
    size = 2 * radius + 1
    pad = np.pad(img, radius, mode="edge")
    acc = np.zeros_like(img)
    for dy in range(size):
        for dx in range(size):
            acc += pad[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return acc / (size * size)


def _render_scene(H, W, num_classes, structure_scale, rng):
    """One random scene: label map plus clean intensity image."""
    yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")

    cy, cx = rng.uniform(-0.06, 0.06, size=2)
    r_outer = rng.uniform(0.78, 0.88)
    r_inner = r_outer - rng.uniform(0.20, 0.26)
    rad = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)

    labels = np.zeros((H, W), dtype=np.int64)
    labels[(rad >= r_inner) & (rad <= r_outer)] = 1

    n_blobs = num_classes - 2
    base_angle = rng.uniform(0.0, 2 * np.pi)
    for k in range(n_blobs):
        angle = base_angle + 2 * np.pi * k / max(1, n_blobs) + rng.uniform(-0.25, 0.25)
        dist = rng.uniform(0.26, 0.36)
        by, bx = cy + dist * np.sin(angle), cx + dist * np.cos(angle)
        # later blob classes run slightly larger: size is a second cue
        lo = 0.20 + 0.03 * k
        a = rng.uniform(lo, lo + 0.06)
        b = rng.uniform(lo, lo + 0.06)
        if k == 0:
            # the structure that ShiftSpec.structure_scale grows or shrinks
            a *= structure_scale
            b *= structure_scale
        tilt = rng.uniform(0.0, np.pi)
        dy, dx = yy - by, xx - bx
        u = dy * np.cos(tilt) + dx * np.sin(tilt)
        v = -dy * np.sin(tilt) + dx * np.cos(tilt)
        labels[(u / a) ** 2 + (v / b) ** 2 <= 1.0] = k + 2

    shades = 0.08 + 0.87 * np.arange(num_classes) / (num_classes - 1)
    shades = shades + rng.uniform(-0.03, 0.03, size=num_classes)
    image = shades[labels]
    return image, labels


def generate_domain(num_images, image_size, num_classes, shift, seed, split="train"):
    """Deterministic dataset of shifted scenes; labels follow geometry only."""
    H, W = image_size
    if H < 16 or W < 16 or H % 4 or W % 4:
        raise ConfigError("benchmark.image_size", f"H and W must be >= 16 and divisible by 4, got {image_size}")
    if not (2 <= num_classes <= 8):
        raise ConfigError("benchmark.num_classes", f"must be in [2, 8], got {num_classes}")
    if num_images < 1:
        raise ConfigError("benchmark.num_images", "must be >= 1")
    split_code = {"train": 0, "eval": 1}.get(split)
    if split_code is None:
        raise ConfigError("benchmark.split", f"must be train or eval, got {split!r}")

    images, labels = [], []
    for i in range(num_images):
        scene_ss, noise_ss = np.random.SeedSequence([seed, split_code, i]).spawn(2)
        rng = np.random.default_rng(scene_ss)
        img, lab = _render_scene(H, W, num_classes, shift.structure_scale, rng)

        img = img * shift.intensity_scale + shift.intensity_bias
        if shift.blur_radius > 0:
            img = _box_blur(img, shift.blur_radius)
        if shift.ring_artifact:
            yy, xx = np.meshgrid(np.linspace(-1, 1, H), np.linspace(-1, 1, W), indexing="ij")
            img = img + 0.06 * np.sin(2 * np.pi * 5.0 * np.sqrt(yy**2 + xx**2))
        if shift.noise_std > 0:
            img = img + np.random.default_rng(noise_ss).normal(0.0, shift.noise_std, size=img.shape)
        img = np.clip(img, 0.0, 1.0)

        present = np.unique(lab)
        missing = [c for c in range(1, num_classes) if c not in present]
        if missing:
            raise ConfigError("benchmark.scene", f"classes {missing} missing from generated scene {i}")

        images.append(img[None].astype(np.float64))
        labels.append(lab)
    return DomainDataset(images, labels, shift, split, seed, num_classes)


def default_four_domain_suite(seed):
    """Four (train, eval) domain pairs; domain 1 carries the big train split."""
    suite = []
    for d, (spec_kwargs, n_train) in enumerate(zip(SUITE_SHIFTS, SUITE_TRAIN_SIZES)):
        shift = ShiftSpec(**spec_kwargs)
        domain_seed = int(np.random.SeedSequence([int(seed), 100 + d]).generate_state(1)[0])
        train = generate_domain(n_train, SUITE_IMAGE_SIZE, SUITE_NUM_CLASSES, shift, domain_seed, "train")
        evalset = generate_domain(SUITE_EVAL_SIZE, SUITE_IMAGE_SIZE, SUITE_NUM_CLASSES, shift, domain_seed, "eval")
        suite.append((train, evalset))
    return suite


def save_dataset(ds, path):
    header = {
        "version": DS_VERSION,
        "H": int(ds.images[0].shape[1]),
        "W": int(ds.images[0].shape[2]),
        "num_classes": ds.num_classes,
        "num_images": ds.size,
        "seed": ds.seed,
        "split": ds.split,
        "shift": ds.shift.to_dict(),
    }
    with open(path, "wb") as f:
        f.write(DS_MAGIC)
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for img, lab in zip(ds.images, ds.labels):
            f.write(np.ascontiguousarray(img, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(lab, dtype="<u1").tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        magic = f.read(len(DS_MAGIC))
        if magic != DS_MAGIC:
            raise CheckpointError(f"{path}: not a dataset file (bad magic)")
        raw = f.read(4)
        if len(raw) != 4:
            raise CheckpointError(f"{path}: truncated header")
        (hlen,) = struct.unpack("<I", raw)
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})")
        if header.get("version") != DS_VERSION:
            raise CheckpointError(f"{path}: unsupported dataset version {header.get('version')}")
        H, W, n = header["H"], header["W"], header["num_images"]
        images, labels = [], []
        for _ in range(n):
            raw = f.read(8 * H * W)
            if len(raw) != 8 * H * W:
                raise CheckpointError(f"{path}: truncated image data")
            images.append(np.frombuffer(raw, dtype="<f8").reshape(1, H, W).copy())
            raw = f.read(H * W)
            if len(raw) != H * W:
                raise CheckpointError(f"{path}: truncated label data")
            labels.append(np.frombuffer(raw, dtype="<u1").reshape(H, W).astype(np.int64))
    return DomainDataset(
        images,
        labels,
        ShiftSpec.from_dict(header["shift"]),
        header["split"],
        int(header["seed"]),
        int(header["num_classes"]),
    )
