"""Toy two-domain shapes dataset, image-folder loading, seeded batching and
conventional (flip / shift) augmentation.

Domain X images are filled discs; domain Y images are the same discs with a
concentric hole whose radius is ``severity * disc_radius``. Labels follow the
hinge convention X -> -1, Y -> +1.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image as PILImage

SPLITS = ("train", "val", "test")
DOMAINS = ("X", "Y")
LABELS = {"X": -1, "Y": 1}
IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

BACKGROUND = -0.8
FOREGROUND = 0.6


class DatasetError(ValueError):
    pass


@dataclass
class DomainSample:
    image: np.ndarray  # H x W x C float32 in [-1, 1]
    domain: str
    name: str = ""

    def __post_init__(self):
        if self.domain not in LABELS:
            raise DatasetError(f"unknown domain {self.domain!r}")

    @property
    def label(self) -> int:
        return LABELS[self.domain]


@dataclass
class ShapeSpec:
    image_size: int = 64
    n_per_domain_per_split: int = 200
    severity_range: tuple[float, float] = (0.35, 0.6)
    noise_sigma: float = 0.0
    seed: int = 0
    # optional per-split counts overriding n_per_domain_per_split
    split_counts: dict[str, int] = field(default_factory=dict)

    def count(self, split: str) -> int:
        return self.split_counts.get(split, self.n_per_domain_per_split)

    def validate(self) -> None:
        lo, hi = self.severity_range
        if not 0 < lo <= hi <= 1:
            raise DatasetError("severity_range must satisfy 0 < lo <= hi <= 1")
        if self.image_size < 16:
            raise DatasetError("image_size must be >= 16")
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma must be >= 0")
        if any(self.count(s) < 1 for s in SPLITS):
            raise DatasetError("zero counts")


def render_shape(size: int, center: tuple[float, float], radius: float,
                 severity: float | None, noise: np.ndarray | None = None) -> np.ndarray:
    """Rasterize a disc (with a concentric hole when ``severity`` is given)
    by testing pixel centres; returns a ``size x size`` float array."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dist = np.hypot(yy - center[0], xx - center[1])
    img = np.full((size, size), BACKGROUND, dtype=np.float64)
    img[dist < radius] = FOREGROUND
    if severity is not None:
        img[dist < severity * radius] = BACKGROUND
    if noise is not None:
        img = img + noise
    return np.clip(img, -1.0, 1.0)


def hole_mask(record: dict, size: int, dilation: float = 0.0) -> np.ndarray:
    """Boolean mask of the ground-truth hole for a manifest record."""
    if record.get("severity") is None:
        return np.zeros((size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cy, cx = record["center"]
    dist = np.hypot(yy - cy, xx - cx)
    return dist < record["severity"] * record["radius"] + dilation


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round((np.clip(img, -1, 1) + 1.0) * 127.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / 127.5 - 1.0


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_shapes_dataset(spec: ShapeSpec, out_dir) -> dict:
    """Write ``out_dir/{train,val,test}/{X,Y}/*.png`` plus ``manifest.json``.

    Each (split, domain) pair draws from its own child of one SeedSequence,
    so splits never share a random stream.
    """
    spec.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot write to {out}: {e}") from None
    if not os.access(out, os.W_OK):
        raise DatasetError(f"cannot write to {out}")

    size = spec.image_size
    lo, hi = spec.severity_range
    streams = np.random.SeedSequence(spec.seed).spawn(len(SPLITS) * len(DOMAINS))
    files = []
    for i, (split, domain) in enumerate((s, d) for s in SPLITS for d in DOMAINS):
        rng = np.random.default_rng(streams[i])
        leaf = out / split / domain
        leaf.mkdir(parents=True, exist_ok=True)
        for j in range(spec.count(split)):
            radius = rng.uniform(0.22, 0.34) * size
            slack = size / 2 - radius - 2
            center = tuple(size / 2 + rng.uniform(-slack, slack, size=2))
            severity = float(rng.uniform(lo, hi)) if domain == "Y" else None
            noise = rng.normal(0.0, spec.noise_sigma, (size, size)) if spec.noise_sigma > 0 else None
            img = render_shape(size, center, radius, severity, noise)
            path = leaf / f"{domain}_{j:05d}.png"
            PILImage.fromarray(to_uint8(img)).save(path)
            files.append({
                "path": str(path.relative_to(out)),
                "split": split,
                "domain": domain,
                "center": [float(center[0]), float(center[1])],
                "radius": float(radius),
                "severity": severity,
                "sha256": _sha256(path),
            })
    manifest = {
        "seed": spec.seed,
        "image_size": size,
        "severity_range": [lo, hi],
        "noise_sigma": spec.noise_sigma,
        "counts": {s: {d: spec.count(s) for d in DOMAINS} for s in SPLITS},
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def shape_spec_from_config(cfg) -> ShapeSpec:
    counts = {}
    if cfg.n_val is not None:
        counts["val"] = cfg.n_val
    if cfg.n_test is not None:
        counts["test"] = cfg.n_test
    return ShapeSpec(image_size=cfg.image_size, n_per_domain_per_split=cfg.n_per_domain,
                     severity_range=(cfg.severity_lo, cfg.severity_hi),
                     noise_sigma=cfg.noise_sigma, seed=cfg.data_seed, split_counts=counts)


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DatasetError(f"no manifest.json under {root}")
    return json.loads(path.read_text())


def load_image(path: Path, channels: int | None = None) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            if channels is None:
                channels = 1 if im.mode in ("1", "L", "I", "I;16", "F") else 3
            arr = np.asarray(im.convert("L" if channels == 1 else "RGB"))
    except Exception as e:  # PIL raises a zoo of exception types
        raise DatasetError(f"cannot decode image {path}: {e}") from None
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_uint8(arr)


def load_split(root, split: str, channels: int | None = None) -> list[DomainSample]:
    """Load ``root/split/{X,Y}`` in lexicographic filename order."""
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    samples: list[DomainSample] = []
    for domain in DOMAINS:
        leaf = Path(root) / split / domain
        if not leaf.is_dir():
            if not (Path(root) / split).is_dir():
                raise DatasetError(f"missing directory {Path(root) / split}")
            raise DatasetError(f"empty domain folder: {leaf}")
        paths = sorted(p for p in leaf.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        if not paths:
            raise DatasetError(f"empty domain folder: {leaf}")
        for p in paths:
            img = load_image(p, channels)
            channels = img.shape[2]
            samples.append(DomainSample(img, domain, name=f"{split}/{domain}/{p.name}"))
    return samples


def split_domains(samples: list[DomainSample]) -> tuple[list[DomainSample], list[DomainSample]]:
    xs = [s for s in samples if s.domain == "X"]
    ys = [s for s in samples if s.domain == "Y"]
    return xs, ys


def _stack(samples: list[DomainSample], idx) -> np.ndarray:
    return np.stack([samples[i].image for i in idx])


def pair_indices(n_x: int, n_y: int, batch_size: int, rng: np.random.Generator):
    """One epoch of (X indices, Y indices) batches.

    The larger domain is permuted once so each of its indices appears exactly
    once. The smaller domain is filled by concatenating fresh permutations,
    so every minority index appears ``floor(n_max / n_min)`` or one more
    times.
    """
    n_max, n_min = max(n_x, n_y), min(n_x, n_y)
    major = rng.permutation(n_max)
    reps = -(-n_max // n_min)
    minor = np.concatenate([rng.permutation(n_min) for _ in range(reps)])[:n_max]
    ix, iy = (major, minor) if n_x >= n_y else (minor, major)
    return [(ix[i:i + batch_size], iy[i:i + batch_size]) for i in range(0, n_max, batch_size)]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch)])


def batch_iterator(samples: list[DomainSample], batch_size: int, seed: int,
                   paired: bool = True, epochs: int = 1,
                   first_epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(batch_X, batch_Y)`` arrays of shape ``B x H x W x C``.

    Paired mode matches X batches with Y batches as in :func:`pair_indices`.
    Unpaired mode shuffles the pooled samples and splits each batch by
    domain (either side may be empty).
    """
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    if not samples:
        raise DatasetError("empty sample list")
    xs, ys = split_domains(samples)
    if paired and (not xs or not ys):
        raise DatasetError("paired iteration needs both domains")
    shape = samples[0].image.shape
    for epoch in range(first_epoch, first_epoch + epochs):
        rng = epoch_rng(seed, epoch)
        if paired:
            for ix, iy in pair_indices(len(xs), len(ys), batch_size, rng):
                yield _stack(xs, ix), _stack(ys, iy)
        else:
            order = rng.permutation(len(samples))
            for i in range(0, len(order), batch_size):
                chunk = [samples[j] for j in order[i:i + batch_size]]
                bx = [s.image for s in chunk if s.domain == "X"]
                by = [s.image for s in chunk if s.domain == "Y"]
                yield (np.stack(bx) if bx else np.empty((0, *shape), np.float32),
                       np.stack(by) if by else np.empty((0, *shape), np.float32))


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool
    vflip: bool
    shift: tuple[int, int]  # offsets into the padded image, in [0, 2*pad]
    pad: int


def draw_augment_params(rng: np.random.Generator, hflip: bool = True, vflip: bool = True,
                        crop_pad: int = 0) -> AugmentParams:
    h = bool(rng.random() < 0.5) if hflip else False
    v = bool(rng.random() < 0.5) if vflip else False
    shift = tuple(int(s) for s in rng.integers(0, 2 * crop_pad + 1, size=2)) if crop_pad else (0, 0)
    return AugmentParams(h, v, shift, crop_pad)


def apply_augment(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    h, w = image.shape[:2]
    if 2 * p.pad >= min(h, w):
        raise DatasetError("crop_pad must be < min(H, W) / 2")
    out = image
    if p.pad:
        padded = np.pad(image, ((p.pad, p.pad), (p.pad, p.pad), (0, 0)), mode="reflect")
        out = padded[p.shift[0]:p.shift[0] + h, p.shift[1]:p.shift[1] + w]
    if p.hflip:
        out = out[:, ::-1]
    if p.vflip:
        out = out[::-1]
    return np.ascontiguousarray(out)


def conventional_augment(image: np.ndarray, rng: np.random.Generator, hflip: bool = True,
                         vflip: bool = True, crop_pad: int = 0) -> np.ndarray:
    """Random mirroring plus a random shift with reflect padding."""
    return apply_augment(image, draw_augment_params(rng, hflip, vflip, crop_pad))
