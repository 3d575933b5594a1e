"""Face datasets: the MT directory layout and a procedural synthetic stand-in.

Images are float32 ``(3, H, W)`` arrays in ``[-1, 1]``. Region masks are
bool ``(3, H, W)`` arrays stacked in ``REGIONS`` order.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

DOMAINS = ("makeup", "non_makeup")
REGIONS = ("lips", "eyes", "skin")
MT_TRAIN, MT_TEST = 3600, 234
TEST_FRACTION = MT_TEST / (MT_TRAIN + MT_TEST)
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# MT parsing labels folded into our three regions
_SEG_LABELS = {"lips": (7, 9), "eyes": (4, 5), "skin": (1, 6, 13)}
_SEG_WRITE = {"lips": 7, "eyes": 4, "skin": 1}
_DIR_NAMES = {"makeup": "makeup", "non_makeup": "non-makeup"}

DATA_ROOT_ENV = "GANCOMPRESS_DATA_ROOT"


@dataclass
class Sample:
    image: np.ndarray
    domain: str
    masks: np.ndarray | None
    id: str

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3,H,W), got {self.image.shape}")
        if not np.isfinite(self.image).all() or self.image.min() < -1 or self.image.max() > 1:
            raise ValueError(f"{self.id}: pixels must be finite and within [-1, 1]")
        if self.masks is not None:
            if self.masks.shape != (len(REGIONS),) + self.image.shape[1:]:
                raise ValueError(f"{self.id}: masks shape {self.masks.shape} does not fit image")
            if (self.masks.sum(axis=0) > 1).any():
                raise ValueError(f"{self.id}: region masks overlap")


@dataclass
class FaceDataset:
    samples: list[Sample]
    skipped: int = 0
    name: str = ""

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def domain(self, domain: str) -> list[Sample]:
        return [s for s in self.samples if s.domain == domain]

    @property
    def n_pairs(self) -> int:
        return min(len(self.domain("non_makeup")), len(self.domain("makeup")))


# -- synthetic faces ---------------------------------------------------------

@dataclass
class FaceParams:
    size: int
    background: np.ndarray
    skin: np.ndarray
    lips: np.ndarray
    eye_white: np.ndarray
    iris: np.ndarray
    center: tuple[float, float]
    face_axes: tuple[float, float]
    eye_dx: float
    eye_dy: float
    eye_axes: tuple[float, float]
    lip_dy: float
    lip_axes: tuple[float, float]
    lip_shift: np.ndarray
    shadow_shift: np.ndarray
    foundation_shift: float
    noise_seed: int
    noise_std: float = 0.02


def _ellipse(size, cx, cy, ax, ay):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def random_face_params(rng: np.random.Generator, size: int, lip_shift=(0.35, -0.25, -0.15),
                       style_jitter=0.08, color_jitter=0.05) -> FaceParams:
    """Random geometry and colors.

    ``color_jitter`` bounds the per-image color offsets. Instance-normalized
    generators see only contrasts, so large absolute color swings per image
    are unrecoverable noise for the cycle term; keep it small.
    """
    s = float(size)
    j = color_jitter
    skin = np.array([0.45, 0.1, -0.1]) + rng.uniform(-j, j) + rng.uniform(-j / 4, j / 4, 3)
    return FaceParams(
        size=size,
        background=np.array([-0.4, -0.3, -0.2]) + rng.uniform(-j, j, 3),
        skin=skin,
        lips=skin + np.array([0.05, -0.15, -0.1]) + rng.uniform(-j, j, 3),
        eye_white=np.array([0.75, 0.75, 0.72]),
        iris=np.array([-0.6, -0.5, -0.5]) + rng.uniform(-j, j, 3),
        center=(s / 2 + rng.uniform(-0.04, 0.04) * s, s / 2 + rng.uniform(-0.04, 0.04) * s),
        face_axes=(rng.uniform(0.28, 0.34) * s, rng.uniform(0.38, 0.44) * s),
        eye_dx=rng.uniform(0.12, 0.15) * s,
        eye_dy=rng.uniform(0.09, 0.13) * s,
        eye_axes=(rng.uniform(0.07, 0.09) * s, rng.uniform(0.045, 0.055) * s),
        lip_dy=rng.uniform(0.18, 0.22) * s,
        lip_axes=(rng.uniform(0.1, 0.13) * s, rng.uniform(0.04, 0.055) * s),
        lip_shift=np.asarray(lip_shift, float) + rng.normal(0, style_jitter, 3),
        shadow_shift=np.array([-0.1, -0.3, 0.05]) + rng.normal(0, style_jitter, 3),
        foundation_shift=0.05,
        noise_seed=int(rng.integers(2**31)),
    )


def render_face(p: FaceParams, makeup: bool) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a face; returns ``(image (3,S,S) float32, masks (3,S,S) bool)``."""
    size = p.size
    cx, cy = p.center
    face = _ellipse(size, cx, cy, *p.face_axes)
    eyes = np.zeros_like(face)
    eyeballs = np.zeros_like(face)
    for side in (-1, 1):
        ex, ey = cx + side * p.eye_dx, cy - p.eye_dy
        eyes |= _ellipse(size, ex, ey, *p.eye_axes)
        eyeballs |= _ellipse(size, ex, ey, 0.55 * p.eye_axes[0], 0.45 * p.eye_axes[1])
    irises = np.zeros_like(face)
    for side in (-1, 1):
        ex, ey = cx + side * p.eye_dx, cy - p.eye_dy
        irises |= _ellipse(size, ex, ey, 0.22 * p.eye_axes[0], 0.4 * p.eye_axes[1])
    eyes &= face
    lips = _ellipse(size, cx, cy + p.lip_dy, *p.lip_axes) & face & ~eyes
    skin = face & ~eyes & ~lips

    img = np.empty((3, size, size))
    img[:] = p.background[:, None, None]
    skin_color = p.skin + (p.foundation_shift if makeup else 0.0)
    shadow = skin_color + (p.shadow_shift if makeup else 0.0)
    lip_color = p.lips + (p.lip_shift if makeup else 0.0)
    for c in range(3):
        img[c][face] = skin_color[c]
        img[c][eyes] = shadow[c]
        img[c][eyeballs & eyes] = p.eye_white[c]
        img[c][irises & eyes] = p.iris[c]
        img[c][lips] = lip_color[c]
    noise = np.random.default_rng(p.noise_seed).normal(0, p.noise_std, img.shape)
    img = np.clip(img + noise, -1, 1).astype(np.float32)
    return img, np.stack([lips, eyes, skin])


def synth_faces(n: int, size: int = 64, seed: int = 0, **style) -> FaceDataset:
    """``n`` procedural faces alternating non-makeup (even index) and makeup (odd)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if size % 4 or size < 16:
        raise ValueError("size must be a multiple of 4 and >= 16")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        domain = "non_makeup" if i % 2 == 0 else "makeup"
        params = random_face_params(rng, size, **style)
        img, masks = render_face(params, makeup=domain == "makeup")
        samples.append(Sample(img, domain, masks, f"{_DIR_NAMES[domain]}/synth_{i:05d}.png"))
    return FaceDataset(samples, name=f"synth(n={n},size={size},seed={seed})")


# -- MT directory layout -------------------------------------------------------

def _domain_dir(root: Path, domain: str) -> Path | None:
    for base in (root, root / "images"):
        d = base / _DIR_NAMES[domain]
        if d.is_dir():
            return d
    return None


def _seg_dir(root: Path, domain: str) -> Path | None:
    d = root / "segs" / _DIR_NAMES[domain]
    return d if d.is_dir() else None


def _fit(img: Image.Image, resolution: int, resample) -> Image.Image:
    w, h = img.size
    scale = resolution / min(w, h)
    nw, nh = max(resolution, round(w * scale)), max(resolution, round(h * scale))
    img = img.resize((nw, nh), resample)
    left, top = (nw - resolution) // 2, (nh - resolution) // 2
    return img.crop((left, top, left + resolution, top + resolution))


def _to_float(img: Image.Image) -> np.ndarray:
    arr = np.asarray(img.convert("RGB"), dtype=np.float32).transpose(2, 0, 1)
    return arr / 127.5 - 1.0


def _labels_to_masks(labels: np.ndarray) -> np.ndarray:
    return np.stack([np.isin(labels, _SEG_LABELS[r]) for r in REGIONS])


def split_counts(sizes: dict[str, int], test_fraction: float) -> dict[str, int]:
    """Per-domain test counts summing to ``round(total * test_fraction)``."""
    total = sum(sizes.values())
    want = int(math.floor(total * test_fraction + 0.5))
    exact = {d: n * test_fraction for d, n in sizes.items()}
    counts = {d: int(math.floor(v)) for d, v in exact.items()}
    order = sorted(sizes, key=lambda d: (-(exact[d] - counts[d]), d))
    for d in order[: want - sum(counts.values())]:
        counts[d] += 1
    return counts


def load_mt(root, split: str, resolution: int = 256,
            test_fraction: float = TEST_FRACTION) -> FaceDataset:
    """Load one split of an MT-style tree.

    Files are sorted by name within each domain; the last files of each
    domain form the test split.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(root)
    dirs = {d: _domain_dir(root, d) for d in DOMAINS}
    if any(v is None for v in dirs.values()):
        raise FileNotFoundError(f"missing directories: {root} needs makeup/ and non-makeup/")
    files = {d: sorted(p for p in dirs[d].iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
             for d in DOMAINS}
    n_test = split_counts({d: len(v) for d, v in files.items()}, test_fraction)
    samples, skipped = [], 0
    for domain in DOMAINS:
        chosen = files[domain]
        cut = len(chosen) - n_test[domain]
        chosen = chosen[cut:] if split == "test" else chosen[:cut]
        seg_dir = _seg_dir(root, domain)
        for path in chosen:
            try:
                with Image.open(path) as im:
                    image = _to_float(_fit(im.convert("RGB"), resolution, Image.BILINEAR))
                masks = None
                if seg_dir is not None:
                    seg_path = seg_dir / (path.stem + ".png")
                    if seg_path.exists():
                        with Image.open(seg_path) as seg:
                            labels = np.asarray(_fit(seg, resolution, Image.NEAREST))
                        if labels.ndim == 3:
                            labels = labels[..., 0]
                        masks = _labels_to_masks(labels)
            except (OSError, ValueError) as exc:
                log.warning("skipping undecodable image %s: %s", path, exc)
                skipped += 1
                continue
            samples.append(Sample(image, domain, masks, f"{_DIR_NAMES[domain]}/{path.name}"))
    return FaceDataset(samples, skipped=skipped, name=f"mt({root},{split})")


def export_mt(dataset: FaceDataset, root) -> Path:
    """Write a dataset in the MT layout (8-bit PNGs plus label-map segs)."""
    root = Path(root)
    for sample in dataset:
        domain_dir = _DIR_NAMES[sample.domain]
        name = Path(sample.id).name
        (root / domain_dir).mkdir(parents=True, exist_ok=True)
        pixels = np.clip(np.floor((sample.image + 1) * 127.5 + 0.5), 0, 255).astype(np.uint8)
        Image.fromarray(pixels.transpose(1, 2, 0)).save(root / domain_dir / name)
        if sample.masks is not None:
            (root / "segs" / domain_dir).mkdir(parents=True, exist_ok=True)
            labels = np.zeros(sample.image.shape[1:], dtype=np.uint8)
            for region, mask in zip(REGIONS, sample.masks):
                labels[mask] = _SEG_WRITE[region]
            Image.fromarray(labels).save(root / "segs" / domain_dir / (Path(name).stem + ".png"))
    return root


def data_root(default=None):
    return os.environ.get(DATA_ROOT_ENV) or default


# -- batching ------------------------------------------------------------------

@dataclass
class PairBatch:
    src: np.ndarray
    ref: np.ndarray
    src_masks: np.ndarray | None
    ref_masks: np.ndarray | None
    src_ids: list[str] = field(default_factory=list)
    ref_ids: list[str] = field(default_factory=list)


def _stack_masks(samples):
    if any(s.masks is None for s in samples):
        return None
    return np.stack([s.masks for s in samples])


def iter_pairs(dataset: FaceDataset, batch_size: int, seed: int, epoch: int,
               phase: int = 1, augment: bool = True, shuffle: bool = True):
    """Yield (non-makeup, makeup) batches in an order fixed by (seed, phase, epoch)."""
    src_pool, ref_pool = dataset.domain("non_makeup"), dataset.domain("makeup")
    n = min(len(src_pool), len(ref_pool))
    if n == 0:
        raise ValueError("dataset needs both makeup and non-makeup samples")
    rng = np.random.default_rng([seed, phase, epoch])
    src_order = rng.permutation(len(src_pool))[:n] if shuffle else np.arange(n)
    ref_order = rng.permutation(len(ref_pool))[:n] if shuffle else np.arange(n)
    flips = rng.random((n, 2)) < 0.5 if augment else np.zeros((n, 2), bool)
    for start in range(0, n, batch_size):
        idx = range(start, min(start + batch_size, n))
        src = [_flipped(src_pool[src_order[i]], flips[i, 0]) for i in idx]
        ref = [_flipped(ref_pool[ref_order[i]], flips[i, 1]) for i in idx]
        yield PairBatch(np.stack([s.image for s in src]), np.stack([s.image for s in ref]),
                        _stack_masks(src), _stack_masks(ref),
                        [s.id for s in src], [s.id for s in ref])


def _flipped(sample: Sample, flip: bool) -> Sample:
    if not flip:
        return sample
    masks = None if sample.masks is None else sample.masks[..., ::-1].copy()
    return Sample(sample.image[..., ::-1].copy(), sample.domain, masks, sample.id)
