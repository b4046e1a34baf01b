"""Dataset layout, tiling, sweep generation, batching and the synthetic fixture."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .synthesis import (STREAM_SHUFFLE, BitemporalSample, make_rng, prepare_inference_pair, resample,
                        scaled_size)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (1.0, 1.3, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0)


@dataclass
class SweepSpec:
    ratios: list = field(default_factory=lambda: list(DEFAULT_RATIOS))
    degraded_slot: str = "post"

    def __post_init__(self):
        self.ratios = [float(r) for r in self.ratios]
        if not self.ratios:
            raise ValueError("sweep needs at least one ratio")
        if any(r < 1 for r in self.ratios):
            raise ValueError(f"ratios must be >= 1, got {self.ratios}")
        if any(b <= a for a, b in zip(self.ratios, self.ratios[1:])):
            raise ValueError(f"ratios must be strictly increasing, got {self.ratios}")


# ---------------------------------------------------------------- image io

def read_image(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return img / 255.0


def read_label(path) -> np.ndarray:
    lab = np.asarray(Image.open(path).convert("L"))
    return (lab >= 128).astype(np.uint8)


def write_image(path, img: np.ndarray):
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_label(path, mask: np.ndarray):
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


# ---------------------------------------------------------------- layout

def write_layout(root, samples: list[BitemporalSample], splits: dict[str, list[str]]):
    """Write samples into ``A/ B/ label/`` plus one stem list per split."""
    root = Path(root)
    for sub in ("A", "B", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(root / "A" / f"{s.name}.png", s.pre)
        write_image(root / "B" / f"{s.name}.png", s.post)
        write_label(root / "label" / f"{s.name}.png", s.label)
    for split, stems in splits.items():
        (root / f"{split}.txt").write_text("".join(f"{st}\n" for st in stems))


def read_stems(root, split: str) -> list[str]:
    path = Path(root) / f"{split}.txt"
    if not path.exists():
        raise FileNotFoundError(f"split list {path} not found")
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def validate_layout(root, splits=("train", "val")):
    root = Path(root)
    for sub in ("A", "B", "label"):
        if not (root / sub).is_dir():
            raise FileNotFoundError(f"dataset root {root} lacks {sub}/")
    for split in splits:
        for stem in read_stems(root, split):
            for sub in ("A", "B", "label"):
                if not (root / sub / f"{stem}.png").exists():
                    raise FileNotFoundError(f"{split} stem {stem!r} missing from {sub}/")


def load_sample(root, stem: str, ratio: float = 1.0, degraded_slot: str = "post") -> BitemporalSample:
    """Load one tile. Equal-size pairs are degraded to ``ratio``; unequal pairs carry their own ratio."""
    root = Path(root)
    pre = read_image(root / "A" / f"{stem}.png")
    post = read_image(root / "B" / f"{stem}.png")
    label = read_label(root / "label" / f"{stem}.png")
    sample = BitemporalSample(pre, post, label, 1.0, degraded_slot, stem)
    if pre.shape != post.shape:
        sample.ratio = sample.hr.shape[0] / sample.lr.shape[0]
        return sample
    return to_lr(sample, ratio)


def load_split(root, split: str, ratio: float = 1.0, degraded_slot: str = "post") -> list[BitemporalSample]:
    return [load_sample(root, st, ratio, degraded_slot) for st in read_stems(root, split)]


# ---------------------------------------------------------------- tiling

def tile(image_pairs, tile_size: int = 256):
    """Cut ``(stem, pre, post, label)`` sources into non-overlapping tiles, row-major.

    Trailing remainders are dropped; sources smaller than one tile are skipped.
    Returns a list of :class:`BitemporalSample` named ``<stem>_<row>_<col>``.
    """
    out = []
    for stem, pre, post, label in image_pairs:
        h, w = label.shape[:2]
        if h < tile_size or w < tile_size:
            log.warning("skipping %s: %dx%d is smaller than tile size %d", stem, h, w, tile_size)
            continue
        for r in range(h // tile_size):
            for c in range(w // tile_size):
                sl = (slice(r * tile_size, (r + 1) * tile_size), slice(c * tile_size, (c + 1) * tile_size))
                out.append(BitemporalSample(pre[sl].copy(), post[sl].copy(), label[sl].copy(), name=f"{stem}_{r}_{c}"))
    return out


def tile_layout(src_root, dst_root, tile_size: int = 256, splits=SPLITS):
    """Tile every split of a source layout into a destination layout."""
    src_root = Path(src_root)
    all_tiles, new_splits = [], {}
    for split in splits:
        if not (src_root / f"{split}.txt").exists():
            continue
        sources = []
        for stem in read_stems(src_root, split):
            sources.append((stem, read_image(src_root / "A" / f"{stem}.png"),
                            read_image(src_root / "B" / f"{stem}.png"),
                            read_label(src_root / "label" / f"{stem}.png")))
        tiles = tile(sources, tile_size)
        new_splits[split] = [t.name for t in tiles]
        all_tiles += tiles
    write_layout(dst_root, all_tiles, new_splits)
    return new_splits


# ---------------------------------------------------------------- resolution

def to_lr(sample: BitemporalSample, ratio: float) -> BitemporalSample:
    """Downsample the degraded slot of an equal-size sample by ``ratio`` (kept at LR size)."""
    if ratio < 1:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    if ratio == 1:
        return replace(sample, ratio=1.0)
    h, w = sample.lr.shape[:2]
    small = resample(sample.lr, scaled_size(h, 1.0 / ratio), scaled_size(w, 1.0 / ratio))
    return replace(sample.with_slots(sample.hr, small), ratio=float(ratio))


def make_sweep(sample: BitemporalSample, spec: SweepSpec) -> list[BitemporalSample]:
    """One inference-ready sample per ratio: degraded slot down to size/r, then back to full size.

    The label array is shared, never copied or modified. A source whose LR
    slot is still at LR size is upsampled first and the ratios apply on top.
    """
    base = replace(sample, degraded_slot=spec.degraded_slot)
    if base.pre.shape != base.post.shape:
        base = prepare_inference_pair(base)
    out = []
    for r in spec.ratios:
        if r == 1:
            out.append(replace(base, ratio=1.0, lr_upsampled=base.lr))
            continue
        lr_sample = to_lr(replace(base, ratio=1.0), r)
        prepared = prepare_inference_pair(lr_sample)
        out.append(replace(prepared, label=sample.label))
    return out


def realized_lr_size(shape, ratio: float) -> tuple[int, int]:
    return (scaled_size(shape[0], 1.0 / ratio), scaled_size(shape[1], 1.0 / ratio))


# ---------------------------------------------------------------- batching

def batches(n: int, batch_size: int = 8, seed: int = 0, epoch: int = 0) -> list[list[int]]:
    """Epoch-seeded shuffled index batches; the last partial batch is kept."""
    if n < 1:
        raise ValueError("cannot batch an empty dataset")
    perm = make_rng(seed, epoch, 0, STREAM_SHUFFLE).permutation(n)
    return [perm[i:i + batch_size].tolist() for i in range(0, n, batch_size)]


# ---------------------------------------------------------------- synthetic fixture

def _texture(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for _ in range(4):
        fy, fx = rng.uniform(0.5, 4.0, 2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.08, 3)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[..., None]
    img += rng.normal(0, 0.02, img.shape)
    return img + rng.uniform(0.3, 0.5, 3)


def _shape_mask(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    extent = rng.integers(max(4, size // 5), max(6, int(size / 2.5)), endpoint=True)
    cy, cx = rng.integers(extent // 2, size - extent // 2, 2)
    if rng.random() < 0.5:
        hh, hw = extent // 2, rng.integers(max(2, extent // 4), extent // 2 + 1)
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= (extent / 2) ** 2


def synthetic_sample(rng, size: int = 64, name: str = "") -> BitemporalSample:
    """Textured background with rectangles/discs appearing, disappearing or persisting."""
    base = _texture(rng, size)
    pre = base.copy()
    post = base + rng.normal(0, 0.01, base.shape) + rng.uniform(-0.03, 0.03, 3)
    label = np.zeros((size, size), dtype=np.uint8)
    for _ in range(rng.integers(1, 3, endpoint=True)):
        m = _shape_mask(rng, size)
        color = rng.uniform(0.6, 1.0, 3) if rng.random() < 0.5 else rng.uniform(0.0, 0.2, 3)
        kind = rng.integers(0, 3)  # 0 appears, 1 disappears, 2 persists
        if kind in (1, 2):
            pre[m] = color
        if kind in (0, 2):
            post[m] = color + rng.normal(0, 0.02, 3)
        label[m] = 0 if kind == 2 else 1
    return BitemporalSample(np.clip(pre, 0, 1).astype(np.float32), np.clip(post, 0, 1).astype(np.float32),
                            label, name=name)


def synthetic_dataset(n: int = 8, size: int = 64, seed: int = 0, prefix: str = "syn") -> list[BitemporalSample]:
    return [synthetic_sample(make_rng(seed, 0, i, stream=7), size, f"{prefix}_{i:03d}") for i in range(n)]


def write_synthetic_layout(root, n_train: int = 8, n_val: int = 4, n_test: int = 4, size: int = 64, seed: int = 0):
    samples = synthetic_dataset(n_train + n_val + n_test, size, seed)
    stems = [s.name for s in samples]
    splits = {"train": stems[:n_train], "val": stems[n_train:n_train + n_val], "test": stems[n_train + n_val:]}
    write_layout(root, samples, splits)
    return splits
