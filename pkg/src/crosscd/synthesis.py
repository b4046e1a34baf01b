"""Random-resolution sample synthesis and training augmentation.

Images are ``(H, W, C)`` float32 arrays in ``[0, 1]``; labels are ``(H, W)``
uint8 arrays in ``{0, 1}``. Randomness always comes in as an explicit
``numpy.random.Generator`` (see :func:`make_rng`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage

CUBIC_A = -0.75

# stream ids keep the per-sample synthesis generator apart from the shuffler
STREAM_SAMPLE = 0
STREAM_SHUFFLE = 1


class ConfigurationError(ValueError):
    pass


def make_rng(seed: int, epoch: int = 0, index: int = 0, stream: int = STREAM_SAMPLE) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream, epoch, index)``.

    Each key gets an independent Philox stream, so the draws for a sample do not
    depend on loading order or worker count.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(epoch), int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class BitemporalSample:
    pre: np.ndarray
    post: np.ndarray
    label: np.ndarray
    ratio: float = 1.0
    degraded_slot: str = "post"
    name: str = ""
    # upsampled LR image before any region swap; Canny input for the LR slot
    lr_upsampled: np.ndarray | None = None

    @property
    def hr(self) -> np.ndarray:
        return self.post if self.degraded_slot == "pre" else self.pre

    @property
    def lr(self) -> np.ndarray:
        return self.pre if self.degraded_slot == "pre" else self.post

    def with_slots(self, hr: np.ndarray, lr: np.ndarray, **kw) -> "BitemporalSample":
        if self.degraded_slot == "pre":
            return replace(self, pre=lr, post=hr, **kw)
        return replace(self, pre=hr, post=lr, **kw)


@dataclass
class SynthesisConfig:
    crop_size: int = 128
    random_reconstruct: bool = True
    flip_prob: float = 0.5
    blur_prob: float = 0.5
    blur_sigma_min: float = 0.1
    blur_sigma_max: float = 1.5
    degraded_slot: str = "post"
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if self.crop_size < 0:
            raise ConfigurationError("crop_size must be >= 0 (0 disables the swap)")
        if self.degraded_slot not in ("pre", "post"):
            raise ConfigurationError(f"degraded_slot must be 'pre' or 'post', got {self.degraded_slot!r}")


@dataclass(frozen=True)
class SwapRegion:
    u: int  # column of the upper-left corner
    v: int  # row of the upper-left corner
    crop_size: int


def cubic_kernel(x, a: float = CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` bicubic interpolation matrix, half-pixel aligned, edge-replicated."""
    if n_in == n_out:
        return np.eye(n_out)
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src).astype(np.int64)
    t = src - base
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in range(-1, 3):
        w = cubic_kernel(t - k)
        cols = np.clip(base + k, 0, n_in - 1)
        np.add.at(mat, (rows, cols), w)
    mat.setflags(write=False)
    return mat


def resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bicubic resize (a = -0.75, no antialiasing), output clamped to [0, 1]."""
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    x = img.astype(np.float64)
    my, mx = _resize_matrix(h, out_h), _resize_matrix(w, out_w)
    out = np.einsum("oh,hw...->ow...", my, x)
    out = np.einsum("pw,ow...->op...", mx, out)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def scaled_size(n: int, factor: float) -> int:
    return max(1, int(math.floor(n * factor + 0.5)))


def upsample_lr(lr: np.ndarray, r_d: float, hr_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Bicubic upsampling by ``r_d``; with ``hr_shape`` the output is exactly that size.

    An LR size obtained by rounding ``H_hr / r_d`` may miss ``H_hr`` by less than
    ``r_d`` pixels after scaling back; anything further off is a configuration error.
    """
    if r_d < 1:
        raise ValueError(f"resolution ratio must be >= 1, got {r_d}")
    if hr_shape is None:
        return resample(lr, scaled_size(lr.shape[0], r_d), scaled_size(lr.shape[1], r_d))
    for n_lr, n_hr in zip(lr.shape[:2], hr_shape[:2]):
        if abs(n_lr * r_d - n_hr) >= max(r_d, 1.0):
            raise ConfigurationError(
                f"LR image {lr.shape[:2]} at ratio {r_d} does not match HR size {tuple(hr_shape[:2])}")
    return resample(lr, hr_shape[0], hr_shape[1])


def degrade(img: np.ndarray, r: float) -> np.ndarray:
    """Downsample by ``r`` and restore the original size."""
    h, w = img.shape[:2]
    small = resample(img, scaled_size(h, 1.0 / r), scaled_size(w, 1.0 / r))
    return resample(small, h, w)


def random_downsample_reconstruct(hr: np.ndarray, r_d: float, rng: np.random.Generator):
    if r_d < 1:
        raise ValueError(f"resolution ratio must be >= 1, got {r_d}")
    r = float(rng.uniform(1.0, r_d)) if r_d > 1 else 1.0
    return degrade(hr, r), r


def swap_region(a: np.ndarray, b: np.ndarray, region: SwapRegion):
    a2, b2 = a.copy(), b.copy()
    rs = slice(region.v, region.v + region.crop_size)
    cs = slice(region.u, region.u + region.crop_size)
    a2[rs, cs], b2[rs, cs] = b[rs, cs], a[rs, cs]
    return a2, b2


def draw_swap_region(height: int, width: int, crop_size: int, rng: np.random.Generator) -> SwapRegion:
    if crop_size < 1 or crop_size > min(height, width):
        raise ValueError(f"crop_size {crop_size} does not fit a {height}x{width} image")
    u = int(rng.integers(0, width - crop_size, endpoint=True))
    v = int(rng.integers(0, height - crop_size, endpoint=True))
    return SwapRegion(u, v, crop_size)


def random_region_swap(a: np.ndarray, b: np.ndarray, crop_size: int, rng: np.random.Generator):
    if a.shape != b.shape:
        raise ValueError(f"swap needs equal shapes, got {a.shape} and {b.shape}")
    region = draw_swap_region(a.shape[0], a.shape[1], crop_size, rng)
    a2, b2 = swap_region(a, b, region)
    return a2, b2, region


@dataclass
class SynthesisRecord:
    """The random decisions taken for one sample."""
    r: float = 1.0
    region: SwapRegion | None = None
    hflip: bool = False
    vflip: bool = False
    sigma: float = 0.0


def synthesize_training_pair(sample: BitemporalSample, cfg: SynthesisConfig, rng: np.random.Generator,
                             record: SynthesisRecord | None = None) -> BitemporalSample:
    hr, lr = sample.hr, sample.lr
    lr_u = upsample_lr(lr, sample.ratio, hr.shape)
    hr_d, r = hr, 1.0
    if cfg.random_reconstruct:
        hr_d, r = random_downsample_reconstruct(hr, sample.ratio, rng)
    hr_s, lr_s = hr_d, lr_u
    region = None
    if cfg.crop_size > 0:
        hr_s, lr_s, region = random_region_swap(hr_d, lr_u, cfg.crop_size, rng)
    if record is not None:
        record.r, record.region = r, region
    return sample.with_slots(hr_s, lr_s, lr_upsampled=lr_u)


def prepare_inference_pair(sample: BitemporalSample) -> BitemporalSample:
    lr_u = upsample_lr(sample.lr, sample.ratio, sample.hr.shape)
    return sample.with_slots(sample.hr, lr_u, lr_upsampled=lr_u)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    radius = int(math.ceil(3.0 * sigma))
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[..., c] = ndimage.gaussian_filter(img[..., c].astype(np.float64), sigma, mode="reflect", radius=radius)
    return np.clip(out, 0.0, 1.0)


def flip(sample: BitemporalSample, axis: int) -> BitemporalSample:
    """Flip images, label and the cached LR image along ``axis`` (0 rows, 1 columns)."""
    f = lambda x: None if x is None else np.ascontiguousarray(np.flip(x, axis=axis))
    return replace(sample, pre=f(sample.pre), post=f(sample.post), label=f(sample.label),
                   lr_upsampled=f(sample.lr_upsampled))


def blur(sample: BitemporalSample, sigma: float) -> BitemporalSample:
    g = lambda x: None if x is None else gaussian_blur(x, sigma)
    return replace(sample, pre=g(sample.pre), post=g(sample.post), lr_upsampled=g(sample.lr_upsampled))


def augment(sample: BitemporalSample, rng: np.random.Generator, cfg: SynthesisConfig | None = None,
            record: SynthesisRecord | None = None) -> BitemporalSample:
    """Random horizontal/vertical flips and Gaussian blur.

    Draw order is fixed (hflip, vflip, blur gate, sigma) so decisions are
    reproducible for a given generator key.
    """
    cfg = cfg or SynthesisConfig()
    hflip = rng.random() < cfg.flip_prob
    vflip = rng.random() < cfg.flip_prob
    do_blur = rng.random() < cfg.blur_prob
    sigma = float(rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max)) if do_blur else 0.0
    if hflip:
        sample = flip(sample, 1)
    if vflip:
        sample = flip(sample, 0)
    if sigma > 0:
        sample = blur(sample, sigma)
    if record is not None:
        record.hflip, record.vflip, record.sigma = bool(hflip), bool(vflip), sigma
    return sample
