"""Live-only photometric augmentation and CutMix with split label routing.

The focal head receives CutMix-mixed targets; the contrastive head always
receives the base sample's original label.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .datamodel import Sample
from .errors import ConfigError, DimensionError

JPEG_BLOCK = 4


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    transform_prob: float = 0.5  # per photometric/compression transform
    brightness_limit: float = 0.10
    contrast_limit: float = 0.10
    hue_shift_limit: float = 10.0  # units on a 0..255 hue wheel
    sat_shift_limit: float = 10.0  # units on a 0..255 saturation scale
    gamma_range: Tuple[float, float] = (0.80, 1.20)
    jpeg_quality_range: Tuple[int, int] = (40, 60)
    cutmix_prob: float = 0.3
    cutmix_alpha: float = 0.6
    live_augment: bool = True

    def __post_init__(self):
        for name in ("flip_prob", "transform_prob", "cutmix_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("brightness_limit", "contrast_limit", "hue_shift_limit", "sat_shift_limit"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            raise ConfigError("gamma_range must satisfy 0 < lo <= hi")
        qlo, qhi = self.jpeg_quality_range
        if not 1 <= qlo <= qhi <= 100:
            raise ConfigError("jpeg_quality_range must satisfy 1 <= lo <= hi <= 100")
        if self.cutmix_alpha <= 0:
            raise ConfigError("cutmix_alpha must be positive")

    @classmethod
    def identity(cls, **overrides) -> "AugmentConfig":
        """Config whose live augmentation is a no-op."""
        base = dict(
            flip_prob=0.0, brightness_limit=0.0, contrast_limit=0.0, hue_shift_limit=0.0,
            sat_shift_limit=0.0, gamma_range=(1.0, 1.0), jpeg_quality_range=(100, 100),
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_range"] = list(self.gamma_range)
        d["jpeg_quality_range"] = list(self.jpeg_quality_range)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown augment keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("gamma_range", "jpeg_quality_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class MixedSample:
    image: np.ndarray
    focal_target: float
    supcon_label: int  # 1 = live, 0 = attack
    source_ids: Tuple[str, Optional[str]]
    lam: float
    patch_area: int = 0


# --------------------------------------------------------------------------
# Photometric ops
# --------------------------------------------------------------------------

def adjust_brightness_contrast(img, alpha: float, beta: float):
    return np.clip(alpha * img + beta, 0.0, 1.0)


def adjust_gamma(img, gamma: float):
    return np.clip(img, 0.0, 1.0) ** gamma


def rgb_to_hsv(img):
    """Hexcone HSV, all channels in [0, 1]."""
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = img.max(axis=-1)
    mn = img.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def shift_hue_saturation(img, hue_shift: float, sat_shift: float):
    """Shift hue and saturation, both given in 0..255 units."""
    if hue_shift == 0 and sat_shift == 0:
        return img
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + hue_shift / 255.0) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] + sat_shift / 255.0, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def compression_proxy(img, quality: float, block: int = JPEG_BLOCK):
    """Block-quantization stand-in for JPEG at ``quality`` in [1, 100].

    Deviations from each block's mean are rounded to a step of
    ``(100 - quality) / 400``, so lower quality degrades more and 100 is a
    no-op.
    """
    step = (100.0 - quality) / 400.0
    if step <= 0:
        return img
    out = np.array(img, dtype=np.float64, copy=True)
    h, w = out.shape[:2]
    for y in range(0, h, block):
        for x in range(0, w, block):
            tile = out[y:y + block, x:x + block]
            mean = tile.mean(axis=(0, 1), keepdims=True)
            out[y:y + block, x:x + block] = mean + np.round((tile - mean) / step) * step
    return np.clip(out, 0.0, 1.0)


def augment_live(image, config: AugmentConfig, rng: np.random.Generator):
    """Apply the genuine-sample augmentation chain; output stays in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    c = config
    if rng.uniform() < c.flip_prob:
        img = img[:, ::-1, :]
    if rng.uniform() < c.transform_prob:
        alpha = 1.0 + rng.uniform(-c.contrast_limit, c.contrast_limit)
        beta = rng.uniform(-c.brightness_limit, c.brightness_limit)
        img = adjust_brightness_contrast(img, alpha, beta)
    if rng.uniform() < c.transform_prob:
        img = shift_hue_saturation(
            img, rng.uniform(-c.hue_shift_limit, c.hue_shift_limit), rng.uniform(-c.sat_shift_limit, c.sat_shift_limit)
        )
    if rng.uniform() < c.transform_prob:
        img = adjust_gamma(img, rng.uniform(*c.gamma_range))
    if rng.uniform() < c.transform_prob:
        img = compression_proxy(img, rng.uniform(*c.jpeg_quality_range))
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# CutMix
# --------------------------------------------------------------------------

def cutmix_box(height: int, width: int, lam0: float, rng: np.random.Generator):
    """Box (y1, y2, x1, x2) covering about ``1 - lam0`` of the image, clipped.

    Sides are rounded and at least one pixel, so a drawn mix always moves
    some pixels.
    """
    ratio = np.sqrt(1.0 - lam0)
    cut_h = max(1, int(round(height * ratio)))
    cut_w = max(1, int(round(width * ratio)))
    cy = int(rng.integers(height))
    cx = int(rng.integers(width))
    y1, y2 = np.clip([cy - cut_h // 2, cy - cut_h // 2 + cut_h], 0, height)
    x1, x2 = np.clip([cx - cut_w // 2, cx - cut_w // 2 + cut_w], 0, width)
    return int(y1), int(y2), int(x1), int(x2)


def paste_patch(base, donor, box):
    base = np.asarray(base, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if base.shape != donor.shape:
        raise DimensionError(f"cutmix: base {base.shape} and donor {donor.shape} differ")
    y1, y2, x1, x2 = box
    out = base.copy()
    out[y1:y2, x1:x2] = donor[y1:y2, x1:x2]
    return out, max(0, y2 - y1) * max(0, x2 - x1)


def mix_from_box(base, base_label: int, donor, donor_label: int, box, base_id="", donor_id=None) -> MixedSample:
    image, area = paste_patch(base, donor, box)
    total = image.shape[0] * image.shape[1]
    # One division of an exact integer numerator.
    target = (base_label * (total - area) + donor_label * area) / total
    return MixedSample(image, target, int(base_label), (base_id, donor_id), (total - area) / total, area)


def cutmix(base, base_label: int, donor, donor_label: int, alpha: float, rng: np.random.Generator,
           base_id: str = "", donor_id: Optional[str] = None) -> MixedSample:
    base = np.asarray(base, dtype=np.float64)
    if base.shape != np.shape(donor):
        raise DimensionError(f"cutmix: base {base.shape} and donor {np.shape(donor)} differ")
    lam0 = rng.beta(alpha, alpha)
    box = cutmix_box(base.shape[0], base.shape[1], lam0, rng)
    return mix_from_box(base, base_label, donor, donor_label, box, base_id, donor_id)


def apply_batch_policy(batch: Sequence[Sample], config: AugmentConfig, rng: np.random.Generator) -> List[MixedSample]:
    """Live-only augmentation, then per-sample CutMix against a random other member."""
    if config.cutmix_prob > 0 and len(batch) < 2:
        raise ConfigError("cutmix needs a batch of at least 2 samples")
    images = []
    for s in batch:
        if s.is_live and config.live_augment:
            images.append(augment_live(s.image, config, rng))
        else:
            images.append(s.image)
    labels = [s.label.numeric for s in batch]
    out = []
    n = len(batch)
    for i, s in enumerate(batch):
        if config.cutmix_prob > 0 and rng.uniform() < config.cutmix_prob:
            j = int(rng.integers(n - 1))
            j += j >= i
            out.append(cutmix(images[i], labels[i], images[j], labels[j], config.cutmix_alpha, rng, s.id, batch[j].id))
        else:
            out.append(MixedSample(images[i], float(labels[i]), labels[i], (s.id, None), 1.0, 0))
    return out


def stack(mixed: Sequence[MixedSample]):
    """Arrays for the model: images (N, H, W, 3), focal targets, contrastive labels."""
    images = np.stack([m.image for m in mixed])
    targets = np.array([m.focal_target for m in mixed], dtype=np.float64)
    labels = np.array([m.supcon_label for m in mixed], dtype=np.int64)
    return images, targets, labels
