"""Seeded geometric and colour augmentation of (image, labels, classes) triples.

Random numbers come from Philox4x64-10 keyed by the 64-bit seed, with the
counter set to ``(0, 0, stream, draw)``. Uniforms are ``(word >> 11) * 2**-53``
from the raw 64-bit output words, so the draws can be reproduced outside
numpy. Every call consumes a fixed number of words whatever ops are
enabled, so toggling one op never shifts another op's parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .raster import HoverField, as_class_image, as_label_image, as_rgb_image
from .targets import hover_targets

GEOMETRIC_STREAM = 0
COLOUR_STREAM = 1
_WORDS = 8


@dataclass(frozen=True)
class AugmentSpec:
    seed: int = 0
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rot90: bool = True
    rescale: tuple[float, float] | None = (0.75, 1.25)
    rotation: tuple[float, float] | None = (-90.0, 90.0)
    crop_size: tuple[int, int] | None = None
    hue_shift: tuple[float, float] | None = (-8.0, 8.0)
    saturation: tuple[float, float] | None = (0.8, 1.2)
    value: tuple[float, float] | None = (0.8, 1.2)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        for name in ("hflip_prob", "vflip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("rescale", "rotation", "hue_shift", "saturation", "value"):
            rng = getattr(self, name)
            if rng is None:
                continue
            rng = tuple(float(x) for x in rng)
            if len(rng) != 2 or not rng[0] < rng[1]:
                raise ValueError(f"{name} range must be (low, high) with low < high, got {rng}")
            object.__setattr__(self, name, rng)
        if self.rescale is not None and self.rescale[0] <= 0:
            raise ValueError("rescale factors must be positive")
        for name in ("saturation", "value"):
            rng = getattr(self, name)
            if rng is not None and rng[0] < 0:
                raise ValueError(f"{name} factors must be non-negative")
        if self.crop_size is not None:
            crop = tuple(int(x) for x in self.crop_size)
            if len(crop) != 2 or min(crop) < 1:
                raise ValueError(f"crop size must be two positive ints, got {self.crop_size}")
            object.__setattr__(self, "crop_size", crop)

    def to_dict(self) -> dict:
        return asdict(self)


def uniforms(seed: int, draw: int, stream: int, n: int = _WORDS) -> np.ndarray:
    """``n`` uniforms in [0, 1) from the Philox block at (seed, stream, draw)."""
    bitgen = np.random.Philox(key=seed, counter=[0, 0, stream, draw])
    words = np.asarray(bitgen.random_raw(n), dtype=np.uint64)
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _between(u: float, bounds: tuple[float, float]) -> float:
    return bounds[0] + u * (bounds[1] - bounds[0])


# exact raster permutations

def hflip(img, m, c):
    return img[:, ::-1].copy(), m[:, ::-1].copy(), c[:, ::-1].copy()


def vflip(img, m, c):
    return img[::-1].copy(), m[::-1].copy(), c[::-1].copy()


def rot90(img, m, c, k: int = 1):
    """Counter-clockwise quarter turns."""
    return (np.rot90(img, k, axes=(0, 1)).copy(), np.rot90(m, k).copy(), np.rot90(c, k).copy())


# resampling

def _resample(a: np.ndarray, matrix, offset, out_shape, order: int, mode: str) -> np.ndarray:
    """Inverse-map resampling; ``a`` is 2-D or channel-last 3-D."""
    if a.ndim == 2:
        src = a.astype(np.float64)
        out = ndimage.affine_transform(src, matrix, offset, output_shape=out_shape,
                                       order=order, mode=mode, cval=0.0)
        return out
    return np.stack([_resample(a[..., k], matrix, offset, out_shape, order, mode)
                     for k in range(a.shape[2])], axis=-1)


def _to_uint8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def _apply(img, m, c, matrix, offset, out_shape, mode):
    img2 = _to_uint8(_resample(img, matrix, offset, out_shape, 1, mode))
    m2 = np.rint(_resample(m, matrix, offset, out_shape, 0, mode)).astype(np.int32)
    c2 = np.rint(_resample(c, matrix, offset, out_shape, 0, mode)).astype(np.uint8)
    return img2, m2, c2


def rescale(img, m, c, factor: float):
    """Resize by ``factor`` (bilinear image, nearest labels), pixel centres aligned."""
    h, w = m.shape
    out_shape = (max(1, int(round(h * factor))), max(1, int(round(w * factor))))
    if factor == 1.0:
        return img.copy(), m.copy(), c.copy()
    sy, sx = out_shape[0] / h, out_shape[1] / w
    matrix = np.diag([1.0 / sy, 1.0 / sx])
    offset = np.array([0.5 / sy - 0.5, 0.5 / sx - 0.5])
    return _apply(img, m, c, matrix, offset, out_shape, "nearest")


def rotate(img, m, c, degrees: float):
    """Rotate counter-clockwise about the image centre; uncovered pixels become 0."""
    if degrees == 0.0:
        return img.copy(), m.copy(), c.copy()
    h, w = m.shape
    t = np.deg2rad(degrees)
    # maps output (row, col) to source (row, col)
    matrix = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - matrix @ centre
    return _apply(img, m, c, matrix, offset, (h, w), "constant")


def crop(img, m, c, top: int, left: int, size: tuple[int, int]):
    ch, cw = size
    h, w = m.shape
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w}")
    sl = (slice(top, top + ch), slice(left, left + cw))
    return img[sl].copy(), m[sl].copy(), c[sl].copy()


@dataclass
class Augmented:
    image: np.ndarray
    labels: np.ndarray
    classes: np.ndarray
    params: dict


def apply_geometric(img, m, c, spec: AugmentSpec, draw: int) -> Augmented:
    """Apply one seeded geometric draw identically to all three rasters.

    Order: horizontal flip, vertical flip, quarter turns, rescale, rotation,
    crop. The drawn parameters are returned alongside the rasters.
    """
    img, m, c = as_rgb_image(img), as_label_image(m), as_class_image(c)
    if not (img.shape[:2] == m.shape == c.shape):
        raise ValueError(f"rasters are not co-registered: {img.shape}, {m.shape}, {c.shape}")
    u = uniforms(spec.seed, draw, GEOMETRIC_STREAM)
    params = {"draw": draw}
    params["hflip"] = bool(u[0] < spec.hflip_prob)
    params["vflip"] = bool(u[1] < spec.vflip_prob)
    params["rot90"] = int(u[2] * 4) if spec.rot90 else 0
    params["scale"] = _between(u[3], spec.rescale) if spec.rescale else 1.0
    params["angle"] = _between(u[4], spec.rotation) if spec.rotation else 0.0

    if params["hflip"]:
        img, m, c = hflip(img, m, c)
    if params["vflip"]:
        img, m, c = vflip(img, m, c)
    if params["rot90"]:
        img, m, c = rot90(img, m, c, params["rot90"])
    img, m, c = rescale(img, m, c, params["scale"])
    img, m, c = rotate(img, m, c, params["angle"])
    if spec.crop_size is not None:
        h, w = m.shape
        ch, cw = spec.crop_size
        if ch > h or cw > w:
            raise ValueError(f"crop {ch}x{cw} larger than image {h}x{w} after rescale")
        params["crop"] = [int(u[5] * (h - ch + 1)), int(u[6] * (w - cw + 1))]
        img, m, c = crop(img, m, c, *params["crop"], spec.crop_size)
    return Augmented(img, m, c, params)


def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexagonal HSV: H in [0, 360), S and V in [0, 1]. Grey pixels get hue 0."""
    a = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    v = a.max(axis=-1)
    delta = v - a.min(axis=-1)
    s = np.where(v > 0, delta / np.where(v > 0, v, 1.0), 0.0)
    d = np.where(delta > 0, delta, 1.0)
    hue = np.where(v == r, ((g - b) / d) % 6.0,
                   np.where(v == g, (b - r) / d + 2.0, (r - g) / d + 4.0))
    hue = np.where(delta > 0, hue * 60.0, 0.0) % 360.0
    return np.stack([hue, s, v], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`, returning uint8 RGB (rounded, clipped)."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0] % 360.0, hsv[..., 1], hsv[..., 2]
    chroma = v * s
    hp = h / 60.0
    x = chroma * (1.0 - np.abs(hp % 2.0 - 1.0))
    zero = np.zeros_like(h)
    sector = np.floor(hp).astype(int) % 6
    choices = [
        (chroma, x, zero), (x, chroma, zero), (zero, chroma, x),
        (zero, x, chroma), (x, zero, chroma), (chroma, zero, x),
    ]
    rgb = np.zeros(h.shape + (3,))
    for k, (r1, g1, b1) in enumerate(choices):
        sel = sector == k
        rgb[sel] = np.stack([r1[sel], g1[sel], b1[sel]], axis=-1)
    rgb += (v - chroma)[..., None]
    return _to_uint8(rgb * 255.0)


def hsv_shift(img, hue: float = 0.0, saturation: float = 1.0, value: float = 1.0) -> np.ndarray:
    """Shift hue by ``hue`` degrees and scale S and V (clamped to [0, 1])."""
    hsv = rgb_to_hsv(as_rgb_image(img))
    hsv[..., 0] = (hsv[..., 0] + hue) % 360.0
    hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * value, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def hsv_jitter(img, spec: AugmentSpec, draw: int) -> tuple[np.ndarray, dict]:
    u = uniforms(spec.seed, draw, COLOUR_STREAM)
    params = {
        "hue": _between(u[0], spec.hue_shift) if spec.hue_shift else 0.0,
        "saturation": _between(u[1], spec.saturation) if spec.saturation else 1.0,
        "value": _between(u[2], spec.value) if spec.value else 1.0,
    }
    return hsv_shift(img, **params), params


def regenerate_hover(m) -> HoverField:
    """HoVer targets recomputed from a transformed instance map."""
    return hover_targets(m)


def augment(img, m, c, spec: AugmentSpec, draw: int) -> tuple[Augmented, HoverField]:
    """Geometric draw, then colour jitter, then fresh HoVer targets."""
    out = apply_geometric(img, m, c, spec, draw)
    out.image, colour = hsv_jitter(out.image, spec, draw)
    out.params["colour"] = colour
    return out, regenerate_hover(out.labels)
