"""Raster containers shared by every stage of the pipeline.

Conventions: arrays are row-major with the origin at the top-left. Rows are
the vertical (v) axis, columns the horizontal (h) axis. Probability and
one-hot stacks are channel-last, shape ``(H, W, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUM_CLASSES = 7  # background + six nucleus types
NUCLEUS_CLASSES = (
    "epithelial",
    "lymphocyte",
    "plasma",
    "eosinophil",
    "neutrophil",
    "connective",
)
MAX_SIDE = 2**16


def _check_2d(a: np.ndarray, what: str) -> None:
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {a.shape}")
    if max(a.shape, default=0) > MAX_SIDE:
        raise ValueError(f"{what} side exceeds {MAX_SIDE} pixels: {a.shape}")


def as_label_image(m) -> np.ndarray:
    """Validate and return an instance map as an ``int32`` array."""
    a = np.asarray(m)
    _check_2d(a, "label image")
    if a.size and not np.issubdtype(a.dtype, np.integer):
        raise TypeError(f"label image must be integer, got {a.dtype}")
    if a.size and a.min() < 0:
        raise ValueError("label image ids must be non-negative")
    if a.size and a.max() > np.iinfo(np.int32).max:
        raise ValueError("label image ids exceed the 32-bit range")
    return a.astype(np.int32, copy=False)


def as_class_image(c) -> np.ndarray:
    a = np.asarray(c)
    _check_2d(a, "class image")
    if a.size and not np.issubdtype(a.dtype, np.integer):
        raise TypeError(f"class image must be integer, got {a.dtype}")
    if a.size and (a.min() < 0 or a.max() >= NUM_CLASSES):
        raise ValueError(f"class ids must lie in 0..{NUM_CLASSES - 1}")
    return a.astype(np.uint8, copy=False)


def as_rgb_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"RGB image must have shape (H, W, 3), got {a.shape}")
    if a.dtype != np.uint8:
        raise TypeError(f"RGB image must be uint8, got {a.dtype}")
    return a


def check_probability_stack(p, normalized: bool = False, atol: float = 1e-6) -> np.ndarray:
    """Validate a channel-last probability stack and return it as float64.

    With ``normalized`` set, every pixel's channel vector must sum to one.
    """
    a = np.asarray(p, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"probability stack must be (H, W, C), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("probability stack contains non-finite values")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if normalized and a.size and np.max(np.abs(a.sum(axis=-1) - 1.0)) > atol:
        raise ValueError("probability stack is not normalized per pixel")
    return a


@dataclass(frozen=True)
class HoverField:
    """Horizontal and vertical distance maps, each in [-1, 1].

    Both rasters are zero on background. Arrays are stored read-only.
    """

    h: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        if h.ndim != 2 or h.shape != v.shape:
            raise ValueError(f"h and v must be equal 2-D shapes, got {h.shape} and {v.shape}")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(v))):
            raise ValueError("hover field contains non-finite values")
        h.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.h.shape

    def validate(self, labels: np.ndarray | None = None) -> None:
        """Raise ``ValueError`` unless values are in range (and zero on background)."""
        if self.h.size and max(np.abs(self.h).max(), np.abs(self.v).max()) > 1.0:
            raise ValueError("hover values must lie in [-1, 1]")
        if labels is not None:
            bg = np.asarray(labels) == 0
            if np.any(self.h[bg] != 0) or np.any(self.v[bg] != 0):
                raise ValueError("hover field is nonzero on background")

    def stack(self) -> np.ndarray:
        """Channel-major ``(2, H, W)`` array: horizontal first."""
        return np.stack([self.h, self.v])

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "HoverField":
        return cls(np.zeros(shape), np.zeros(shape))


def relabel_sequential(m) -> tuple[np.ndarray, dict[int, int]]:
    """Renumber nonzero ids to 1..K in order of first row-major appearance.

    Returns the relabelled map and the old-to-new id mapping.
    """
    m = as_label_image(m)
    flat = m.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids != 0
    ids, first = ids[keep], first[keep]
    ordered = ids[np.argsort(first, kind="stable")]
    mapping = {int(old): new for new, old in enumerate(ordered, start=1)}
    if not mapping:
        return m.copy(), {}
    lut_keys = np.concatenate([[0], ordered])
    lut_vals = np.arange(len(lut_keys), dtype=np.int32)
    order = np.argsort(lut_keys)
    pos = np.searchsorted(lut_keys[order], flat)
    out = lut_vals[order][pos].reshape(m.shape)
    return out, mapping


def one_hot(c, channels: int = NUM_CLASSES) -> np.ndarray:
    c = np.asarray(c)
    _check_2d(c, "class image")
    if c.size and (c.min() < 0 or c.max() >= channels):
        raise ValueError(
            f"{channels} channels cannot encode class id {int(c.max())}"
        )
    return np.eye(channels, dtype=np.float64)[c]


def argmax_channels(p) -> np.ndarray:
    """Per-pixel index of the largest channel; ties go to the lowest index."""
    a = np.asarray(p)
    if a.ndim != 3:
        raise ValueError(f"expected (H, W, C) stack, got {a.shape}")
    if a.shape[2] > NUM_CLASSES:
        raise ValueError(f"at most {NUM_CLASSES} channels supported, got {a.shape[2]}")
    # np.argmax returns the first maximal index
    return np.argmax(a, axis=-1).astype(np.uint8)
