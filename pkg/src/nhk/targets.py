"""Instance centroids and HoVer regression targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import HoverField, as_label_image, relabel_sequential

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Centroid:
    row: float
    col: float
    instance_id: int


def connected_components(mask) -> np.ndarray:
    """Label 8-connected foreground components 1..K in row-major first-pixel order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got {mask.shape}")
    labels, _ = ndimage.label(mask, structure=_EIGHT)
    labels, _ = relabel_sequential(labels)
    return labels


def _instance_stats(m: np.ndarray):
    """Per-id pixel counts and coordinate sums, indexed by instance id."""
    rows, cols = np.indices(m.shape)
    flat = m.ravel()
    n = int(flat.max()) + 1 if flat.size else 1
    count = np.bincount(flat, minlength=n).astype(np.float64)
    row_sum = np.bincount(flat, weights=rows.ravel(), minlength=n)
    col_sum = np.bincount(flat, weights=cols.ravel(), minlength=n)
    return count, row_sum, col_sum


def centroids(m) -> list[Centroid]:
    """Centre of mass of every instance, in increasing id order."""
    m = as_label_image(m)
    count, row_sum, col_sum = _instance_stats(m)
    out = []
    for i in np.flatnonzero(count):
        if i == 0:
            continue
        out.append(Centroid(row_sum[i] / count[i], col_sum[i] / count[i], int(i)))
    return out


def raw_distances(m) -> tuple[np.ndarray, np.ndarray]:
    """Un-normalized (col - centroid col, row - centroid row) for every instance pixel."""
    m = as_label_image(m)
    count, row_sum, col_sum = _instance_stats(m)
    n = np.where(count > 0, count, 1.0)[m]
    rows, cols = np.indices(m.shape)
    fg = m > 0
    # integer numerators are exact, so a mirrored map yields bit-exact negations
    raw_h = np.where(fg, (n * cols - col_sum[m]) / n, 0.0)
    raw_v = np.where(fg, (n * rows - row_sum[m]) / n, 0.0)
    return raw_h, raw_v


def _scale_per_instance(raw: np.ndarray, m: np.ndarray) -> np.ndarray:
    flat = m.ravel()
    n = int(flat.max()) + 1 if flat.size else 1
    peak = np.zeros(n)
    np.maximum.at(peak, flat, np.abs(raw).ravel())
    peak[0] = 0.0
    denom = np.where(peak > 0, peak, 1.0)
    return np.where(m > 0, raw / denom[m], 0.0)


def hover_targets(m) -> HoverField:
    """Horizontal/vertical offsets from each instance's centre of mass.

    Each channel is divided by its per-instance maximum absolute value, so
    the extremes inside every instance land on -1 and +1. A channel that is
    identically zero within an instance stays zero.
    """
    m = as_label_image(m)
    if m.size == 0:
        return HoverField(np.zeros(m.shape), np.zeros(m.shape))
    raw_h, raw_v = raw_distances(m)
    return HoverField(_scale_per_instance(raw_h, m), _scale_per_instance(raw_v, m))
