"""Seeded synthetic nucleus scenes for tests, demos and self-checks."""

from __future__ import annotations

import numpy as np

from .raster import relabel_sequential
from .targets import connected_components


def _ellipse_distance(shape, center, radii, angle):
    rows, cols = np.indices(shape, dtype=np.float64)
    dr, dc = rows - center[0], cols - center[1]
    cos, sin = np.cos(angle), np.sin(angle)
    u = (dc * cos + dr * sin) / radii[0]
    v = (-dc * sin + dr * cos) / radii[1]
    return np.sqrt(u * u + v * v)


def _blob(rng, shape, center, r_min, r_max):
    radii = rng.uniform(r_min, r_max, size=2)
    return _ellipse_distance(shape, center, radii, rng.uniform(0, np.pi)), radii


def nucleus_scene(rng: np.random.Generator, shape=(96, 96), pairs: int = 2, singles: int = 3,
                  r_min: float = 4.5, r_max: float = 10.0, gap: int = 2, attempts: int = 200) -> np.ndarray:
    """Instance map of touching ellipse pairs plus isolated ellipses.

    Pixels claimed by two ellipses of a pair go to the one with the smaller
    normalized radial distance. Distinct groups are kept ``gap`` pixels
    apart (8-neighbourhood), every instance is a single connected region,
    and ids are sequential in row-major order.
    """
    h, w = shape
    out = np.zeros(shape, dtype=np.int32)
    next_id = 1
    groups = [2] * pairs + [1] * singles
    for size in groups:
        for _ in range(attempts):
            c = rng.uniform([r_max + 1, r_max + 1], [h - r_max - 2, w - r_max - 2])
            d1, rad1 = _blob(rng, shape, c, r_min, r_max)
            dists = [d1]
            if size == 2:
                theta = rng.uniform(0, 2 * np.pi)
                step = (rad1.mean() + rng.uniform(r_min, r_max)) * rng.uniform(0.7, 0.9)
                c2 = c + step * np.array([np.sin(theta), np.cos(theta)])
                if not (r_max < c2[0] < h - r_max - 1 and r_max < c2[1] < w - r_max - 1):
                    continue
                dists.append(_blob(rng, shape, c2, r_min, r_max)[0])
            stack = np.stack(dists)
            inside = stack <= 1.0
            owner = np.where(inside.any(axis=0), np.argmin(np.where(inside, stack, np.inf), axis=0) + 1, 0)
            grown = _dilate(owner > 0, gap)
            if np.any(grown & (out > 0)):
                continue
            parts = [owner == k for k in range(1, size + 1)]
            if any(p.sum() < 20 or connected_components(p).max() != 1 for p in parts):
                continue
            if size == 2 and not _touching(parts[0], parts[1]):
                continue
            for p in parts:
                out[p] = next_id
                next_id += 1
            break
    return relabel_sequential(out)[0]


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        out = grown
    return out


def _touching(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.any(_dilate(a, 1) & b))


def random_label_map(rng: np.random.Generator, shape=(32, 32), max_instances: int = 10) -> np.ndarray:
    """Random rectangles painted in sequence, later ones on top, then relabelled 1..K."""
    out = np.zeros(shape, dtype=np.int32)
    k = int(rng.integers(0, max_instances + 1))
    for i in range(1, k + 1):
        r0, c0 = rng.integers(0, shape[0]), rng.integers(0, shape[1])
        hh, ww = rng.integers(2, 9, size=2)
        out[r0:r0 + hh, c0:c0 + ww] = i
    return relabel_sequential(out)[0]


def class_image_for(rng: np.random.Generator, labels: np.ndarray, noise: float = 0.0) -> np.ndarray:
    """Class raster giving each instance one random nucleus class.

    With ``noise`` > 0 that fraction of foreground pixels gets a random class.
    """
    classes = np.zeros(labels.shape, dtype=np.uint8)
    for i in np.unique(labels):
        if i:
            classes[labels == i] = rng.integers(1, 7)
    if noise:
        flip = (labels > 0) & (rng.random(labels.shape) < noise)
        classes[flip] = rng.integers(1, 7, size=int(flip.sum()))
    return classes
