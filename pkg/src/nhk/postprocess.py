"""Turn head outputs into classified nucleus instances.

The pipeline follows the HoVer-Net recipe: threshold the foreground map,
take Sobel derivatives of the normalized HoVer maps, seed markers where the
edge energy is low, and grow them with a marker-controlled watershed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy import ndimage

from .raster import HoverField, as_class_image, as_label_image, relabel_sequential
from .targets import connected_components

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class PostprocessParams:
    fg_threshold: float = 0.5
    marker_threshold: float = 0.4
    sobel_ksize: int = 5
    min_instance_size: int = 10

    def __post_init__(self):
        if not 0 < self.fg_threshold < 1:
            raise ValueError("fg_threshold must lie in (0, 1)")
        if not 0 < self.marker_threshold < 1:
            raise ValueError("marker_threshold must lie in (0, 1)")
        if self.sobel_ksize < 3 or self.sobel_ksize % 2 == 0:
            raise ValueError("sobel_ksize must be odd and >= 3")
        if self.min_instance_size < 0:
            raise ValueError("min_instance_size must be non-negative")


@dataclass
class InstanceClassification:
    """Instance id -> assigned class and the per-class pixel votes (index 0 = background)."""

    classes: dict[int, int] = field(default_factory=dict)
    votes: dict[int, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, instance_id: int) -> int:
        return self.classes[instance_id]

    def __len__(self) -> int:
        return len(self.classes)


def sobel_kernel(ksize: int, axis: int = 1) -> np.ndarray:
    """Separable Sobel derivative kernel (OpenCV coefficients).

    ``axis=1`` differentiates along columns (horizontal), ``axis=0`` along rows.
    """
    if ksize < 3 or ksize % 2 == 0:
        raise ValueError(f"Sobel kernel size must be odd and >= 3, got {ksize}")
    smooth = np.array([comb(ksize - 1, i) for i in range(ksize)], dtype=np.float64)
    base = np.array([comb(ksize - 3, i) for i in range(ksize - 2)], dtype=np.float64)
    deriv = np.convolve(base, [-1.0, 0.0, 1.0])
    kernel = np.outer(smooth, deriv)
    return kernel if axis == 1 else kernel.T


def sobel_derivative(field, ksize: int = 5, axis: int = 1) -> np.ndarray:
    """Raw Sobel response with symmetric (edge-repeating) reflection at borders."""
    field = np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(field)):
        raise ValueError("field must be finite")
    return ndimage.correlate(field, sobel_kernel(ksize, axis), mode="reflect")


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; constant input maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return a.copy()
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def sobel_gradient(field, ksize: int = 5, axis: int = 1, magnitude: bool = False) -> np.ndarray:
    """Sobel derivative min-max normalized to [0, 1] per image.

    With ``magnitude`` the absolute response is normalized instead of the
    signed one.
    """
    d = sobel_derivative(field, ksize, axis)
    return minmax_normalize(np.abs(d) if magnitude else d)


def edge_energy(mask: np.ndarray, hv: HoverField, ksize: int) -> np.ndarray:
    """Boundary strength in [0, 1], zero off the mask.

    Inside a nucleus the HoVer maps increase along their own axis, so the
    signed derivative is positive there and strongly negative across any
    boundary. Energy is ``1 - normalized signed derivative``, maxed over
    the two directions; this stays size-independent where an absolute
    gradient would flag the steep interior ramp of a small nucleus.
    """
    h = minmax_normalize(hv.h)
    v = minmax_normalize(hv.v)
    eh = 1.0 - sobel_gradient(h, ksize, axis=1)
    ev = 1.0 - sobel_gradient(v, ksize, axis=0)
    return np.where(mask, np.maximum(eh, ev), 0.0)


def watershed(elevation: np.ndarray, markers: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Priority-flood from markers over an 8-connected grid, restricted to ``mask``.

    The queue is ordered by (elevation, insertion order); markers enter in
    row-major order, so ties resolve first-in first-out. Masked pixels not
    reachable from any marker stay 0.
    """
    elevation = np.asarray(elevation, dtype=np.float64)
    out = np.where(mask, np.asarray(markers), 0).astype(np.int32)
    h, w = out.shape
    heap = []
    counter = 0
    for idx in np.flatnonzero(out):
        r, c = divmod(int(idx), w)
        heap.append((elevation[r, c], counter, r, c))
        counter += 1
    heapq.heapify(heap)
    pushed = out > 0
    while heap:
        _, _, r, c = heapq.heappop(heap)
        label = out[r, c]
        for dr, dc in _NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not pushed[nr, nc]:
                pushed[nr, nc] = True
                out[nr, nc] = label
                heapq.heappush(heap, (elevation[nr, nc], counter, nr, nc))
                counter += 1
    return out


def remove_small(m, min_size: int) -> np.ndarray:
    """Drop instances with fewer than ``min_size`` pixels, then relabel 1..K."""
    m = as_label_image(m)
    if m.size == 0:
        return m.copy()
    sizes = np.bincount(m.ravel())
    small = sizes < min_size
    small[0] = False
    out = np.where(small[m], 0, m)
    return relabel_sequential(out)[0]


def extract_instances(fg, hv: HoverField, params: PostprocessParams = PostprocessParams()) -> np.ndarray:
    """Split the thresholded foreground into nucleus instances using the HoVer maps."""
    fg = np.asarray(fg, dtype=np.float64)
    if fg.shape != hv.shape:
        raise ValueError(f"foreground {fg.shape} and hover {hv.shape} shapes differ")
    mask = fg > params.fg_threshold
    if not mask.any():
        return np.zeros(fg.shape, dtype=np.int32)
    energy = edge_energy(mask, hv, params.sobel_ksize)
    markers = connected_components(mask & (energy < params.marker_threshold))
    out = watershed(energy, markers, mask)
    # masked regions without a seed still become instances
    orphans = connected_components(mask & (out == 0))
    out = np.where(orphans > 0, orphans + out.max(), out)
    return remove_small(out, params.min_instance_size)


def _vote_winner(votes: np.ndarray) -> int | None:
    nuclear = votes[1:]
    if nuclear.sum() == 0:
        return None
    return int(np.argmax(nuclear)) + 1


def classify_instances(m, classes) -> InstanceClassification:
    """Majority vote of nonzero pixel classes inside each instance.

    Ties go to the lowest class id. Instances whose pixels all vote
    background take the most frequent nucleus class in the whole image
    (class 1 when the image has none).
    """
    m = as_label_image(m)
    classes = as_class_image(classes)
    if m.shape != classes.shape:
        raise ValueError(f"label {m.shape} and class {classes.shape} shapes differ")
    result = InstanceClassification()
    if not m.any():
        return result
    n = int(m.max()) + 1
    table = np.zeros((n, 7), dtype=np.int64)
    np.add.at(table, (m.ravel(), classes.ravel().astype(np.intp)), 1)
    fallback = _vote_winner(np.bincount(classes.ravel(), minlength=7)) or 1
    for i in np.flatnonzero(table.sum(axis=1)):
        if i == 0:
            continue
        winner = _vote_winner(table[i])
        result.classes[int(i)] = fallback if winner is None else winner
        result.votes[int(i)] = table[i].copy()
    return result


def class_map(m, classification: InstanceClassification) -> np.ndarray:
    """Paint every instance with its assigned class."""
    m = as_label_image(m)
    out = np.zeros(m.shape, dtype=np.uint8)
    for i, k in classification.classes.items():
        out[m == i] = k
    return out
