"""Loss functions of the three heads, with hand-derived gradients.

Every loss takes ``(y, y_hat)`` and returns ``(value, grad)`` where ``grad``
is the derivative of ``value`` with respect to ``y_hat``. Stacks are
channel-last; the pixel count ``N`` is the product of all leading axes.

Scalars are reduced with a strict left-to-right sum over the row-major
flattened terms in float64, so results do not depend on numpy's pairwise
summation blocking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CLASS_WEIGHTS = (2.0, 2.0, 3.0, 4.0, 4.0, 2.0, 1.0)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class CE weights, ordered as the six nucleus types then background."""

    w: tuple[float, ...] = DEFAULT_CLASS_WEIGHTS

    def __post_init__(self):
        w = tuple(float(x) for x in self.w)
        if len(w) != 7:
            raise ValueError(f"expected 7 class weights, got {len(w)}")
        if any(x < 0 or not np.isfinite(x) for x in w):
            raise ValueError("class weights must be finite and non-negative")
        object.__setattr__(self, "w", w)

    def for_channels(self) -> np.ndarray:
        """Weights reordered to channel index (channel 0 is background)."""
        return np.array((self.w[6],) + self.w[:6])


@dataclass(frozen=True)
class LossParams:
    epsilon: float = 1e-3
    clip_floor: float = 1e-7

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.clip_floor < 1:
            raise ValueError("clip_floor must lie in (0, 1)")


def ordered_sum(a) -> float:
    """Sequential row-major float64 sum."""
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    return float(np.cumsum(a)[-1])


def _column_sums(a: np.ndarray) -> np.ndarray:
    """Sequential per-column sums of a ``(N, C)`` array."""
    if a.shape[0] == 0:
        return np.zeros(a.shape[1])
    return np.cumsum(a, axis=0)[-1]


def _check_pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return y, y_hat


def _pixels(y: np.ndarray) -> int:
    if y.ndim < 1:
        raise ValueError("stack needs a channel axis")
    return int(np.prod(y.shape[:-1]))


def mse_loss(y, y_hat, reduction: str = "mean") -> tuple[float, np.ndarray]:
    """Mean (or summed, with ``reduction="sum"``) squared error over all elements."""
    y, y_hat = _check_pair(y, y_hat)
    diff = y_hat - y
    total = ordered_sum(diff * diff)
    if reduction == "sum":
        return total, 2.0 * diff
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    n = diff.size
    if n == 0:
        return 0.0, np.zeros_like(diff)
    return total / n, 2.0 * diff / n


def weighted_cross_entropy(y, y_hat, weights, params: LossParams = LossParams()):
    """``-(1/N) sum_i sum_k w_k y_ik log(y_hat_ik)`` with ``y_hat`` clamped to [clip_floor, 1].

    ``weights`` is either a :class:`ClassWeights` (7-channel stacks) or a
    per-channel sequence matching the channel count.
    """
    y, y_hat = _check_pair(y, y_hat)
    w = weights.for_channels() if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (y.shape[-1],):
        raise ValueError(f"{w.size} weights for {y.shape[-1]} channels")
    n = _pixels(y)
    if n == 0:
        return 0.0, np.zeros_like(y_hat)
    clipped = np.clip(y_hat, params.clip_floor, 1.0)
    wy = w * y
    value = -ordered_sum(wy * np.log(clipped)) / n
    inside = (y_hat >= params.clip_floor) & (y_hat <= 1.0)
    grad = np.where(inside, -wy / (n * clipped), 0.0)
    return value, grad


def cross_entropy(y, y_hat, params: LossParams = LossParams()):
    y = np.asarray(y, dtype=np.float64)
    return weighted_cross_entropy(y, y_hat, np.ones(y.shape[-1]), params)


def dice_loss(y, y_hat, params: LossParams = LossParams()):
    """Soft Dice over every channel, background included.

    ``-(2/C) sum_k (I_k + eps) / (U_k + eps)`` with ``I_k = sum_i y*y_hat`` and
    ``U_k = sum_i y + sum_i y_hat``. Ranges from about -1 (perfect overlap) to
    about 0 (none).
    """
    y, y_hat = _check_pair(y, y_hat)
    c = y.shape[-1]
    eps = params.epsilon
    y2 = y.reshape(-1, c)
    p2 = y_hat.reshape(-1, c)
    inter = _column_sums(y2 * p2)
    union = _column_sums(y2) + _column_sums(p2)
    num = inter + eps
    den = union + eps
    value = -2.0 / c * ordered_sum(num / den)
    grad = -2.0 / c * (y * den - num) / (den * den)
    return value, grad


def seg_loss(y, y_hat, params: LossParams = LossParams()):
    """CE + Dice on a two-channel (background, foreground) stack."""
    y, y_hat = _check_pair(y, y_hat)
    if y.shape[-1] != 2:
        raise ValueError(f"segmentation loss expects 2 channels, got {y.shape[-1]}")
    ce, g_ce = cross_entropy(y, y_hat, params)
    dice, g_dice = dice_loss(y, y_hat, params)
    return ce + dice, g_ce + g_dice


def cls_loss(y, y_hat, weights=ClassWeights(), params: LossParams = LossParams()):
    """Weighted CE + Dice on a seven-channel class stack."""
    y, y_hat = _check_pair(y, y_hat)
    if y.shape[-1] != 7:
        raise ValueError(f"classification loss expects 7 channels, got {y.shape[-1]}")
    wce, g_wce = weighted_cross_entropy(y, y_hat, weights, params)
    dice, g_dice = dice_loss(y, y_hat, params)
    return wce + dice, g_wce + g_dice


def hover_loss(y, y_hat, reduction: str = "mean"):
    return mse_loss(y, y_hat, reduction)


@dataclass
class GradCheck:
    name: str
    cases: int = 0
    worst_rel_error: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cases > 0 and not self.failures


def finite_difference(fn, y_hat, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``y_hat``, one coordinate at a time."""
    x = np.array(y_hat, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative discrepancy between two gradients."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def _random_case(rng: np.random.Generator, channels: int, full: bool = False):
    h, w = (8, 8) if full else rng.integers(1, 9, size=2)
    labels = rng.integers(0, channels, size=(h, w))
    y = np.eye(channels)[labels]
    # keep probabilities >= ~0.03: central-difference truncation error on
    # log(p) grows like step**2 / p**2
    u = rng.uniform(0.2, 1.0, size=(h, w, channels))
    return y, u / u.sum(axis=-1, keepdims=True)


def gradient_suite(cases: int = 100, seed: int = 0, step: float = 1e-4, tol: float = 1e-4,
                   params: LossParams = LossParams()) -> list[GradCheck]:
    """Check every analytic gradient against central differences on seeded inputs.

    The first case of each loss uses the largest shape (8x8xC); the rest draw
    random sides in 1..8.
    """
    rng = np.random.default_rng(seed)
    weights = ClassWeights()
    specs = [
        ("mse", 2, lambda y, p: mse_loss(y, p)),
        ("cross_entropy", 2, lambda y, p: cross_entropy(y, p, params)),
        ("weighted_cross_entropy", 7, lambda y, p: weighted_cross_entropy(y, p, weights, params)),
        ("dice", 7, lambda y, p: dice_loss(y, p, params)),
        ("seg", 2, lambda y, p: seg_loss(y, p, params)),
        ("cls", 7, lambda y, p: cls_loss(y, p, weights, params)),
    ]
    results = []
    for name, channels, fn in specs:
        check = GradCheck(name)
        for i in range(cases):
            y, p = _random_case(rng, channels, full=i == 0)
            if name == "mse":
                y = rng.uniform(-1, 1, size=p.shape)
                p = rng.uniform(-1, 1, size=p.shape)
            _, analytic = fn(y, p)
            numeric = finite_difference(lambda q: fn(y, q)[0], p, step)
            err = relative_error(analytic, numeric)
            check.cases += 1
            check.worst_rel_error = max(check.worst_rel_error, err)
            if not err < tol:
                check.failures.append((i, err))
        results.append(check)
    return results

