"""Forward-pass reference math for the network's building blocks.

Feature maps are ``(C, H, W)`` float arrays. Nothing here trains; weights
are plain arrays, and the ``random`` constructors build seeded ones for
checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HEAD_CHANNELS = {"seg": 2, "hover": 2, "class": 7}


class ShapeError(ValueError):
    """A tensor or configuration does not fit the expected shape."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def relu(x):
    return np.maximum(x, 0.0)


def hard_swish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def softmax(x, axis=0):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _feature_map(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"feature map must be (C, H, W), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature map contains non-finite values")
    return x


def _reduced(channels: int, r: int) -> int:
    if r <= 0 or channels % r:
        raise ShapeError(f"reduction ratio {r} does not divide {channels} channels")
    return channels // r


def _expect(name: str, a: np.ndarray, shape: tuple) -> None:
    if a.shape != shape:
        raise ShapeError(f"{name} has shape {a.shape}, expected {shape}")


@dataclass
class SEWeights:
    w1: np.ndarray  # (C/r, C)
    b1: np.ndarray
    w2: np.ndarray  # (C, C/r)
    b2: np.ndarray

    @classmethod
    def zeros(cls, channels: int, r: int) -> "SEWeights":
        m = _reduced(channels, r)
        return cls(np.zeros((m, channels)), np.zeros(m), np.zeros((channels, m)), np.zeros(channels))

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, r: int) -> "SEWeights":
        m = _reduced(channels, r)
        return cls(rng.normal(size=(m, channels)), rng.normal(size=m),
                   rng.normal(size=(channels, m)), rng.normal(size=channels))


def se_scales(x, weights: SEWeights, r: int) -> np.ndarray:
    """Channel gates ``sigmoid(W2 relu(W1 avgpool(x) + b1) + b2)``, each in (0, 1)."""
    x = _feature_map(x)
    c = x.shape[0]
    m = _reduced(c, r)
    _expect("w1", weights.w1, (m, c))
    _expect("b1", weights.b1, (m,))
    _expect("w2", weights.w2, (c, m))
    _expect("b2", weights.b2, (c,))
    pooled = x.mean(axis=(1, 2))
    return sigmoid(weights.w2 @ relu(weights.w1 @ pooled + weights.b1) + weights.b2)


def se_gate(x, weights: SEWeights, r: int) -> np.ndarray:
    """Squeeze-and-excitation: rescale each channel by its gate."""
    x = _feature_map(x)
    return se_scales(x, weights, r)[:, None, None] * x


@dataclass
class CAWeights:
    w_shared: np.ndarray  # (C/r, C)
    b_shared: np.ndarray
    w_h: np.ndarray  # (C, C/r)
    b_h: np.ndarray
    w_w: np.ndarray  # (C, C/r)
    b_w: np.ndarray

    @classmethod
    def zeros(cls, channels: int, r: int) -> "CAWeights":
        m = _reduced(channels, r)
        return cls(np.zeros((m, channels)), np.zeros(m), np.zeros((channels, m)), np.zeros(channels),
                   np.zeros((channels, m)), np.zeros(channels))

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, r: int) -> "CAWeights":
        m = _reduced(channels, r)
        return cls(rng.normal(size=(m, channels)), rng.normal(size=m),
                   rng.normal(size=(channels, m)), rng.normal(size=channels),
                   rng.normal(size=(channels, m)), rng.normal(size=channels))


def ca_factors(x, weights: CAWeights, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Directional attention vectors ``a_h`` of shape (C, H) and ``a_w`` of shape (C, W).

    Pools along W and along H, concatenates the two strips, applies the shared
    1x1 transform with hard-swish, splits, and maps each half back to C
    channels through a sigmoid.
    """
    x = _feature_map(x)
    c, h, w = x.shape
    m = _reduced(c, r)
    _expect("w_shared", weights.w_shared, (m, c))
    _expect("b_shared", weights.b_shared, (m,))
    _expect("w_h", weights.w_h, (c, m))
    _expect("b_h", weights.b_h, (c,))
    _expect("w_w", weights.w_w, (c, m))
    _expect("b_w", weights.b_w, (c,))
    strip = np.concatenate([x.mean(axis=2), x.mean(axis=1)], axis=1)  # (C, H + W)
    y = hard_swish(weights.w_shared @ strip + weights.b_shared[:, None])
    y_h, y_w = y[:, :h], y[:, h:]
    a_h = sigmoid(weights.w_h @ y_h + weights.b_h[:, None])
    a_w = sigmoid(weights.w_w @ y_w + weights.b_w[:, None])
    return a_h, a_w


def coordinate_attention(x, weights: CAWeights, r: int) -> np.ndarray:
    x = _feature_map(x)
    a_h, a_w = ca_factors(x, weights, r)
    return x * a_h[:, :, None] * a_w[:, None, :]


@dataclass
class HeadWeights:
    """3x3 conv -> inference BN -> ReLU -> 1x1 projection."""

    conv: np.ndarray  # (C_mid, C_in, 3, 3)
    conv_bias: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    proj: np.ndarray  # (C_out, C_mid)
    proj_bias: np.ndarray
    bn_eps: float = 1e-5

    @classmethod
    def random(cls, rng: np.random.Generator, c_in: int, c_mid: int, c_out: int) -> "HeadWeights":
        return cls(
            conv=rng.normal(size=(c_mid, c_in, 3, 3)) / 3.0,
            conv_bias=rng.normal(size=c_mid),
            bn_mean=rng.normal(size=c_mid),
            bn_var=rng.uniform(0.5, 2.0, size=c_mid),
            bn_gamma=rng.uniform(0.5, 1.5, size=c_mid),
            bn_beta=rng.normal(size=c_mid),
            proj=rng.normal(size=(c_out, c_mid)),
            proj_bias=rng.normal(size=c_out),
        )


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-size 3x3 cross-correlation with symmetric reflective padding."""
    c_out, c_in = kernel.shape[:2]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="symmetric")
    h, w = x.shape[1:]
    out = np.zeros((c_out, h, w))
    for di in range(3):
        for dj in range(3):
            window = padded[:, di:di + h, dj:dj + w]
            out += np.tensordot(kernel[:, :, di, dj], window, axes=(1, 0))
    return out + bias[:, None, None]


def head_forward(x, weights: HeadWeights, kind: str) -> np.ndarray:
    """Prediction head; ``kind`` is "seg" (sigmoid), "hover" (identity) or "class" (softmax)."""
    x = _feature_map(x)
    c_in = x.shape[0]
    if weights.conv.ndim != 4 or weights.conv.shape[1:] != (c_in, 3, 3):
        raise ShapeError(f"conv weight {weights.conv.shape} does not fit {c_in} input channels")
    c_mid = weights.conv.shape[0]
    for name in ("conv_bias", "bn_mean", "bn_var", "bn_gamma", "bn_beta"):
        _expect(name, getattr(weights, name), (c_mid,))
    if weights.proj.ndim != 2 or weights.proj.shape[1] != c_mid:
        raise ShapeError(f"projection {weights.proj.shape} does not fit {c_mid} channels")
    _expect("proj_bias", weights.proj_bias, (weights.proj.shape[0],))
    if kind not in HEAD_CHANNELS:
        raise ValueError(f"unknown head kind {kind!r}")

    z = conv3x3(x, weights.conv, weights.conv_bias)
    scale = weights.bn_gamma / np.sqrt(weights.bn_var + weights.bn_eps)
    z = (z - weights.bn_mean[:, None, None]) * scale[:, None, None] + weights.bn_beta[:, None, None]
    z = relu(z)
    out = np.tensordot(weights.proj, z, axes=(1, 0)) + weights.proj_bias[:, None, None]
    if kind == "class":
        return softmax(out, axis=0)
    if kind == "seg":
        return sigmoid(out)
    return out


@dataclass
class NetworkConfig:
    input_size: tuple[int, int] = (256, 256)
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (64, 128, 256, 512, 1024)
    se_reduction: int = 16
    head_channels: dict[str, int] = field(default_factory=lambda: dict(HEAD_CHANNELS))

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {"input_size", "in_channels", "stage_channels", "se_reduction", "head_channels"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "input_size" in kw:
            kw["input_size"] = tuple(kw["input_size"])
        if "stage_channels" in kw:
            kw["stage_channels"] = tuple(kw["stage_channels"])
        return cls(**kw)


@dataclass
class StageShape:
    stage: str
    channels: int
    height: int
    width: int
    note: str = ""

    def __str__(self) -> str:
        text = f"{self.stage:<12} {self.height:>5} x {self.width:<5} x {self.channels:<5}"
        return f"{text} {self.note}".rstrip()


def check_shapes(cfg: NetworkConfig) -> list[StageShape]:
    """Trace tensor shapes through the U-Net with SE encoder, CA decoder and three heads."""
    if cfg.head_channels != HEAD_CHANNELS:
        raise ShapeError(f"head channels must be {HEAD_CHANNELS}, got {cfg.head_channels}")
    if not cfg.stage_channels:
        raise ShapeError("at least one encoder stage is required")
    for ch in cfg.stage_channels:
        if ch % cfg.se_reduction:
            raise ShapeError(f"SE reduction {cfg.se_reduction} does not divide {ch} channels")
    h, w = cfg.input_size
    if h <= 0 or w <= 0:
        raise ShapeError(f"input size must be positive, got {cfg.input_size}")
    trace = [StageShape("input", cfg.in_channels, h, w)]
    sizes = [(h, w)]
    for i, ch in enumerate(cfg.stage_channels):
        if i > 0:
            ph, pw = sizes[-1]
            if ph % 2 or pw % 2:
                raise ShapeError(
                    f"encoder{i}: cannot downsample {ph}x{pw} by 2; input size must be "
                    f"divisible by {2 ** (len(cfg.stage_channels) - 1)}"
                )
            sizes.append((ph // 2, pw // 2))
        eh, ew = sizes[i]
        trace.append(StageShape(f"encoder{i}", ch, eh, ew, "SE-Res" + (", downsample x2" if i else "")))
    for i in range(len(cfg.stage_channels) - 2, -1, -1):
        up_h, up_w = sizes[i + 1][0] * 2, sizes[i + 1][1] * 2
        skip_h, skip_w = sizes[i]
        if (up_h, up_w) != (skip_h, skip_w):
            raise ShapeError(f"decoder{i}: upsampled {up_h}x{up_w} does not match skip {skip_h}x{skip_w}")
        concat = cfg.stage_channels[i + 1] + cfg.stage_channels[i]
        trace.append(StageShape(f"decoder{i}", cfg.stage_channels[i], skip_h, skip_w,
                                f"upsample x2, concat {concat} -> {cfg.stage_channels[i]}, CA"))
    for kind, ch in HEAD_CHANNELS.items():
        trace.append(StageShape(f"head:{kind}", ch, sizes[0][0], sizes[0][1]))
    return trace
