"""Style-transfer losses and feature transforms.

Covers Gram matrices, content/style losses in their plain, perceptual
(per-element normalized) and smoothed-activation variants, the four
activation smoothing transforms, adaptive instance normalization, and
content-style feature interpolation. All loss outputs are scalar tensors
differentiable through :mod:`nstlab.tensor`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

GRAM_NORMALIZATIONS = ("none", "per-element", "swag")
CONTENT_NORMALIZATIONS = ("none", "half", "per-element")


@dataclass(frozen=True)
class Smoothing:
    """Activation smoothing transform: none, softmax, scale(c), tanh, softsign."""

    kind: str = "none"
    c: float = 0.001

    def __post_init__(self):
        if self.kind not in ("none", "softmax", "scale", "tanh", "softsign"):
            raise ContractError(f"unknown smoothing kind {self.kind!r}")
        if self.kind == "scale" and not self.c > 0:
            raise ContractError(f"scale smoothing needs c > 0, got {self.c}")

    @classmethod
    def parse(cls, value) -> "Smoothing":
        """Accepts 'softmax', 'scale:0.001', or {'kind': ..., 'c': ...}."""
        if isinstance(value, Smoothing):
            return value
        if isinstance(value, dict):
            return cls(**value)
        if isinstance(value, str):
            kind, sep, arg = value.partition(":")
            if sep:
                return cls(kind=kind, c=float(arg))
            return cls(kind=kind)
        raise ContractError(f"cannot parse smoothing from {value!r}")

    def label(self) -> str:
        return f"scale:{self.c:g}" if self.kind == "scale" else self.kind


NO_SMOOTHING = Smoothing("none")


def smooth(feature: Tensor, kind: Smoothing, softmax_axis: str = "channel") -> Tensor:
    if kind.kind == "none":
        return feature
    if kind.kind == "scale":
        return T.scale(feature, kind.c)
    if kind.kind == "tanh":
        return T.tanh(feature)
    if kind.kind == "softsign":
        return T.softsign(feature)
    return T.softmax(feature, axis=softmax_axis)


@dataclass(frozen=True)
class LossConfig:
    """Every loss hyperparameter in one place.

    ``smoothed_taps`` limits which taps the smoothing transform touches;
    ``None`` applies it to every tap used by the losses.
    """

    content_tap: str
    style_taps: tuple[tuple[str, float], ...]
    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 10.0
    smoothing: Smoothing = NO_SMOOTHING
    smoothed_taps: frozenset[str] | None = None
    softmax_axis: str = "channel"
    gram_normalization: str = "none"
    content_normalization: str = "none"
    adain_content_mode: str = "mse"  # 'mse' or 'l2'
    adain_style_mode: str = "l2"  # 'l2' or 'squared'
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ContractError("alpha, beta and lambda must be non-negative")
        if self.gram_normalization not in GRAM_NORMALIZATIONS:
            raise ContractError(f"bad gram_normalization {self.gram_normalization!r}")
        if self.content_normalization not in CONTENT_NORMALIZATIONS:
            raise ContractError(f"bad content_normalization {self.content_normalization!r}")
        for tap, weight in self.style_taps:
            if weight < 0:
                raise ContractError(f"style tap {tap!r} has negative weight {weight}")
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")

    def smooth_tap(self, feature: Tensor, tap: str) -> Tensor:
        if self.smoothed_taps is not None and tap not in self.smoothed_taps:
            return feature
        return smooth(feature, self.smoothing, self.softmax_axis)


@dataclass
class GramMatrix:
    values: Tensor  # shape (1, 1, C, C)
    source: str = ""
    normalized: bool = False


def gram(feature: Tensor, normalized: bool = False, source: str = "") -> GramMatrix:
    """Channel correlation matrix G = F'F'^T over the C x (HW) reshape."""
    n, c, h, w = feature.shape
    if n != 1:
        raise ShapeError(f"gram expects batch 1, got {n}")
    if c < 1 or h < 1 or w < 1:
        raise ShapeError(f"gram needs a non-empty feature map, got {feature.shape}")
    flat = T.reshape(feature, (1, 1, c, h * w))
    g = T.matmul(flat, T.transpose_hw(flat))
    if normalized:
        g = T.divc(g, float(c * h * w))
    return GramMatrix(values=g, source=source, normalized=normalized)


def content_loss(fx: Tensor, fc: Tensor, smoothing: Smoothing = NO_SMOOTHING,
                 normalization: str = "none", softmax_axis: str = "channel") -> Tensor:
    """Squared distance between (optionally smoothed) feature maps."""
    if fx.shape != fc.shape:
        raise ShapeError(f"content_loss: shapes {fx.shape} and {fc.shape} differ")
    if normalization not in CONTENT_NORMALIZATIONS:
        raise ContractError(f"bad content normalization {normalization!r}")
    sx = smooth(fx, smoothing, softmax_axis)
    sc = smooth(fc, smoothing, softmax_axis)
    d = T.sub(sx, sc)
    ss = T.tsum(T.mul(d, d))
    if normalization == "half":
        return T.scale(ss, 0.5)
    if normalization == "per-element":
        _, c, h, w = fx.shape
        return T.divc(ss, float(c * h * w))
    return ss


def _gram_mode(config: LossConfig) -> bool:
    return config.gram_normalization == "per-element"


def _tap_scale(config: LossConfig, weight: float, shape) -> float:
    _, c, h, w = shape
    if config.gram_normalization == "none":
        return weight
    if config.gram_normalization == "per-element":
        return 1.0
    d = float(c)
    m = float(h * w)
    return weight / (4.0 * d * d * m * m)


def style_targets(fs: "dict[str, Tensor]", config: LossConfig) -> dict[str, Tensor]:
    """Precomputed style Gram matrices, one per configured tap."""
    targets = {}
    for tap, _ in config.style_taps:
        if tap not in fs:
            raise ShapeError(f"style bundle is missing tap {tap!r}")
        feat = config.smooth_tap(fs[tap].detach(), tap)
        targets[tap] = gram(feat, normalized=_gram_mode(config), source=tap).values
    return targets


def style_loss_against(fx: "dict[str, Tensor]", targets: dict[str, Tensor],
                       config: LossConfig) -> Tensor:
    total: Tensor | None = None
    for tap, weight in config.style_taps:
        if tap not in fx:
            raise ShapeError(f"feature bundle is missing style tap {tap!r}")
        feat = config.smooth_tap(fx[tap], tap)
        gx = gram(feat, normalized=_gram_mode(config), source=tap).values
        gs = targets[tap]
        if gx.shape != gs.shape:
            raise ShapeError(
                f"style tap {tap!r}: gram shapes {gx.shape} and {gs.shape} differ"
            )
        d = T.sub(gx, gs)
        term = T.scale(T.tsum(T.mul(d, d)), _tap_scale(config, weight, fx[tap].shape))
        total = term if total is None else T.add(total, term)
    if total is None:
        return Tensor.scalar(0.0)
    return total


def style_loss(fx: "dict[str, Tensor]", fs: "dict[str, Tensor]",
               config: LossConfig) -> Tensor:
    """Weighted sum over taps of squared Gram-matrix distances."""
    for tap, _ in config.style_taps:
        if tap in fx and tap in fs and fx[tap].shape != fs[tap].shape:
            raise ShapeError(
                f"style tap {tap!r}: shapes {fx[tap].shape} and {fs[tap].shape} differ"
            )
    return style_loss_against(fx, style_targets(fs, config), config)


def combine_losses(lc: Tensor, ls: Tensor, alpha: float, beta: float) -> Tensor:
    return T.add(T.scale(lc, alpha), T.scale(ls, beta))


# ---------------------------------------------------------------------------
# channel statistics and AdaIN


@dataclass
class ChannelStats:
    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,), population, epsilon-stabilized


def _stats(feature: Tensor, epsilon: float) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and sqrt(var + eps^2), on the tape."""
    mu = T.channel_mean(feature)
    d = T.sub(feature, mu)
    var = T.channel_mean(T.mul(d, d))
    sd = T.sqrt(T.shift(var, epsilon * epsilon))
    return mu, sd


def channel_stats(feature: Tensor, epsilon: float = 1e-5) -> ChannelStats:
    mu, sd = _stats(feature.detach(), epsilon)
    c = feature.shape[1]
    return ChannelStats(mean=mu.data.reshape(c).copy(), std=sd.data.reshape(c).copy())


def adain(fc: Tensor, fs: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Re-normalize content features to the style features' channel stats."""
    if fc.shape[1] != fs.shape[1]:
        raise ShapeError(
            f"adain: channel counts differ ({fc.shape[1]} vs {fs.shape[1]})"
        )
    mu_c, sd_c = _stats(fc, epsilon)
    mu_s, sd_s = _stats(fs, epsilon)
    return T.add(T.mul(T.div(T.sub(fc, mu_c), sd_c), sd_s), mu_s)


def interpolate_features(fc: Tensor, fs: Tensor, alpha: float,
                         epsilon: float = 1e-5) -> Tensor:
    """(1 - alpha) * fc + alpha * adain(fc, fs); endpoints are bit-exact."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"interpolation alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return fc
    mixed = adain(fc, fs, epsilon)
    if alpha == 1.0:
        return mixed
    return T.add(T.scale(fc, 1.0 - alpha), T.scale(mixed, alpha))


def _stat_gap(a: Tensor, b: Tensor, squared: bool) -> Tensor:
    d = T.sub(a, b)
    ss = T.tsum(T.mul(d, d))
    return ss if squared else T.sqrt(ss)


def adain_loss(decoded_features: "dict[str, Tensor]", t: Tensor,
               style_features: "dict[str, Tensor]",
               config: LossConfig) -> tuple[Tensor, Tensor, Tensor]:
    """Feature-reconstruction + statistics-matching loss pair.

    Returns ``(lc, ls, total)`` where ``total = lc + lambda * ls``. ``lc``
    compares the deepest decoded tap against the target features ``t``; ``ls``
    accumulates channel mean/std gaps against the style features over the
    configured taps with equal weights.
    """
    if config.content_tap not in decoded_features:
        raise ShapeError(f"decoded bundle is missing content tap {config.content_tap!r}")
    d = T.sub(decoded_features[config.content_tap], t)
    ss = T.mul(d, d)
    if config.adain_content_mode == "mse":
        lc = T.tmean(ss)
    else:
        lc = T.sqrt(T.tsum(ss))

    squared = config.adain_style_mode == "squared"
    ls: Tensor | None = None
    for tap, _ in config.style_taps:
        if tap not in decoded_features:
            raise ShapeError(f"decoded bundle is missing style tap {tap!r}")
        if tap not in style_features:
            raise ShapeError(f"style bundle is missing tap {tap!r}")
        mu_g, sd_g = _stats(decoded_features[tap], config.epsilon)
        mu_s, sd_s = _stats(style_features[tap].detach(), config.epsilon)
        term = T.add(_stat_gap(mu_g, mu_s, squared), _stat_gap(sd_g, sd_s, squared))
        ls = term if ls is None else T.add(ls, term)
    if ls is None:
        ls = Tensor.scalar(0.0)
    total = T.add(lc, T.scale(ls, config.lam))
    return lc, ls, total


# ---------------------------------------------------------------------------
# analysis helpers (numpy-side, not differentiable)


def channel_entropy(feature) -> float:
    """Mean over locations of the normalized Shannon entropy across channels.

    The per-location distribution is the normalized channel magnitude
    |a_c| / sum |a_c|; all-zero locations contribute zero entropy.
    """
    arr = feature.data if isinstance(feature, Tensor) else np.asarray(feature)
    n, c, h, w = arr.shape
    if c < 2:
        return 0.0
    mag = np.abs(arr.astype(np.float64))
    total = mag.sum(axis=1, keepdims=True)
    ok = total[:, 0] > 0
    p = np.divide(mag, np.where(total > 0, total, 1.0))
    plogp = p * np.log(np.where(p > 0, p, 1.0))
    ent = -plogp.sum(axis=1) / math.log(c)
    ent = np.where(ok, ent, 0.0)
    return float(ent.mean())
