"""Reconstruction losses and evaluation metrics.

The composite inversion loss is a weighted sum of mean absolute pixel error,
a perceptual term, and a pluggable task term. The perceptual term is NOT a
pretrained-network metric: it is the mean L1 distance between
channel-normalized feature maps of a fixed, seeded 3-scale random
convolution stack. Random convolutional features preserve enough perceptual
ordering to shape the optimization; swap in a stronger extractor through the
same interface if pretrained weights are available. Likewise the default
task term is a pooled-feature cosine loss standing in for an identity
network; register alternatives by name in TASK_PLUGINS.

All loss paths run through the reverse-mode tape, so reported values and the
optimizer's gradients always agree bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .errors import ConfigurationError, ContractViolationError
from .rng import RngStream


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractViolationError(f"shape mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class LossConfig:
    """Weights of the composite loss; all non-negative, at least one positive."""

    lambda1: float = 0.1
    lambda2: float = 1.0
    lambda3: float = 0.1
    perceptual_seed: int = 7
    task_plugin: str = "pooled-cosine"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0 and self.lambda3 == 0:
            raise ConfigurationError("at least one loss weight must be positive")


class PerceptualExtractor:
    """Fixed seeded multi-scale convolutional feature stack.

    Per scale: 2x downsampling (except scale 0), a valid 3x3 convolution with
    frozen random filters, tanh, and per-pixel channel normalization.
    Deterministic per seed and differentiable everywhere.
    """

    def __init__(self, height: int, width: int, seed: int, scales: int = 3,
                 channels: int = 8, kernel_size: int = 3):
        if scales < 1:
            raise ConfigurationError("need at least one scale")
        for s in range(scales):
            if min(height, width) // (2 ** s) < kernel_size:
                raise ConfigurationError(
                    f"{height}x{width} image too small for {scales} scales of "
                    f"{kernel_size}x{kernel_size} valid convolution")
        self.height = height
        self.width = width
        self.seed = seed
        self.scales = scales
        self.channels = channels
        self.kernel_size = kernel_size
        rng = RngStream(seed, stream_id=0)
        self.filters = []
        norm = math.sqrt(3 * kernel_size * kernel_size)
        for s in range(scales):
            k = rng.spawn(s).normal((channels, 3, kernel_size, kernel_size)) / norm
            k.setflags(write=False)
            self.filters.append(k)

    def _check_input(self, img: np.ndarray) -> None:
        if img.shape != (3, self.height, self.width):
            raise ContractViolationError(
                f"image shape {img.shape} != (3, {self.height}, {self.width})")

    def features_var(self, img: ad.Var) -> list[ad.Var]:
        self._check_input(img.value)
        feats = []
        x = img
        for s in range(self.scales):
            if s > 0:
                x = ad.avgpool2(x)
            feats.append(ad.channel_normalize(ad.tanh(ad.conv2d(x, self.filters[s]))))
        return feats

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        return [f.value for f in self.features_var(ad.var(img))]


@lru_cache(maxsize=32)
def get_extractor(seed: int, height: int, width: int, scales: int = 3,
                  channels: int = 8, kernel_size: int = 3) -> PerceptualExtractor:
    return PerceptualExtractor(height, width, seed, scales, channels, kernel_size)


def _extractor_for(img: np.ndarray, seed: int) -> PerceptualExtractor:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractViolationError(f"expected a (3,H,W) image, got {img.shape}")
    return get_extractor(seed, img.shape[1], img.shape[2])


# ---------------------------------------------------------------------------
# task-loss plugins: name -> factory(target_image, extractor) -> fn(gen_var,
# gen_feats | None) -> scalar Var

def _pooled(feats: list[ad.Var]) -> ad.Var:
    return ad.concat([ad.spatial_mean(f) for f in feats])


def _pooled_cosine_factory(target: np.ndarray, extractor: PerceptualExtractor):
    target_pooled = _pooled(extractor.features_var(ad.var(target)))

    def loss(gen_var: ad.Var, gen_feats: list[ad.Var] | None) -> ad.Var:
        feats = gen_feats if gen_feats is not None else extractor.features_var(gen_var)
        return 1.0 - ad.cosine(_pooled(feats), target_pooled)

    return loss


def _none_factory(target, extractor):
    def loss(gen_var, gen_feats):
        return ad.var(0.0)

    return loss


TASK_PLUGINS = {
    "pooled-cosine": _pooled_cosine_factory,
    "none": _none_factory,
}


def register_task_plugin(name: str, factory) -> None:
    TASK_PLUGINS[name] = factory


class LossEvaluator:
    """Precomputes everything target-side once, then maps a generated-image
    tape node to the composite loss node. The hot path of every inversion."""

    def __init__(self, target: np.ndarray, cfg: LossConfig,
                 extractor: PerceptualExtractor | None = None):
        target = np.asarray(target, dtype=float)
        self.target = target
        self.cfg = cfg
        needs_feats = cfg.lambda2 > 0 or cfg.lambda3 > 0
        self.extractor = extractor or (_extractor_for(target, cfg.perceptual_seed)
                                       if needs_feats else None)
        if cfg.lambda2 > 0:
            self.target_feats = [f.value for f in
                                 self.extractor.features_var(ad.var(target))]
        if cfg.lambda3 > 0:
            try:
                factory = TASK_PLUGINS[cfg.task_plugin]
            except KeyError:
                raise ConfigurationError(f"unknown task plugin {cfg.task_plugin!r}")
            self.task_fn = factory(target, self.extractor)

    def loss_var(self, gen: ad.Var) -> ad.Var:
        _check_same_shape(gen.value, self.target)
        cfg = self.cfg
        total = None

        def accumulate(term):
            nonlocal total
            total = term if total is None else total + term

        if cfg.lambda1 > 0:
            accumulate(cfg.lambda1 * ad.mean(ad.absolute(ad.sub(gen, self.target))))
        gen_feats = None
        if cfg.lambda2 > 0 or cfg.lambda3 > 0:
            gen_feats = self.extractor.features_var(gen)
        if cfg.lambda2 > 0:
            per_scale = [ad.mean(ad.absolute(ad.sub(f, t)))
                         for f, t in zip(gen_feats, self.target_feats)]
            perc = per_scale[0]
            for term in per_scale[1:]:
                perc = perc + term
            accumulate(cfg.lambda2 * (1.0 / len(per_scale)) * perc)
        if cfg.lambda3 > 0:
            accumulate(cfg.lambda3 * self.task_fn(gen, gen_feats))
        return total


# ---------------------------------------------------------------------------
# public loss operations


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixel difference."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def perceptual_proxy(a: np.ndarray, b: np.ndarray,
                     extractor: PerceptualExtractor) -> float:
    """Mean L1 distance between normalized feature maps over all scales."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_same_shape(a, b)
    fa = extractor.features(a)
    fb = extractor.features(b)
    return float(np.mean([np.mean(np.abs(x - y)) for x, y in zip(fa, fb)]))


def task_loss(a: np.ndarray, b: np.ndarray, plugin: str = "pooled-cosine",
              extractor: PerceptualExtractor | None = None,
              perceptual_seed: int = 7) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_same_shape(a, b)
    try:
        factory = TASK_PLUGINS[plugin]
    except KeyError:
        raise ConfigurationError(f"unknown task plugin {plugin!r}")
    extractor = extractor or _extractor_for(b, perceptual_seed)
    return float(factory(b, extractor)(ad.var(a), None).value)


def combined_loss(generated: np.ndarray, target: np.ndarray,
                  cfg: LossConfig) -> float:
    """lambda1*L1 + lambda2*perceptual + lambda3*task."""
    generated = np.asarray(generated, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_same_shape(generated, target)
    return float(LossEvaluator(target, cfg).loss_var(ad.var(generated)).value)


# ---------------------------------------------------------------------------
# evaluation metrics


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB, capped at the 100 dB zero-error sentinel."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_same_shape(a, b)
    if peak <= 0:
        raise ContractViolationError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return min(10.0 * math.log10(peak * peak / mse), 100.0)


_MS_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _separable_filter_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid separable correlation along the two trailing axes of (C,H,W)."""
    n = w.size
    t = sliding_window_view(x, n, axis=1) @ w
    return sliding_window_view(t, n, axis=2) @ w


def _halve(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def ms_ssim(a: np.ndarray, b: np.ndarray, scales: int = 3, win_size: int = 7,
            sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
            peak: float = 1.0) -> float:
    """Multi-scale structural similarity in [0, 1]; 1 iff the images agree.

    Contrast-structure terms feed the product for all but the final scale,
    which contributes the full similarity term; canonical 5-scale weights are
    truncated and renormalized. Negative terms are clamped at 0 so the score
    stays in [0, 1].
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _check_same_shape(a, b)
    if a.ndim != 3:
        raise ContractViolationError("expected (C,H,W) images")
    if scales < 1 or scales > _MS_WEIGHTS.size:
        raise ConfigurationError(f"scales must be in 1..{_MS_WEIGHTS.size}")
    if min(a.shape[1], a.shape[2]) // (2 ** (scales - 1)) < win_size:
        raise ConfigurationError(
            f"{a.shape[1]}x{a.shape[2]} image too small for {scales} scales "
            f"with a {win_size}-tap window")
    weights = _MS_WEIGHTS[:scales] / _MS_WEIGHTS[:scales].sum()
    window = _gaussian_window(win_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    x, y = a, b
    score = 1.0
    for s in range(scales):
        mu_x = _separable_filter_valid(x, window)
        mu_y = _separable_filter_valid(y, window)
        sxx = _separable_filter_valid(x * x, window) - mu_x * mu_x
        syy = _separable_filter_valid(y * y, window) - mu_y * mu_y
        sxy = _separable_filter_valid(x * y, window) - mu_x * mu_y
        cs = float(np.mean((2.0 * sxy + c2) / (sxx + syy + c2)))
        if s == scales - 1:
            lum = np.mean(((2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1))
                          * ((2.0 * sxy + c2) / (sxx + syy + c2)))
            score *= max(float(lum), 0.0) ** weights[s]
        else:
            score *= max(cs, 0.0) ** weights[s]
            x, y = _halve(x), _halve(y)
    return float(score)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|); 0 if either norm is below 1e-12 (degenerate vectors
    never match)."""
    u, v = np.asarray(u, dtype=float).reshape(-1), np.asarray(v, dtype=float).reshape(-1)
    if u.size != v.size:
        raise ContractViolationError(f"length mismatch: {u.size} vs {v.size}")
    return float(ad.cosine(ad.var(u), ad.var(v)).value)
