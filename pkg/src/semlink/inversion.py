"""Latent-space inversion against the frozen generator, with and without the
channel in the loop, and the single-image transmit pipeline.

Plain inversion minimizes mean squared pixel error of the generated image.
Channel-aware inversion wraps the latent in the channel forward map (complex
pairing, power normalization, estimated noise) before generating, so the
optimized latent anticipates both the transmit-power rescaling and the
noise. Objectives are stochastic when noise is resampled per iteration, so
the loop returns the best-seen iterate rather than the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .channel import ChannelConfig, awgn, from_complex, power_normalize, to_complex
from .errors import ContractViolationError, DivergenceError
from .generator import GeneratorModel, LatentCode, apply_with_vjp, generate
from .objective import LossConfig, LossEvaluator, l1_loss, ms_ssim, psnr
from .optim import DifferentiableObjective, adam_step, init_adam
from .rng import RngStream


@dataclass(frozen=True)
class InversionConfig:
    max_iters: int = 300
    learning_rate: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    resample_noise_each_iter: bool = True
    init: str | LatentCode = "prior"  # "prior" or a provided LatentCode
    warm_start_iters: int = 0  # plain MSE iterations before the main loop
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    divergence_factor: float = 10.0
    divergence_patience: int = 50

    def __post_init__(self):
        if self.max_iters < 0 or self.warm_start_iters < 0:
            raise ContractViolationError("iteration counts must be non-negative")
        if self.learning_rate <= 0:
            raise ContractViolationError("learning rate must be positive")


@dataclass(frozen=True)
class TransmissionRecord:
    """Per-transmission accounting; the compression ratio is kept exact."""

    analog_complex_symbols: int
    digital_symbols: int
    source_bandwidth: int
    bcr: Fraction
    snr_db_actual: float
    metrics: dict
    hit_mask: tuple = ()
    indices_sent: tuple = ()
    n_s: int = 0
    upgrades: int = 0
    fallbacks: int = 0
    power_rel_err: float = 0.0

    def __post_init__(self):
        expected = Fraction(self.analog_complex_symbols + self.digital_symbols,
                            self.source_bandwidth)
        if self.bcr != expected:
            raise ContractViolationError(
                f"bcr {self.bcr} != ({self.analog_complex_symbols} + "
                f"{self.digital_symbols}) / {self.source_bandwidth}")

    @property
    def hits(self) -> int:
        return sum(1 for h in self.hit_mask if h)


def compression_ratio(analog_symbols: int, digital_symbols: int,
                      source_bandwidth: int) -> Fraction:
    """Channel uses over source bandwidth, as an exact rational."""
    return Fraction(analog_symbols + digital_symbols, source_bandwidth)


# ---------------------------------------------------------------------------
# tape-level building blocks


def generator_node(model: GeneratorModel, latent_flat: ad.Var) -> ad.Var:
    """Tape node producing the generated image from a flat latent node."""
    latent = LatentCode.from_flat(latent_flat.value, model.n_slots, model.vec_len)
    image, vjp = apply_with_vjp(model, latent)
    return ad.custom(image, (latent_flat,), lambda c: (vjp(c),))


def _mse_node(img: ad.Var, target: np.ndarray) -> ad.Var:
    d = ad.sub(img, target)
    return ad.mean(ad.mul(d, d))


def _sample_latent_noise(rng: RngStream, length: int, sigma2_hat: float):
    """Real-coordinate noise matching the estimated complex noise level."""
    if sigma2_hat == 0.0:
        return None
    return rng.normal(length) * math.sqrt(sigma2_hat / 2.0)


def _channel_aware_eval(model: GeneratorModel, evaluator: LossEvaluator,
                        power: float, y_flat: np.ndarray, noise):
    yv = ad.var(y_flat)
    u = ad.power_normalize(yv, y_flat.size // 2, power)
    if noise is not None:
        u = ad.add(u, noise)
    loss = evaluator.loss_var(generator_node(model, u))
    ad.backward(loss)
    return float(loss.value), yv.grad


def _plain_eval(model: GeneratorModel, target: np.ndarray, y_flat: np.ndarray, _noise):
    yv = ad.var(y_flat)
    loss = _mse_node(generator_node(model, yv), target)
    ad.backward(loss)
    return float(loss.value), yv.grad


def mse_objective(model: GeneratorModel, target: np.ndarray) -> DifferentiableObjective:
    """Deterministic plain-inversion objective over the flat latent."""
    return DifferentiableObjective(
        value_fn=lambda y: _plain_eval(model, target, np.asarray(y, float), None)[0],
        gradient_fn=lambda y: _plain_eval(model, target, np.asarray(y, float), None)[1],
    )


def channel_aware_objective(model: GeneratorModel, target: np.ndarray,
                            loss_cfg: LossConfig, power: float,
                            noise: np.ndarray | None) -> DifferentiableObjective:
    """Channel-aware objective at one fixed noise realization."""
    evaluator = LossEvaluator(target, loss_cfg)
    return DifferentiableObjective(
        value_fn=lambda y: _channel_aware_eval(model, evaluator, power,
                                               np.asarray(y, float), noise)[0],
        gradient_fn=lambda y: _channel_aware_eval(model, evaluator, power,
                                                  np.asarray(y, float), noise)[1],
    )


# ---------------------------------------------------------------------------
# optimization loop


def run_adam_loop(y0: np.ndarray, eval_fn, cfg: InversionConfig,
                  noise_sampler=None, freeze_mask: np.ndarray | None = None):
    """Minimize eval_fn over a flat vector; returns (best_y, values).

    eval_fn(y, noise) -> (value, gradient). The returned iterate attains the
    minimum recorded value. Aborts if the loss stays above
    divergence_factor * initial for divergence_patience consecutive steps or
    goes non-finite. Coordinates under freeze_mask never change.
    """
    y = np.array(y0, dtype=float, copy=True)
    state = init_adam(y.size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    keep = None if freeze_mask is None else (~freeze_mask).astype(float)
    best_y = y.copy()
    best_val = math.inf
    values: list[float] = []
    noise = None
    bad_streak = 0
    for t in range(cfg.max_iters):
        if noise_sampler is not None and (cfg.resample_noise_each_iter or t == 0):
            noise = noise_sampler()
        value, grad = eval_fn(y, noise)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite loss or gradient", t)
        values.append(value)
        threshold = cfg.divergence_factor * max(values[0], 1e-12)
        if value > threshold:
            bad_streak += 1
            if bad_streak >= cfg.divergence_patience:
                raise DivergenceError(
                    f"loss above {cfg.divergence_factor}x initial for "
                    f"{cfg.divergence_patience} iterations", t)
        else:
            bad_streak = 0
        if value < best_val:
            best_val = value
            best_y = y.copy()
        if keep is not None:
            grad = grad * keep
        state, y = adam_step(state, y, grad)
    return best_y, values


def _initial_latent(model: GeneratorModel, cfg: InversionConfig,
                    rng: RngStream) -> np.ndarray:
    if isinstance(cfg.init, LatentCode):
        if (cfg.init.n_slots, cfg.init.vec_len) != (model.n_slots, model.vec_len):
            raise ContractViolationError("provided init does not match model dims")
        return cfg.init.flat().copy()
    if cfg.init != "prior":
        raise ContractViolationError(f"unknown init {cfg.init!r}")
    return LatentCode.sample_prior(model.n_slots, model.vec_len, rng).flat().copy()


def plain_invert(model: GeneratorModel, target: np.ndarray, cfg: InversionConfig,
                 rng: RngStream) -> LatentCode:
    """Gradient inversion of the generator alone (no channel operations)."""
    target = np.asarray(target, dtype=float)
    if target.shape != model.image_shape:
        raise ContractViolationError(
            f"target shape {target.shape} != {model.image_shape}")
    y0 = _initial_latent(model, cfg, rng.spawn(0))
    best, _ = run_adam_loop(y0, lambda y, n: _plain_eval(model, target, y, n), cfg)
    return LatentCode.from_flat(best, model.n_slots, model.vec_len)


def channel_aware_invert(model: GeneratorModel, target: np.ndarray,
                         sigma2_hat: float, cfg: InversionConfig,
                         rng: RngStream) -> LatentCode:
    """Inversion with the channel forward map inside the objective.

    Returns the latent in pre-normalization real form; power normalization is
    applied again at transmit time. Noise enters at the estimated level and
    is resampled per iteration unless configured otherwise.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != model.image_shape:
        raise ContractViolationError(
            f"target shape {target.shape} != {model.image_shape}")
    if sigma2_hat < 0:
        raise ContractViolationError("estimated noise variance must be >= 0")
    if cfg.warm_start_iters > 0 and not isinstance(cfg.init, LatentCode):
        warm_cfg = replace(cfg, max_iters=cfg.warm_start_iters, warm_start_iters=0)
        y0 = plain_invert(model, target, warm_cfg, rng.spawn(2)).flat().copy()
    else:
        y0 = _initial_latent(model, cfg, rng.spawn(0))
    evaluator = LossEvaluator(target, cfg.loss)
    noise_rng = rng.spawn(1)
    length = model.n_slots * model.vec_len
    power = 1.0

    def sampler():
        return _sample_latent_noise(noise_rng, length, sigma2_hat)

    best, _ = run_adam_loop(
        y0, lambda y, n: _channel_aware_eval(model, evaluator, power, y, n),
        cfg, noise_sampler=sampler)
    return LatentCode.from_flat(best, model.n_slots, model.vec_len)


# ---------------------------------------------------------------------------
# transmission


def metric_report(reconstructed: np.ndarray, target: np.ndarray) -> dict:
    """psnr / ms_ssim / l1 with the scale count the image size supports."""
    scales = 1
    while scales < 3 and min(target.shape[1], target.shape[2]) // (2 ** scales) >= 7:
        scales += 1
    return {
        "psnr": psnr(reconstructed, target),
        "ms_ssim": ms_ssim(reconstructed, target, scales=scales),
        "l1": l1_loss(reconstructed, target),
    }


def transmit_latent(model: GeneratorModel, latent: LatentCode,
                    channel_cfg: ChannelConfig, rng: RngStream):
    """Send one latent over the channel and reconstruct.

    Returns (image, received_latent, power_rel_err).
    """
    k = (model.n_slots * model.vec_len) // 2
    z = power_normalize(to_complex(latent.flat()), channel_cfg.power_constraint)
    expected = k * channel_cfg.power_constraint
    power_rel_err = abs(z.energy() - expected) / expected
    if not channel_cfg.noiseless:
        z = awgn(z, channel_cfg.sigma2(), rng)
    received = LatentCode.from_flat(from_complex(z), model.n_slots, model.vec_len)
    return generate(model, received), received, power_rel_err


def transmit_image(model: GeneratorModel, target: np.ndarray,
                   channel_cfg: ChannelConfig, sigma2_hat: float,
                   cfg: InversionConfig, rng: RngStream):
    """Full single-image pipeline: plain inversion for the starting point,
    channel-aware refinement, power-normalized transmission over the actual
    channel (whose variance may differ from sigma2_hat), reconstruction, and
    exact accounting. Returns (reconstruction, TransmissionRecord)."""
    target = np.asarray(target, dtype=float)
    k = (model.n_slots * model.vec_len) // 2
    y_plain = plain_invert(model, target, replace(cfg, warm_start_iters=0),
                           rng.spawn(0))
    y = channel_aware_invert(model, target, sigma2_hat,
                             replace(cfg, init=y_plain, warm_start_iters=0),
                             rng.spawn(1))
    reconstruction, _, power_rel_err = transmit_latent(model, y, channel_cfg,
                                                       rng.spawn(2))
    n = model.source_bandwidth
    record = TransmissionRecord(
        analog_complex_symbols=k,
        digital_symbols=0,
        source_bandwidth=n,
        bcr=compression_ratio(k, 0, n),
        snr_db_actual=math.inf if channel_cfg.noiseless else channel_cfg.snr_db,
        metrics=metric_report(reconstruction, target),
        hit_mask=(),
        indices_sent=(),
        n_s=model.n_slots,
        power_rel_err=power_rel_err,
    )
    return reconstruction, record
