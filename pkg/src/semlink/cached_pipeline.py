"""Joint optimization with the cache and the full cached transmission round.

The cached forward map replaces hit slots by their cached vectors, power-
normalizes only the kept (miss) slots, and adds estimated noise to the kept
portion. The discrete substitution is treated as a constant under the stop-
gradient convention: kept slots carry gradients through the normalization
and (constant) noise, hit slots receive zero gradient. With an empty cache
this is exactly the channel-aware objective, values and gradients included.

Optimization never mutates the cache: matching inside the objective and the
two-stage hit-mask fix are dry runs. All bookkeeping (timestamp refreshes,
SNR-aware upgrades, insertions with eviction) is committed exactly once per
transmission, in ascending slot order, identically at both endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .cache import ReductionResult, SemanticCache, cache_restore
from .channel import (ChannelConfig, IndexLinkConfig, awgn, from_complex,
                      index_bits, index_symbol_cost, index_link_transmit,
                      power_normalize, to_complex)
from .errors import ConfigurationError, ContractViolationError
from .generator import GeneratorModel, LatentCode, generate
from .inversion import (InversionConfig, TransmissionRecord, channel_aware_invert,
                        compression_ratio, generator_node, metric_report,
                        run_adam_loop, _sample_latent_noise)
from .objective import LossConfig, LossEvaluator
from .optim import DifferentiableObjective
from .rng import RngStream


@dataclass(frozen=True)
class TwoStageConfig:
    stage1: InversionConfig
    stage2_iters: int = 100
    freeze_hits: bool = True

    def __post_init__(self):
        if self.stage2_iters < 0:
            raise ContractViolationError("stage2_iters must be >= 0")


def _kept_index(reduction: ReductionResult, vec_len: int) -> np.ndarray:
    """Flat latent positions of the kept (miss) slots, slot-ascending."""
    if not reduction.kept_slots:
        return np.empty(0, dtype=int)
    return np.concatenate([np.arange(s * vec_len, (s + 1) * vec_len)
                           for s in reduction.kept_slots])


def _hit_base(reduction: ReductionResult, cache: SemanticCache) -> np.ndarray:
    """Full-length template holding the cache-retrieved vectors at hit slots
    (zeros elsewhere; kept positions get overwritten by the forward map)."""
    base = np.zeros(cache.n_slots * cache.vec_len)
    hit_slots = [i for i, h in enumerate(reduction.hit_mask) if h]
    for slot, pos in zip(hit_slots, reduction.hit_positions):
        base[slot * cache.vec_len:(slot + 1) * cache.vec_len] = \
            cache.slots[slot][pos].vector
    return base


def _cached_forward_node(yv: ad.Var, kept_idx: np.ndarray, base: np.ndarray,
                         power: float, noise) -> ad.Var:
    """Tape node for the cached forward map with a frozen reduction."""
    if kept_idx.size == 0:
        return ad.var(base)  # nothing transmitted analog; all cache-retrieved
    kept = ad.gather(yv, kept_idx)
    z = ad.power_normalize(kept, kept_idx.size // 2, power)
    if noise is not None:
        z = ad.add(z, noise)
    return ad.assemble(z, kept_idx, base)


def cached_forward(latent: LatentCode, cache: SemanticCache, sigma2_hat: float,
                   power_constraint: float, rng: RngStream):
    """Apply the cache substitution, kept-slot power normalization, and
    estimated noise; returns (restored LatentCode, ReductionResult).

    Matching is a dry run: timestamps are untouched.
    """
    reduction = cache.reduce(latent)
    kept_idx = _kept_index(reduction, cache.vec_len)
    if kept_idx.size % 2 != 0:
        raise ContractViolationError("kept portion must have even flat length")
    base = _hit_base(reduction, cache)
    noise = _sample_latent_noise(rng, kept_idx.size, sigma2_hat) if kept_idx.size else None
    node = _cached_forward_node(ad.var(latent.flat()), kept_idx, base,
                                power_constraint, noise)
    restored = LatentCode.from_flat(node.value, latent.n_slots, latent.vec_len)
    return restored, reduction


def _st_eval(model: GeneratorModel, evaluator: LossEvaluator,
             kept_idx: np.ndarray, base: np.ndarray, power: float,
             y_flat: np.ndarray, noise):
    yv = ad.var(y_flat)
    node = _cached_forward_node(yv, kept_idx, base, power, noise)
    loss = evaluator.loss_var(generator_node(model, node))
    ad.backward(loss)
    grad = yv.grad if yv.grad is not None else np.zeros_like(y_flat)
    return float(loss.value), grad


def straight_through_objective(model: GeneratorModel, target: np.ndarray,
                               latent: LatentCode, cache: SemanticCache,
                               sigma2_hat: float, loss_cfg: LossConfig,
                               rng: RngStream, power_constraint: float = 1.0):
    """Value and gradient of the composite loss through the cached forward
    map at one noise draw. The gradient has the full latent length; hit-slot
    coordinates are zero (the substitution is a constant)."""
    reduction = cache.reduce(latent)
    kept_idx = _kept_index(reduction, cache.vec_len)
    base = _hit_base(reduction, cache)
    noise = _sample_latent_noise(rng, kept_idx.size, sigma2_hat) if kept_idx.size else None
    evaluator = LossEvaluator(target, loss_cfg)
    return _st_eval(model, evaluator, kept_idx, base, power_constraint,
                    latent.flat(), noise)


def straight_through_objective_fn(model: GeneratorModel, target: np.ndarray,
                                  reduction: ReductionResult, cache: SemanticCache,
                                  loss_cfg: LossConfig, noise,
                                  power_constraint: float = 1.0) -> DifferentiableObjective:
    """Fixed-reduction, fixed-noise variant for gradient-oracle checks."""
    kept_idx = _kept_index(reduction, cache.vec_len)
    base = _hit_base(reduction, cache)
    evaluator = LossEvaluator(target, loss_cfg)

    def eval_at(y):
        return _st_eval(model, evaluator, kept_idx, base, power_constraint,
                        np.asarray(y, dtype=float), noise)

    return DifferentiableObjective(value_fn=lambda y: eval_at(y)[0],
                                   gradient_fn=lambda y: eval_at(y)[1])


def two_stage_invert(model: GeneratorModel, target: np.ndarray,
                     cache: SemanticCache, sigma2_hat: float,
                     cfg: TwoStageConfig, rng: RngStream,
                     power_constraint: float = 1.0):
    """Stage 1 explores freely (channel-aware, no cache operations); one dry
    reduction then fixes the hit set, and stage 2 refines only the kept slots
    against the straight-through objective while hit slots stay frozen.

    Returns (latent, frozen ReductionResult)."""
    y1 = channel_aware_invert(model, target, sigma2_hat, cfg.stage1, rng.spawn(0))
    reduction = cache.reduce(y1)  # dry run; commitment happens at transmit time
    if cfg.stage2_iters == 0 or reduction.n_s == 0:
        return y1, reduction
    kept_idx = _kept_index(reduction, cache.vec_len)
    if kept_idx.size % 2 != 0:
        raise ContractViolationError("kept portion must have even flat length")
    base = _hit_base(reduction, cache)
    evaluator = LossEvaluator(target, cfg.stage1.loss)
    noise_rng = rng.spawn(1)

    def sampler():
        return _sample_latent_noise(noise_rng, kept_idx.size, sigma2_hat)

    freeze = None
    if cfg.freeze_hits:
        freeze = np.ones(model.n_slots * model.vec_len, dtype=bool)
        freeze[kept_idx] = False
    stage2_cfg = replace(cfg.stage1, max_iters=cfg.stage2_iters,
                         warm_start_iters=0, init="prior")
    best, _ = run_adam_loop(
        y1.flat(),
        lambda y, n: _st_eval(model, evaluator, kept_idx, base,
                              power_constraint, y, n),
        stage2_cfg, noise_sampler=sampler, freeze_mask=freeze)
    return LatentCode.from_flat(best, model.n_slots, model.vec_len), reduction


def _transmit_payload(vectors: np.ndarray, channel_cfg: ChannelConfig,
                      rng: RngStream):
    """Power-normalize and send one analog payload; returns (received rows,
    relative power error)."""
    flat = vectors.reshape(-1)
    z = power_normalize(to_complex(flat), channel_cfg.power_constraint)
    expected = z.k * channel_cfg.power_constraint
    power_rel_err = abs(z.energy() - expected) / expected
    if not channel_cfg.noiseless:
        z = awgn(z, channel_cfg.sigma2(), rng)
    return from_complex(z).reshape(vectors.shape), power_rel_err


def transmit_cached(model: GeneratorModel, target: np.ndarray,
                    tx_cache: SemanticCache, rx_cache: SemanticCache,
                    channel_cfg: ChannelConfig, sigma2_hat: float,
                    link: IndexLinkConfig, cfg: TwoStageConfig,
                    rng: RngStream):
    """One cache-enabled transmission round.

    Two-stage inversion against the transmitter cache; misses go analog
    (power-normalized, actual-noise AWGN), hits go as digitally coded
    indices, and SNR-aware upgrades additionally resend the fresh vector in
    a second analog payload. Both caches commit the same structural updates
    in the same order. Returns (reconstruction, TransmissionRecord).
    """
    target = np.asarray(target, dtype=float)
    if (tx_cache.n_slots, tx_cache.vec_len, tx_cache.capacity) != \
            (rx_cache.n_slots, rx_cache.vec_len, rx_cache.capacity):
        raise ContractViolationError("transmitter and receiver caches must match")
    if model.vec_len % 2 != 0:
        raise ContractViolationError("cached transmission requires even vec_len")
    if not math.isfinite(channel_cfg.snr_db):
        raise ConfigurationError("cached transmission needs a finite SNR tag")
    vec_len = model.vec_len
    snr_cur = channel_cfg.snr_db

    y, reduction = two_stage_invert(model, target, tx_cache, sigma2_hat, cfg,
                                    rng.spawn(0), channel_cfg.power_constraint)

    hit_slots = [i for i, h in enumerate(reduction.hit_mask) if h]
    hit_pos = dict(zip(hit_slots, reduction.hit_positions))
    upgrades = [s for s in hit_slots
                if snr_cur >= tx_cache.slots[s][hit_pos[s]].snr_tag]
    upgrade_set = set(upgrades)

    # transmitter-side commit (clean vectors)
    for slot in range(model.n_slots):
        if not reduction.hit_mask[slot]:
            tx_cache.insert(slot, y.vectors[slot], snr_cur)
        elif slot in upgrade_set:
            tx_cache.upgrade(slot, hit_pos[slot], y.vectors[slot], snr_cur)
        else:
            tx_cache.refresh(slot, hit_pos[slot])

    # analog payloads: kept vectors, then upgrade vectors (separate signals)
    power_errs = [0.0]
    received_miss = np.empty((0, vec_len))
    if reduction.kept_slots:
        received_miss, err = _transmit_payload(
            y.vectors[list(reduction.kept_slots)], channel_cfg, rng.spawn(1))
        power_errs.append(err)
    received_upg = np.empty((0, vec_len))
    if upgrades:
        received_upg, err = _transmit_payload(
            y.vectors[upgrades], channel_cfg, rng.spawn(2))
        power_errs.append(err)

    # digital payload: one index per hit slot (upgrades included)
    num_bits = index_bits(tx_cache.capacity, tx_cache.n_slots)
    decoded = index_link_transmit(list(reduction.indices_sent), link, num_bits,
                                  rng.spawn(3))

    # receiver-side mirror: same actions, same order; corrupted indices fall
    # back to a random entry of the same slot, chosen once and reused for the
    # reconstruction lookup
    fallback_rng = rng.spawn(4)
    fallbacks = 0
    resolved: list[tuple[int, bool]] = []
    decoded_by_slot = dict(zip(hit_slots, decoded))
    upg_rows = dict(zip(upgrades, received_upg))
    miss_iter = iter(received_miss)
    for slot in range(model.n_slots):
        if not reduction.hit_mask[slot]:
            rx_cache.insert(slot, next(miss_iter), snr_cur)
            continue
        idx, corrupted = decoded_by_slot[slot]
        pos = idx - slot * rx_cache.capacity
        if corrupted or not (0 <= pos < len(rx_cache.slots[slot])):
            fallbacks += 1
            pos = int(fallback_rng.integers(0, len(rx_cache.slots[slot])))
        if slot in upgrade_set:
            # mirror the upgrade with the received (noisy) fresh vector
            rx_cache.replace_entry(slot, pos, upg_rows[slot], snr_cur)
        else:
            rx_cache.refresh(slot, pos)
        resolved.append((slot * rx_cache.capacity + pos, False))

    # reconstruction: kept slots from the channel, hit slots from the
    # post-commit receiver cache at the resolved positions
    restore = cache_restore(rx_cache, reduction, received_miss, resolved,
                            rng.spawn(5))
    reconstruction = generate(model, restore.latent)

    analog = (reduction.n_s + len(upgrades)) * vec_len // 2
    digital = index_symbol_cost(len(reduction.indices_sent), link,
                                tx_cache.capacity, tx_cache.n_slots)
    n = model.source_bandwidth
    record = TransmissionRecord(
        analog_complex_symbols=analog,
        digital_symbols=digital,
        source_bandwidth=n,
        bcr=compression_ratio(analog, digital, n),
        snr_db_actual=snr_cur,
        metrics=metric_report(reconstruction, target),
        hit_mask=tuple(reduction.hit_mask),
        indices_sent=tuple(reduction.indices_sent),
        n_s=reduction.n_s,
        upgrades=len(upgrades),
        fallbacks=fallbacks + restore.fallbacks,
        power_rel_err=max(power_errs),
    )
    return reconstruction, record
