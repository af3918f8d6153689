"""Complex baseband signal path and the digital index side-link model.

Signals are dimensionless complex amplitudes. The average power constraint
is enforced by scaling a length-k signal so its total energy is exactly
k * power; SNR follows snr_db = 10*log10(power / sigma2). The index link is
not a real channel code: it is a bit-cost formula plus an independent
bit-error model with configurable flip probability (rate-1/3 LDPC at the
SNRs simulated here is effectively error-free, so the default is 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ContractViolationError, ConfigurationError, DegenerateSignalError
from .rng import RngStream


@dataclass(frozen=True)
class ComplexSignal:
    """Length-k complex baseband vector; one sample = one channel use."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.size < 1:
            raise ContractViolationError("signal must be a non-empty 1-D complex vector")
        if not np.all(np.isfinite(samples.real)) or not np.all(np.isfinite(samples.imag)):
            raise ContractViolationError("signal components must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def k(self) -> int:
        return int(self.samples.size)

    def energy(self) -> float:
        # summed over the interleaved real view so the optimizer's
        # real-coordinate normalization computes the identical scale
        v = from_complex(self)
        return float(np.dot(v, v))


@dataclass(frozen=True)
class ChannelConfig:
    """AWGN channel settings; a noiseless channel is a flag, never sigma2=0."""

    snr_db: float
    power_constraint: float = 1.0
    noiseless: bool = False

    def __post_init__(self):
        if self.power_constraint <= 0 or not math.isfinite(self.power_constraint):
            raise ConfigurationError("power constraint must be positive and finite")
        if not self.noiseless and not math.isfinite(self.snr_db):
            raise ConfigurationError("non-finite SNR requires the noiseless flag")

    def sigma2(self) -> float:
        if self.noiseless:
            raise ConfigurationError("noiseless channel has no noise variance")
        return snr_to_sigma2(self.snr_db, self.power_constraint)


@dataclass(frozen=True)
class IndexLinkConfig:
    """Digital side-link: fixed-length index words, coded then modulated."""

    code_rate: float = 1.0 / 3.0
    bits_per_symbol: int = 1
    bit_error_rate: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.code_rate <= 1.0):
            raise ConfigurationError("code rate must be in (0, 1]")
        if self.bits_per_symbol < 1:
            raise ConfigurationError("bits per symbol must be >= 1")
        if not (0.0 <= self.bit_error_rate < 1.0):
            raise ConfigurationError("bit error rate must be in [0, 1)")

    def rate_fraction(self) -> Fraction:
        # recover the intended rational (1/3 as a float is not exactly 1/3)
        return Fraction(self.code_rate).limit_denominator(10 ** 6)


def to_complex(real_vec: np.ndarray) -> ComplexSignal:
    """Pair adjacent reals into complex samples: [a,b,c,d] -> [a+jb, c+jd]."""
    real_vec = np.asarray(real_vec, dtype=float)
    if real_vec.ndim != 1 or real_vec.size % 2 != 0 or real_vec.size == 0:
        raise ContractViolationError("real vector must be 1-D with even, nonzero length")
    return ComplexSignal(real_vec[0::2] + 1j * real_vec[1::2])


def from_complex(signal: ComplexSignal) -> np.ndarray:
    """Exact inverse of to_complex: interleave real and imaginary parts."""
    out = np.empty(2 * signal.k)
    out[0::2] = signal.samples.real
    out[1::2] = signal.samples.imag
    return out


def power_normalize(signal: ComplexSignal, power_constraint: float) -> ComplexSignal:
    """Scale so total energy is exactly k * power_constraint."""
    if power_constraint <= 0:
        raise ContractViolationError("power constraint must be positive")
    energy = signal.energy()
    if energy == 0.0:
        raise DegenerateSignalError("zero-norm signal cannot satisfy the power constraint")
    scale = math.sqrt(signal.k * power_constraint / energy)
    return ComplexSignal(signal.samples * scale)


def snr_to_sigma2(snr_db: float, power_constraint: float) -> float:
    if power_constraint <= 0:
        raise ContractViolationError("power constraint must be positive")
    return power_constraint / (10.0 ** (snr_db / 10.0))


def awgn(signal: ComplexSignal, sigma2: float, rng: RngStream) -> ComplexSignal:
    """Add circularly-symmetric complex Gaussian noise, total variance sigma2
    per sample (sigma2/2 per real component)."""
    if sigma2 < 0:
        raise ContractViolationError("noise variance must be non-negative")
    if sigma2 == 0.0:
        return ComplexSignal(signal.samples.copy())
    return ComplexSignal(signal.samples + rng.complex_normal(signal.k, sigma2))


def channel_forward(latent_flat: np.ndarray, sigma2_hat: float,
                    power_constraint: float, rng: RngStream) -> np.ndarray:
    """Channel-aware forward map: complex pairing, power normalization, noise
    at the estimated level, and mapping back to real coordinates.

    Differentiable in the latent for a fixed noise realization (the
    normalization scaling derivative included; the noise is a constant).
    """
    z = power_normalize(to_complex(latent_flat), power_constraint)
    z = awgn(z, sigma2_hat, rng)
    return from_complex(z)


def index_bits(cache_capacity: int, n_slots: int) -> int:
    """Bits per fixed-length index word over the joint (slot, position) space."""
    if cache_capacity < 1 or n_slots < 1:
        raise ContractViolationError("cache capacity and slot count must be >= 1")
    product = cache_capacity * n_slots
    if product == 1:
        return 1
    return (product - 1).bit_length()


def index_symbol_cost(num_indices: int, link: IndexLinkConfig,
                      cache_capacity: int, n_slots: int) -> int:
    """Modulated symbols for a batch of index words; one ceiling per batch.

    Each modulated symbol is counted as one channel use, interchangeable with
    one complex analog symbol in compression-ratio accounting.
    """
    if num_indices < 0:
        raise ContractViolationError("index count must be non-negative")
    if num_indices == 0:
        return 0
    bits = num_indices * index_bits(cache_capacity, n_slots)
    return int(math.ceil(bits / (link.rate_fraction() * link.bits_per_symbol)))


def index_link_transmit(indices: list[int], link: IndexLinkConfig, num_bits: int,
                        rng: RngStream) -> list[tuple[int, bool]]:
    """Send index words over the bit-error model.

    Each of the num_bits bits flips independently with the configured
    probability. Returns (decoded, corrupted) pairs; corruption is data for
    the caller's fallback handling, not an error.
    """
    limit = 1 << num_bits
    for idx in indices:
        if not (0 <= idx < limit):
            raise ContractViolationError(f"index {idx} not representable in {num_bits} bits")
    p = link.bit_error_rate
    if p == 0.0 or not indices:
        return [(int(idx), False) for idx in indices]
    flips = rng.uniform((len(indices), num_bits)) < p
    out = []
    weights = 1 << np.arange(num_bits)
    for idx, row in zip(indices, flips):
        decoded = int(idx) ^ int(np.dot(row, weights))
        out.append((decoded, decoded != idx))
    return out
