"""Structured latent codes and a frozen compositional image generator.

The generator stands in for a large pretrained model at desk scale while
keeping the one property the caching layer depends on: disentanglement.
The latent is a stack of per-slot vectors; slot 0 drives a low-amplitude
field over the whole image, and every other slot drives a two-layer
nonlinear map whose output lands only inside that slot's fixed rectangular
region. Pixels outside region i are bit-identical under changes to vector
i alone. A smooth sigmoid squashes pixels into [0,1] (hard clamping would
create zero-gradient plateaus that stall inversion), so the map is C^1
everywhere and gradient checks pass globally.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .errors import ContractViolationError
from .rng import RngStream


class LatentCode:
    """n_slots semantic vectors of length vec_len each; immutable."""

    __slots__ = ("vectors",)

    def __init__(self, vectors: np.ndarray):
        arr = np.array(vectors, dtype=float, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractViolationError("latent must be a (n_slots, vec_len) array")
        if not np.all(np.isfinite(arr)):
            raise ContractViolationError("latent entries must be finite")
        if (arr.shape[0] * arr.shape[1]) % 2 != 0:
            raise ContractViolationError("flattened latent length must be even")
        arr.setflags(write=False)
        self.vectors = arr

    @property
    def n_slots(self) -> int:
        return self.vectors.shape[0]

    @property
    def vec_len(self) -> int:
        return self.vectors.shape[1]

    def flat(self) -> np.ndarray:
        return self.vectors.reshape(-1)

    @classmethod
    def from_flat(cls, flat: np.ndarray, n_slots: int, vec_len: int) -> "LatentCode":
        flat = np.asarray(flat, dtype=float)
        if flat.size != n_slots * vec_len:
            raise ContractViolationError(
                f"flat length {flat.size} != {n_slots} x {vec_len}")
        return cls(flat.reshape(n_slots, vec_len))

    @classmethod
    def sample_prior(cls, n_slots: int, vec_len: int, rng: RngStream) -> "LatentCode":
        """Standard-normal prior draw used to initialize inversion."""
        return cls(rng.normal((n_slots, vec_len)))

    def __repr__(self) -> str:
        return f"LatentCode(n_slots={self.n_slots}, vec_len={self.vec_len})"


def grid_masks(n_cells: int, height: int, width: int) -> list[np.ndarray]:
    """Partition height x width into n_cells rectangles; returns flat pixel
    index arrays (each pixel in exactly one cell)."""
    if n_cells < 1 or n_cells > height * width:
        raise ContractViolationError(
            f"cannot partition {height}x{width} into {n_cells} cells")
    n_rows = min(max(1, math.isqrt(n_cells)), height)
    base, extra = divmod(n_cells, n_rows)
    counts = [base + (1 if i < extra else 0) for i in range(n_rows)]
    if max(counts) > width:
        n_rows = min(n_cells, height)
        base, extra = divmod(n_cells, n_rows)
        counts = [base + (1 if i < extra else 0) for i in range(n_rows)]
        if max(counts) > width:
            raise ContractViolationError(
                f"cannot partition {height}x{width} into {n_cells} grid cells")
    bands = np.array_split(np.arange(height), n_rows)
    masks = []
    for rows, n_cols in zip(bands, counts):
        for cols in np.array_split(np.arange(width), n_cols):
            cell = (rows[:, None] * width + cols[None, :]).reshape(-1)
            masks.append(cell)
    return masks


class GeneratorModel:
    """Fixed-parameter differentiable map from LatentCode to a [0,1] image."""

    def __init__(self, n_slots, vec_len, height, width, hidden_dim, global_scale,
                 parameter_seed, masks, weights):
        self.n_slots = n_slots
        self.vec_len = vec_len
        self.height = height
        self.width = width
        self.hidden_dim = hidden_dim
        self.global_scale = global_scale
        self.parameter_seed = parameter_seed
        self.region_masks = masks  # index None for the global slot 0
        self._weights = weights  # per slot: (w1, b1, w2, b2), frozen
        for quad in weights:
            for arr in quad:
                arr.setflags(write=False)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.height, self.width)

    @property
    def source_bandwidth(self) -> int:
        return 3 * self.height * self.width

    def config(self) -> dict:
        return {
            "n_slots": self.n_slots,
            "vec_len": self.vec_len,
            "height": self.height,
            "width": self.width,
            "hidden_dim": self.hidden_dim,
            "global_scale": self.global_scale,
            "seed": self.parameter_seed,
            "mask_layout": "grid",
        }


def build_toy_generator(n_slots: int, vec_len: int, height: int, width: int,
                        seed: int, hidden_dim: int | None = None,
                        global_scale: float = 0.1) -> GeneratorModel:
    """Deterministic per seed; slots 1..n_slots-1 partition the image into a
    rectangular grid, slot 0 adds a low-amplitude field everywhere."""
    if n_slots < 2:
        raise ContractViolationError("need at least 2 slots (one global, one regional)")
    if vec_len < 1 or (n_slots * vec_len) % 2 != 0:
        raise ContractViolationError("n_slots * vec_len must be positive and even")
    hidden_dim = hidden_dim or 2 * vec_len
    cells = grid_masks(n_slots - 1, height, width)
    masks: list[np.ndarray | None] = [None] + cells
    rng = RngStream(seed, stream_id=0)
    weights = []
    # scales keep pre-squash pixels within the responsive band of the sigmoid;
    # saturated outputs flatten the inversion landscape
    for i in range(n_slots):
        srng = rng.spawn(i)
        out_dim = 3 * height * width if i == 0 else 3 * masks[i].size
        w1 = srng.normal((hidden_dim, vec_len)) / math.sqrt(vec_len)
        b1 = 0.1 * srng.normal(hidden_dim)
        w2 = 0.7 * srng.normal((out_dim, hidden_dim)) / math.sqrt(hidden_dim)
        b2 = 0.2 * srng.normal(out_dim)
        weights.append((w1, b1, w2, b2))
    return GeneratorModel(n_slots, vec_len, height, width, hidden_dim,
                          global_scale, seed, masks, weights)


def _sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _check_latent(model: GeneratorModel, latent: LatentCode) -> None:
    if latent.n_slots != model.n_slots or latent.vec_len != model.vec_len:
        raise ContractViolationError(
            f"latent ({latent.n_slots},{latent.vec_len}) does not match model "
            f"({model.n_slots},{model.vec_len})")


def apply_with_vjp(model: GeneratorModel, latent: LatentCode):
    """Forward pass plus a closure computing J^T @ cotangent from the stored
    hidden activations (one extra backward sweep, no recomputation)."""
    _check_latent(model, latent)
    n_pix = model.height * model.width
    pre = np.zeros((3, n_pix))
    hiddens = []
    for i in range(model.n_slots):
        w1, b1, w2, b2 = model._weights[i]
        out, hidden = kernels.dense2_forward(latent.vectors[i], w1, b1, w2, b2)
        hiddens.append(hidden)
        if i == 0:
            pre += model.global_scale * out.reshape(3, n_pix)
        else:
            pre[:, model.region_masks[i]] += out.reshape(3, -1)
    image = _sigmoid(pre).reshape(model.image_shape)

    def vjp(cotangent: np.ndarray) -> np.ndarray:
        cotangent = np.asarray(cotangent, dtype=float)
        if cotangent.shape != model.image_shape:
            raise ContractViolationError(
                f"cotangent shape {cotangent.shape} != image shape {model.image_shape}")
        flat_img = image.reshape(3, n_pix)
        dpre = (cotangent.reshape(3, n_pix) * flat_img * (1.0 - flat_img))
        grad = np.empty((model.n_slots, model.vec_len))
        for i in range(model.n_slots):
            w1, _, w2, _ = model._weights[i]
            if i == 0:
                cot = np.ascontiguousarray((model.global_scale * dpre).reshape(-1))
            else:
                cot = np.ascontiguousarray(dpre[:, model.region_masks[i]].reshape(-1))
            grad[i] = kernels.dense2_vjp(cot, hiddens[i], w1, w2)
        return grad.reshape(-1)

    return image, vjp


def generate(model: GeneratorModel, latent: LatentCode) -> np.ndarray:
    """Deterministic image in (0,1), shape (3, height, width)."""
    image, _ = apply_with_vjp(model, latent)
    return image


def generate_vjp(model: GeneratorModel, latent: LatentCode,
                 cotangent: np.ndarray) -> np.ndarray:
    """J^T @ cotangent, flattened to length n_slots * vec_len."""
    _, vjp = apply_with_vjp(model, latent)
    return vjp(cotangent)
