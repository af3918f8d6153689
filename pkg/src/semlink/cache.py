"""Mirrored per-slot codebooks of previously transmitted semantic vectors.

A cache holds up to ``capacity`` entries per slot. Matching uses cosine
similarity against a per-slot threshold (hit iff similarity >= threshold, so
a threshold of 1 still matches exact duplicates); zero-norm vectors have
similarity 0 by convention and never match. Entries carry the SNR at which
their vector was transmitted plus a logical access timestamp; eviction
removes the entry minimizing

    alpha * snr_normalized + (1 - alpha) * last_access / logical_clock

with the SNR tag normalized over the configured snr_range, so alpha = 0
degenerates to classic LRU and alpha = 1 to pure lowest-SNR eviction. The
logical clock counts mutating operations; wall time is never used.

Transmitter and receiver each own one cache instance. Mirroring is driven
by the transmission pipeline: the receiver replays the transmitter's
structural decisions, so occupancies, positions, SNR tags and timestamps
stay identical while entry *vectors* may differ by channel noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolationError
from .generator import LatentCode
from .objective import cosine_similarity
from .rng import RngStream

# Built-in 28-slot threshold tables. Index = slot.
GAMMA_A = (0.90, 0.95, 0.80, 0.80, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95,
           0.95, 0.95, 0.90, 0.90, 0.85, 0.85, 0.90, 0.90, 0.90, 0.90,
           0.80, 0.80, 0.80, 0.10, 0.50, 0.10, 0.80, 0.10)
GAMMA_B = (0.85, 0.85, 0.80, 0.80, 0.92, 0.92, 0.92, 0.92, 0.92, 0.92,
           0.92, 0.92, 0.85, 0.80, 0.80, 0.80, 0.85, 0.85, 0.85, 0.85,
           0.75, 0.75, 0.75, 0.10, 0.50, 0.10, 0.75, 0.10)

BUILTIN_THRESHOLDS = {"gamma_A": GAMMA_A, "gamma_B": GAMMA_B}


def load_thresholds(name: str) -> np.ndarray:
    """A built-in table name (gamma_A / gamma_B) or a path to a plain-text
    file with one ``slot=value`` pair per line."""
    if name in BUILTIN_THRESHOLDS:
        return np.array(BUILTIN_THRESHOLDS[name])
    path = Path(name)
    if not path.is_file():
        raise ConfigurationError(f"unknown threshold set {name!r} (not built in, "
                                 f"and no such file)")
    pairs: dict[int, float] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            slot_text, value_text = line.split("=", 1)
            slot = int(slot_text)
            value = float(value_text)
        except ValueError:
            raise ConfigurationError(f"{path}:{line_no}: expected slot=value")
        if not (0.0 <= value <= 1.0):
            raise ConfigurationError(f"{path}:{line_no}: threshold must be in [0,1]")
        if slot < 0 or slot in pairs:
            raise ConfigurationError(f"{path}:{line_no}: bad or duplicate slot {slot}")
        pairs[slot] = value
    if not pairs:
        raise ConfigurationError(f"{path}: no thresholds found")
    n = max(pairs) + 1
    if sorted(pairs) != list(range(n)):
        raise ConfigurationError(f"{path}: slots must cover 0..{n - 1} without gaps")
    return np.array([pairs[i] for i in range(n)])


@dataclass
class CacheEntry:
    vector: np.ndarray
    snr_tag: float
    last_access: int


@dataclass(frozen=True)
class StoreOutcome:
    kind: str  # "inserted" | "upgraded" | "refreshed-skip"
    position: int


@dataclass(frozen=True)
class ReductionResult:
    """Outcome of matching a latent against the cache: which slots hit (and
    become indices) and which must be transmitted in full."""

    reduced_vectors: np.ndarray  # (n_kept, vec_len), slot-ascending
    kept_slots: tuple
    indices_sent: tuple  # flat slot*capacity + position, slot-ascending hits
    hit_mask: tuple
    hit_positions: tuple
    similarities: tuple  # best per-slot similarity, nan for empty slots

    @property
    def n_s(self) -> int:
        return len(self.kept_slots)

    def kept_flat(self) -> np.ndarray:
        return self.reduced_vectors.reshape(-1)


class SemanticCache:
    """Single-owner mutable state; one instance per endpoint."""

    def __init__(self, n_slots: int, vec_len: int, capacity: int,
                 thresholds, alpha: float = 0.5,
                 snr_range: tuple[float, float] = (0.0, 5.0)):
        thresholds = np.asarray(thresholds, dtype=float)
        if n_slots < 1 or vec_len < 1 or capacity < 1:
            raise ConfigurationError("n_slots, vec_len and capacity must be >= 1")
        if thresholds.shape != (n_slots,):
            raise ConfigurationError(
                f"need one threshold per slot: got {thresholds.shape}, "
                f"n_slots={n_slots}")
        if np.any(thresholds < 0) or np.any(thresholds > 1):
            raise ConfigurationError("thresholds must be in [0, 1]")
        if not (0.0 <= alpha <= 1.0):
            raise ConfigurationError("alpha must be in [0, 1]")
        if not (snr_range[1] > snr_range[0]):
            raise ConfigurationError("snr_range must satisfy max > min")
        self.n_slots = n_slots
        self.vec_len = vec_len
        self.capacity = capacity
        self.thresholds = thresholds
        self.alpha = alpha
        self.snr_range = (float(snr_range[0]), float(snr_range[1]))
        self.slots: list[list[CacheEntry]] = [[] for _ in range(n_slots)]
        self.logical_clock = 0

    # -- queries ------------------------------------------------------------

    def _check_slot(self, slot: int) -> None:
        if not (0 <= slot < self.n_slots):
            raise ContractViolationError(f"slot {slot} out of range")

    def match(self, slot: int, query: np.ndarray):
        """Best cached entry by cosine similarity: (position, similarity), or
        None for an empty slot. Ties break to the lowest position."""
        self._check_slot(slot)
        query = np.asarray(query, dtype=float)
        if query.shape != (self.vec_len,):
            raise ContractViolationError(f"query length {query.size} != {self.vec_len}")
        entries = self.slots[slot]
        if not entries:
            return None
        sims = [cosine_similarity(query, e.vector) for e in entries]
        pos = int(np.argmax(sims))
        return pos, sims[pos]

    def reduce(self, latent: LatentCode, commit: bool = False) -> ReductionResult:
        """Split a latent into cache hits (indices) and kept vectors.

        Hit iff best similarity >= the slot threshold. With commit=True the
        hit entries' access timestamps advance; optimization loops must use
        the default dry run so the cache state never depends on iteration
        count.
        """
        if (latent.n_slots, latent.vec_len) != (self.n_slots, self.vec_len):
            raise ContractViolationError("latent does not match cache dimensions")
        kept_slots, kept_vecs, indices, mask, hit_positions, sims = [], [], [], [], [], []
        for i in range(self.n_slots):
            m = self.match(i, latent.vectors[i])
            sims.append(float("nan") if m is None else m[1])
            if m is not None and m[1] >= self.thresholds[i]:
                mask.append(True)
                hit_positions.append(m[0])
                indices.append(i * self.capacity + m[0])
            else:
                mask.append(False)
                kept_slots.append(i)
                kept_vecs.append(latent.vectors[i])
        if commit:
            for slot, pos in zip([i for i in range(self.n_slots) if mask[i]],
                                 hit_positions):
                self.refresh(slot, pos)
        reduced = (np.array(kept_vecs) if kept_vecs
                   else np.empty((0, self.vec_len)))
        return ReductionResult(reduced, tuple(kept_slots), tuple(indices),
                               tuple(mask), tuple(hit_positions), tuple(sims))

    def priority(self, entry: CacheEntry) -> float:
        lo, hi = self.snr_range
        snr_norm = min(max((entry.snr_tag - lo) / (hi - lo), 0.0), 1.0)
        t_norm = entry.last_access / max(self.logical_clock, 1)
        return self.alpha * snr_norm + (1.0 - self.alpha) * t_norm

    def occupancy(self) -> list[int]:
        return [len(s) for s in self.slots]

    def structural_state(self):
        """Everything mirrored between endpoints except the vector values."""
        return (self.logical_clock,
                tuple(tuple((e.snr_tag, e.last_access) for e in s)
                      for s in self.slots))

    # -- mutations (each advances the logical clock exactly once) ------------

    def _tick(self) -> int:
        self.logical_clock += 1
        return self.logical_clock

    def _evict(self, slot: int) -> int:
        entries = self.slots[slot]
        if not entries:
            raise ContractViolationError(f"cannot evict from empty slot {slot}")
        scores = [self.priority(e) for e in entries]
        pos = int(np.argmin(scores))
        entries.pop(pos)
        return pos

    def evict_lowest_priority(self, slot: int) -> int:
        """Remove and return the position of the lowest-priority entry."""
        self._check_slot(slot)
        pos = self._evict(slot)
        self._tick()
        return pos

    def insert(self, slot: int, vector: np.ndarray, snr_db: float) -> int:
        """Append a new entry, evicting first if the slot is full."""
        self._check_slot(slot)
        vector = np.array(vector, dtype=float, copy=True)
        vector.setflags(write=False)
        if len(self.slots[slot]) >= self.capacity:
            self._evict(slot)
        tick = self._tick()
        self.slots[slot].append(CacheEntry(vector, float(snr_db), tick))
        return len(self.slots[slot]) - 1

    def replace_entry(self, slot: int, position: int, vector: np.ndarray,
                      snr_db: float) -> None:
        """Unconditional in-place replacement (mirroring a remote decision)."""
        self._check_slot(slot)
        if not (0 <= position < len(self.slots[slot])):
            raise ContractViolationError(f"no entry at slot {slot} position {position}")
        vector = np.array(vector, dtype=float, copy=True)
        vector.setflags(write=False)
        self.slots[slot][position] = CacheEntry(vector, float(snr_db), self._tick())

    def upgrade(self, slot: int, position: int, vector: np.ndarray,
                snr_db: float) -> None:
        """Replace an entry with a fresher copy transmitted at >= its SNR."""
        self._check_slot(slot)
        entry = self.slots[slot][position]
        if snr_db < entry.snr_tag:
            raise ContractViolationError(
                f"upgrade at {snr_db} dB below stored tag {entry.snr_tag} dB")
        self.replace_entry(slot, position, vector, snr_db)

    def refresh(self, slot: int, position: int) -> None:
        """Bump an entry's access timestamp (cache hit bookkeeping)."""
        self._check_slot(slot)
        self.slots[slot][position].last_access = self._tick()

    def store(self, slot: int, vector: np.ndarray, snr_db: float) -> StoreOutcome:
        """Match-then-store: upgrade a matching entry iff the current SNR is
        at least its tag, keep it (timestamp refreshed) otherwise, insert
        (with eviction) when nothing matches."""
        self._check_slot(slot)
        m = self.match(slot, vector)
        if m is not None and m[1] >= self.thresholds[slot]:
            pos = m[0]
            if snr_db >= self.slots[slot][pos].snr_tag:
                self.upgrade(slot, pos, vector, snr_db)
                return StoreOutcome("upgraded", pos)
            self.refresh(slot, pos)
            return StoreOutcome("refreshed-skip", pos)
        pos = self.insert(slot, vector, snr_db)
        return StoreOutcome("inserted", pos)

    # -- debugging serialization (caches are in-memory per experiment) -------

    def to_json(self, include_vectors: bool = False) -> dict:
        slots = []
        for entries in self.slots:
            row = []
            for e in entries:
                item = {"snr_tag": e.snr_tag, "last_access": e.last_access}
                if include_vectors:
                    item["vector"] = e.vector.tolist()
                row.append(item)
            slots.append(row)
        return {
            "n_slots": self.n_slots,
            "vec_len": self.vec_len,
            "capacity": self.capacity,
            "alpha": self.alpha,
            "snr_range": list(self.snr_range),
            "thresholds": self.thresholds.tolist(),
            "logical_clock": self.logical_clock,
            "occupancy": self.occupancy(),
            "slots": slots,
        }


@dataclass(frozen=True)
class RestoreResult:
    latent: LatentCode
    fallbacks: int
    used_positions: dict  # hit slot -> cache position used (None = zero fill)


def cache_restore(cache: SemanticCache, reduction: ReductionResult,
                  received_vectors: np.ndarray,
                  received_indices: list[tuple[int, bool]],
                  rng: RngStream) -> RestoreResult:
    """Reassemble the full latent from received vectors plus cache lookups.

    received_indices pairs (decoded index, corrupted flag) align with the hit
    slots in ascending order. A corrupted or out-of-range index falls back to
    a uniformly random entry of the same slot (seeded); an empty slot falls
    back to a zero vector. Fallbacks are counted, never raised. The cache is
    not mutated.
    """
    received_vectors = np.asarray(received_vectors, dtype=float).reshape(
        len(reduction.kept_slots), cache.vec_len)
    hit_slots = [i for i, h in enumerate(reduction.hit_mask) if h]
    if len(received_indices) != len(hit_slots):
        raise ContractViolationError(
            f"{len(received_indices)} indices for {len(hit_slots)} hit slots")
    if sorted(hit_slots + list(reduction.kept_slots)) != list(range(cache.n_slots)):
        raise ContractViolationError("kept slots and hits must partition the slots")
    vectors = np.zeros((cache.n_slots, cache.vec_len))
    for slot, vec in zip(reduction.kept_slots, received_vectors):
        vectors[slot] = vec
    fallbacks = 0
    used: dict[int, int | None] = {}
    for slot, (decoded, corrupted) in zip(hit_slots, received_indices):
        entries = cache.slots[slot]
        pos = decoded - slot * cache.capacity
        if corrupted or not (0 <= pos < len(entries)):
            fallbacks += 1
            if entries:
                pos = int(rng.integers(0, len(entries)))
            else:
                used[slot] = None
                continue
        vectors[slot] = entries[pos].vector
        used[slot] = pos
    return RestoreResult(LatentCode(vectors), fallbacks, used)
