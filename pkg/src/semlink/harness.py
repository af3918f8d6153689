"""Experiment orchestration: configuration, correlated sources, multi-round
sequences, and deterministic report emission.

The source model replaces a natural-image dataset with exactly the structure
the cache exploits: every slot draws from a finite per-slot pool of latent
vectors with a configurable reuse probability, so semantic components recur
across images. Reports carry every accounting quantity per round with the
compression ratio as an exact reduced rational; identical configs and seeds
produce byte-identical report files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cache import SemanticCache, load_thresholds
from .cached_pipeline import TwoStageConfig, transmit_cached
from .channel import ChannelConfig, IndexLinkConfig, snr_to_sigma2
from .errors import (ConfigurationError, ContractViolationError,
                     DegenerateSignalError, DivergenceError, NumericalError)
from .generator import GeneratorModel, LatentCode, build_toy_generator, generate
from .inversion import InversionConfig, TransmissionRecord, transmit_image
from .objective import LossConfig
from .rng import RngStream, seeded_rng

CSV_COLUMNS = ["round", "snr_db", "n_s", "hits", "analog_symbols",
               "digital_symbols", "bcr_num", "bcr_den", "psnr_db", "ms_ssim",
               "l1", "upgrades", "fallbacks"]

DEFAULT_CONFIG = {
    "seed": 0,
    "use_cache": True,
    "generator": {
        "n_slots": 8,
        "vec_len": 16,
        "height": 32,
        "width": 32,
        "hidden_dim": None,
        "global_scale": 0.1,
        "seed": None,  # falls back to the master seed
    },
    "channel": {
        "snr_mode": "uniform",  # or "fixed"
        "snr_db": 3.0,
        "snr_min": 0.0,
        "snr_max": 5.0,
        "power": 1.0,
        "noiseless": False,
        "snr_est_db": None,  # None = transmitter knows the actual SNR
    },
    "inversion": {
        "max_iters": 300,
        "learning_rate": 0.01,
        "warm_start_iters": 300,
        "resample_noise": True,
        "lambda1": 0.1,
        "lambda2": 1.0,
        "lambda3": 0.1,
        "perceptual_seed": 7,
        "task_plugin": "pooled-cosine",
    },
    "two_stage": {
        "stage2_iters": 100,
        "freeze_hits": True,
    },
    "cache": {
        "capacity": 16,
        "thresholds": 0.8,  # number, built-in name, or slot=value file
        "alpha": 0.5,
    },
    "link": {
        "code_rate": 1.0,
        "bits_per_symbol": 4,
        "bit_error_rate": 0.0,
    },
    "source": {
        "count": 20,
        "pool_size": 10,
        "reuse_prob": 0.7,
    },
}


def _merge(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            out[key] = _merge(default, overrides.get(key, {}) or {}, f"{path}{key}.")
        else:
            out[key] = overrides.get(key, default)
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown config keys: "
                                 f"{sorted(path + k for k in unknown)}")
    return out


@dataclass(frozen=True)
class SourceSpec:
    count: int = 20
    pool_size: int = 10
    reuse_prob: float = 0.7

    def __post_init__(self):
        if self.count < 0 or self.pool_size < 1:
            raise ConfigurationError("count must be >= 0 and pool_size >= 1")
        if not (0.0 <= self.reuse_prob <= 1.0):
            raise ConfigurationError("reuse_prob must be in [0, 1]")


class SourceStream:
    """Generated image sequence with the latents and reuse flags behind it."""

    def __init__(self, images, latents, reuse_mask):
        self.images = images
        self.latents = latents
        self.reuse_mask = reuse_mask

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]


def generate_source_stream(model: GeneratorModel, spec: SourceSpec,
                           rng: RngStream) -> SourceStream:
    """Correlated source: per slot, reuse a pooled vector with probability
    reuse_prob, else draw fresh from the prior. Decision, pool-pick and
    fresh-draw streams are separate so reuse decisions are comparable across
    runs that differ only in reuse_prob."""
    pools = rng.spawn(0).normal((model.n_slots, spec.pool_size, model.vec_len))
    decide = rng.spawn(1)
    pick = rng.spawn(2)
    fresh = rng.spawn(3)
    images, latents = [], []
    reuse_mask = np.zeros((spec.count, model.n_slots), dtype=bool)
    for t in range(spec.count):
        vectors = np.empty((model.n_slots, model.vec_len))
        for i in range(model.n_slots):
            if decide.uniform() < spec.reuse_prob:
                vectors[i] = pools[i, int(pick.integers(0, spec.pool_size))]
                reuse_mask[t, i] = True
            else:
                vectors[i] = fresh.normal(model.vec_len)
        latent = LatentCode(vectors)
        latents.append(latent)
        images.append(generate(model, latent))
    return SourceStream(images, latents, reuse_mask)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved and validated run settings; echo holds the plain dict."""

    echo: dict
    seed: int
    use_cache: bool
    source: SourceSpec
    inversion: InversionConfig
    two_stage_iters: int
    freeze_hits: bool
    link: IndexLinkConfig
    cache_capacity: int
    cache_alpha: float
    thresholds: np.ndarray | None

    def build_model(self) -> GeneratorModel:
        g = self.echo["generator"]
        seed = g["seed"] if g["seed"] is not None else self.seed
        return build_toy_generator(g["n_slots"], g["vec_len"], g["height"],
                                   g["width"], seed, g["hidden_dim"],
                                   g["global_scale"])

    def build_caches(self) -> tuple[SemanticCache, SemanticCache]:
        ch = self.echo["channel"]
        snr_range = (ch["snr_min"], ch["snr_max"])
        make = lambda: SemanticCache(self.echo["generator"]["n_slots"],
                                     self.echo["generator"]["vec_len"],
                                     self.cache_capacity, self.thresholds,
                                     self.cache_alpha, snr_range)
        return make(), make()

    def round_channel(self, round_rng: RngStream) -> ChannelConfig:
        ch = self.echo["channel"]
        if ch["snr_mode"] == "fixed":
            snr = float(ch["snr_db"])
        else:
            snr = float(round_rng.uniform(low=ch["snr_min"], high=ch["snr_max"]))
        return ChannelConfig(snr, ch["power"], ch["noiseless"])

    def estimated_sigma2(self, channel_cfg: ChannelConfig) -> float:
        ch = self.echo["channel"]
        if ch["snr_est_db"] is not None:
            return snr_to_sigma2(float(ch["snr_est_db"]), ch["power"])
        if channel_cfg.noiseless:
            return 0.0
        return channel_cfg.sigma2()


def build_config(overrides: dict | None = None, *, seed: int | None = None,
                 thresholds: str | None = None,
                 no_cache: bool = False) -> ExperimentConfig:
    """Merge, validate, and resolve every named resource up front."""
    merged = _merge(DEFAULT_CONFIG, overrides or {})
    if seed is not None:
        merged["seed"] = int(seed)
    if thresholds is not None:
        merged["cache"]["thresholds"] = thresholds
    if no_cache:
        merged["use_cache"] = False

    g = merged["generator"]
    for key in ("n_slots", "vec_len", "height", "width"):
        if int(g[key]) < 1:
            raise ConfigurationError(f"generator.{key} must be positive")
        g[key] = int(g[key])
    ch = merged["channel"]
    if ch["snr_mode"] not in ("fixed", "uniform"):
        raise ConfigurationError(f"unknown snr_mode {ch['snr_mode']!r}")
    if ch["snr_mode"] == "uniform" and not (ch["snr_max"] >= ch["snr_min"]):
        raise ConfigurationError("snr_max must be >= snr_min")
    if ch["power"] <= 0:
        raise ConfigurationError("channel power must be positive")

    inv = merged["inversion"]
    loss = LossConfig(inv["lambda1"], inv["lambda2"], inv["lambda3"],
                      int(inv["perceptual_seed"]), inv["task_plugin"])
    inversion = InversionConfig(
        max_iters=int(inv["max_iters"]),
        learning_rate=float(inv["learning_rate"]),
        loss=loss,
        resample_noise_each_iter=bool(inv["resample_noise"]),
        warm_start_iters=int(inv["warm_start_iters"]),
    )
    from .objective import TASK_PLUGINS

    if inv["task_plugin"] not in TASK_PLUGINS:
        raise ConfigurationError(f"unknown task plugin {inv['task_plugin']!r}")

    link_cfg = merged["link"]
    link = IndexLinkConfig(float(link_cfg["code_rate"]),
                           int(link_cfg["bits_per_symbol"]),
                           float(link_cfg["bit_error_rate"]))
    source = SourceSpec(int(merged["source"]["count"]),
                        int(merged["source"]["pool_size"]),
                        float(merged["source"]["reuse_prob"]))

    thresholds_resolved = None
    if merged["use_cache"]:
        spec = merged["cache"]["thresholds"]
        if isinstance(spec, (int, float)) and not isinstance(spec, bool):
            if not (0.0 <= float(spec) <= 1.0):
                raise ConfigurationError("uniform threshold must be in [0, 1]")
            thresholds_resolved = np.full(g["n_slots"], float(spec))
        elif isinstance(spec, list):
            thresholds_resolved = np.asarray(spec, dtype=float)
        elif isinstance(spec, str):
            thresholds_resolved = load_thresholds(spec)
        else:
            raise ConfigurationError(f"bad thresholds spec {spec!r}")
        if thresholds_resolved.shape != (g["n_slots"],):
            raise ConfigurationError(
                f"threshold table has {thresholds_resolved.size} entries but the "
                f"generator has {g['n_slots']} slots; provide a matching table")
        # fail fast on anything else the caches would reject
        SemanticCache(g["n_slots"], g["vec_len"], int(merged["cache"]["capacity"]),
                      thresholds_resolved, float(merged["cache"]["alpha"]),
                      (ch["snr_min"], ch["snr_max"]))

    two = merged["two_stage"]
    if int(two["stage2_iters"]) < 0:
        raise ConfigurationError("stage2_iters must be >= 0")

    return ExperimentConfig(
        echo=merged,
        seed=int(merged["seed"]),
        use_cache=bool(merged["use_cache"]),
        source=source,
        inversion=inversion,
        two_stage_iters=int(two["stage2_iters"]),
        freeze_hits=bool(two["freeze_hits"]),
        link=link,
        cache_capacity=int(merged["cache"]["capacity"]),
        cache_alpha=float(merged["cache"]["alpha"]),
        thresholds=thresholds_resolved,
    )


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})")


# ---------------------------------------------------------------------------
# sequence runs


@dataclass
class SequenceReport:
    records: list
    errors: list  # (round, message)
    seed: int
    config: dict

    @property
    def rounds(self) -> int:
        return len(self.records) + len(self.errors)

    def record_rows(self) -> list[dict]:
        return [record_to_row(rec, i) for i, rec in enumerate(self.records)]

    def aggregates(self) -> dict:
        return aggregates_from_rows(self.record_rows())


def record_to_row(record: TransmissionRecord, round_index: int) -> dict:
    return {
        "round": round_index,
        "snr_db": record.snr_db_actual,
        "n_s": record.n_s,
        "hits": record.hits,
        "analog_symbols": record.analog_complex_symbols,
        "digital_symbols": record.digital_symbols,
        "bcr_num": record.bcr.numerator,
        "bcr_den": record.bcr.denominator,
        "psnr_db": record.metrics["psnr"],
        "ms_ssim": record.metrics["ms_ssim"],
        "l1": record.metrics["l1"],
        "upgrades": record.upgrades,
        "fallbacks": record.fallbacks,
        "hit_mask": [bool(h) for h in record.hit_mask],
        "indices_sent": [int(i) for i in record.indices_sent],
        "source_bandwidth": record.source_bandwidth,
        "power_rel_err": record.power_rel_err,
    }


def aggregates_from_rows(rows: list[dict]) -> dict:
    """Recomputable from serialized records alone (round-trip invariant)."""
    if not rows:
        return {"mean_bcr": None, "mean_psnr": None, "mean_ms_ssim": None,
                "hit_rate_trajectory": []}
    bcr_sum = sum(Fraction(int(r["bcr_num"]), int(r["bcr_den"])) for r in rows)
    mean_bcr = bcr_sum / len(rows)
    n_slots = [r["n_s"] + r["hits"] for r in rows]
    return {
        "mean_bcr": f"{mean_bcr.numerator}/{mean_bcr.denominator}",
        "mean_psnr": sum(r["psnr_db"] for r in rows) / len(rows),
        "mean_ms_ssim": sum(r["ms_ssim"] for r in rows) / len(rows),
        "hit_rate_trajectory": [r["hits"] / n for r, n in zip(rows, n_slots)],
    }


def run_sequence_with_state(config: ExperimentConfig):
    """Run every round; per-round numerical failures are recorded and the
    run continues. Returns (report, tx_cache, rx_cache)."""
    model = config.build_model()
    root = seeded_rng(config.seed, 0)
    stream = generate_source_stream(model, config.source, root.spawn(1))
    tx_cache = rx_cache = None
    if config.use_cache:
        tx_cache, rx_cache = config.build_caches()
    two_stage = TwoStageConfig(config.inversion, config.two_stage_iters,
                               config.freeze_hits)
    rounds_rng = root.spawn(2)
    records, errors = [], []
    for t in range(len(stream)):
        round_rng = rounds_rng.spawn(t)
        channel_cfg = config.round_channel(round_rng.spawn(0))
        sigma2_hat = config.estimated_sigma2(channel_cfg)
        try:
            if config.use_cache:
                _, record = transmit_cached(model, stream[t], tx_cache, rx_cache,
                                            channel_cfg, sigma2_hat, config.link,
                                            two_stage, round_rng.spawn(1))
            else:
                _, record = transmit_image(model, stream[t], channel_cfg,
                                           sigma2_hat, config.inversion,
                                           round_rng.spawn(1))
        except (DivergenceError, DegenerateSignalError, NumericalError) as exc:
            errors.append((t, str(exc)))
            continue
        records.append(record)
    report = SequenceReport(records, errors, config.seed, config.echo)
    return report, tx_cache, rx_cache


def run_sequence(config: ExperimentConfig) -> SequenceReport:
    report, _, _ = run_sequence_with_state(config)
    return report


# ---------------------------------------------------------------------------
# report emission


def report_to_csv(report: SequenceReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.record_rows():
        writer.writerow([row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def report_to_json(report: SequenceReport) -> str:
    payload = {
        "seed": report.seed,
        "config": report.config,
        "rounds": report.rounds,
        "records": report.record_rows(),
        "aggregates": report.aggregates(),
        "errors": [{"round": r, "message": m} for r, m in report.errors],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_report(report: SequenceReport, fmt: str, path: str) -> None:
    """Write the report as CSV (per-round rows) or JSON (records plus config
    echo and aggregates), full float precision either way."""
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
