"""Command-line front end.

Subcommands: invert (single image, no channel), transmit (one full
transmission round), sequence (multi-round cached run), cache-stats (run a
sequence and dump the final cache state), gradcheck (finite-difference
verification of every analytic objective gradient).

Exit codes: 0 success, 2 configuration error, 3 numerical divergence or a
failed gradient check, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .cache import SemanticCache
from .cached_pipeline import TwoStageConfig, straight_through_objective_fn, transmit_cached
from .errors import ConfigurationError, DivergenceError, NumericalError
from .generator import LatentCode, build_toy_generator, generate
from .harness import (SequenceReport, build_config, emit_report,
                      generate_source_stream, run_sequence_with_state)
from .inversion import (channel_aware_objective, metric_report, mse_objective,
                        plain_invert, transmit_image)
from .objective import LossConfig
from .optim import gradient_max_rel_error
from .rng import seeded_rng

GRADCHECK_TOLERANCE = 1e-3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed")
    parser.add_argument("--out", metavar="DIR", default="out", help="output directory")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--no-cache", action="store_true",
                        help="bypass the semantic cache (plain pipeline)")
    parser.add_argument("--thresholds", metavar="NAME",
                        help="gamma_A | gamma_B | threshold file (slot=value lines)")


def _config_from_args(args) -> "ExperimentConfig":
    from .harness import load_config

    overrides = load_config(args.config) if args.config else {}
    return build_config(overrides, seed=args.seed, thresholds=args.thresholds,
                        no_cache=args.no_cache)


def _outdir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_invert(args) -> int:
    config = _config_from_args(args)
    model = config.build_model()
    root = seeded_rng(config.seed, 0)
    stream = generate_source_stream(model, config.source, root.spawn(1))
    if len(stream) == 0:
        raise ConfigurationError("source.count must be >= 1 for invert")
    target = stream[0]
    latent = plain_invert(model, target, config.inversion, root.spawn(2))
    reconstruction = generate(model, latent)
    metrics = metric_report(reconstruction, target)
    metrics["mse"] = float(np.mean((reconstruction - target) ** 2))
    payload = {"seed": config.seed, "config": config.echo, "metrics": metrics}
    out = _outdir(args) / "invert.json"
    _write_json(out, payload)
    print(f"inversion mse={metrics['mse']:.3e} psnr={metrics['psnr']:.2f} dB "
          f"-> {out}")
    return 0


def _single_round_report(record, config) -> SequenceReport:
    return SequenceReport([record], [], config.seed, config.echo)


def cmd_transmit(args) -> int:
    config = _config_from_args(args)
    model = config.build_model()
    root = seeded_rng(config.seed, 0)
    stream = generate_source_stream(model, config.source, root.spawn(1))
    if len(stream) == 0:
        raise ConfigurationError("source.count must be >= 1 for transmit")
    target = stream[0]
    round_rng = root.spawn(2)
    channel_cfg = config.round_channel(round_rng.spawn(0))
    sigma2_hat = config.estimated_sigma2(channel_cfg)
    if config.use_cache:
        tx_cache, rx_cache = config.build_caches()
        two_stage = TwoStageConfig(config.inversion, config.two_stage_iters,
                                   config.freeze_hits)
        _, record = transmit_cached(model, target, tx_cache, rx_cache,
                                    channel_cfg, sigma2_hat, config.link,
                                    two_stage, round_rng.spawn(1))
    else:
        _, record = transmit_image(model, target, channel_cfg, sigma2_hat,
                                   config.inversion, round_rng.spawn(1))
    out = _outdir(args) / f"transmit.{args.format}"
    emit_report(_single_round_report(record, config), args.format, str(out))
    print(f"transmitted 1 image at {record.snr_db_actual:g} dB, "
          f"bcr={record.bcr}, psnr={record.metrics['psnr']:.2f} dB -> {out}")
    return 0


def cmd_sequence(args) -> int:
    config = _config_from_args(args)
    report, _, _ = run_sequence_with_state(config)
    out = _outdir(args) / f"sequence.{args.format}"
    emit_report(report, args.format, str(out))
    agg = report.aggregates()
    print(f"{len(report.records)} rounds ({len(report.errors)} failed), "
          f"mean bcr={agg['mean_bcr']}, mean psnr={agg['mean_psnr']:.2f} dB "
          f"-> {out}")
    return 0


def cmd_cache_stats(args) -> int:
    config = _config_from_args(args)
    if not config.use_cache:
        raise ConfigurationError("cache-stats needs the cache enabled")
    report, tx_cache, rx_cache = run_sequence_with_state(config)
    payload = {
        "seed": config.seed,
        "rounds": report.rounds,
        "transmitter": tx_cache.to_json(),
        "receiver": rx_cache.to_json(),
    }
    out = _outdir(args) / "cache_stats.json"
    _write_json(out, payload)
    occ = tx_cache.occupancy()
    print(f"cache occupancy after {report.rounds} rounds: {occ} "
          f"(clock {tx_cache.logical_clock}) -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    n_slots, vec_len, height, width = 4, 8, 16, 16
    model = build_toy_generator(n_slots, vec_len, height, width, seed=seed)
    rng = seeded_rng(seed, 5)
    target = generate(model, LatentCode.sample_prior(n_slots, vec_len, rng.spawn(0)))
    point = 0.5 * rng.spawn(1).normal(n_slots * vec_len)
    loss_cfg = LossConfig()
    sigma2 = 1.0
    noise = rng.spawn(2).normal(n_slots * vec_len) * math.sqrt(sigma2 / 2.0)

    cache = SemanticCache(n_slots, vec_len, 4, np.full(n_slots, 0.8))
    latent = LatentCode.from_flat(point, n_slots, vec_len)
    cache.insert(0, latent.vectors[0] + 0.01 * rng.spawn(3).normal(vec_len), 3.0)
    reduction = cache.reduce(latent)
    kept = len(reduction.kept_slots) * vec_len

    checks = [
        ("plain-mse", mse_objective(model, target), point),
        ("channel-aware", channel_aware_objective(model, target, loss_cfg, 1.0,
                                                  noise), point),
        ("straight-through",
         straight_through_objective_fn(model, target, reduction, cache,
                                       loss_cfg, noise[:kept]), point),
    ]
    worst = 0.0
    for name, objective, at in checks:
        err = gradient_max_rel_error(objective, at)
        worst = max(worst, err)
        status = "PASS" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:17s} max_rel_err={err:.3e}  {status}")
    if worst >= GRADCHECK_TOLERANCE:
        print(f"gradient check failed (tolerance {GRADCHECK_TOLERANCE:g})",
              file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semlink",
        description="Generative joint source-channel coding simulator with "
                    "mirrored semantic caches")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in [
        ("invert", cmd_invert, "invert one image against the generator (no channel)"),
        ("transmit", cmd_transmit, "run one transmission round"),
        ("sequence", cmd_sequence, "run a multi-round sequence"),
        ("cache-stats", cmd_cache_stats, "run a sequence and dump cache state"),
        ("gradcheck", cmd_gradcheck, "verify analytic gradients against finite differences"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
