"""diffaccel entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from diffaccel.artifacts import write_curve, write_grid, write_json, write_spectrum
from diffaccel.checkpoint import Checkpoint
from diffaccel.config import ExperimentConfig
from diffaccel.core.diffusion import DiffusionBatch, PredictionTarget, TimestepFilter
from diffaccel.core.models import DenoiserMLP, DiffusionOracle
from diffaccel.datasets import export_csv
from diffaccel.errors import DiffAccelError, InvalidConfigurationError
from diffaccel.experiments import LANDSCAPE_BATCH, compare, landscape_batch, run_consistency, sample_checkpoint
from diffaccel.landscape import Direction, Normalization, interpolate_1d, lanczos_spectrum, surface_2d
from diffaccel.logging_setup import configure_logging
from diffaccel.plots import emit_plots
from diffaccel.trainer import train

logger = logging.getLogger("diffaccel")

EXIT_IO = 4


def _config(args: argparse.Namespace, path: Path | None = None) -> ExperimentConfig:
    return ExperimentConfig.load(path if path is not None else args.config).with_overrides(args.set)


def _out(args: argparse.Namespace) -> Path:
    out = args.out if args.out is not None else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress(args: argparse.Namespace) -> bool:
    return not args.no_progress and sys.stderr.isatty()


def _filter(args: argparse.Namespace, oracle: DiffusionOracle) -> TimestepFilter | None:
    if not args.t_filter:
        return None
    return TimestepFilter.parse(args.t_filter).check_range(oracle.schedule.T)


def _probe_setup(ckpt: Checkpoint, args: argparse.Namespace) -> tuple[DiffusionOracle, np.ndarray, DiffusionBatch]:
    """Oracle, anchor weights and fixed batch for the landscape subcommands."""
    config = ExperimentConfig.from_dict(ckpt.config)
    params = ckpt.params if args.raw else ckpt.ema_params
    model = DenoiserMLP(ckpt.architecture, params, PredictionTarget(ckpt.target))
    batch = landscape_batch(config, args.batch_size, args.batch_seed)
    return DiffusionOracle(model, config.build_schedule()), params.values, batch


def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    resume = Checkpoint.load(args.resume) if args.resume else None
    out = _out(args)
    result = train(config, out, resume=resume, progress=_progress(args))
    last = result.metrics[-1] if result.metrics else None
    print(f"trained to iteration {result.checkpoint.iteration}; checkpoint in {out}")
    if last is not None:
        print(f"final sliced Wasserstein raw={last.sw_raw:.5f} ema={last.sw_ema:.5f}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    samples = sample_checkpoint(ckpt, args.n, args.seed, use_ema=not args.raw)
    path = _out(args) / "samples.csv"
    export_csv(samples, path)
    print(f"wrote {args.n} samples to {path}")
    return 0


def cmd_consistency(args: argparse.Namespace) -> int:
    config = _config(args)
    run = run_consistency(config, args.n_models, args.m, weights=args.weights, all_pairs=args.all_pairs,
                          progress=_progress(args))
    out = _out(args)
    write_json(out / "consistency.json", {"kind": "consistency", **run.report.to_dict()})
    run.grid.save(out / "grid.json")
    print(f"C = {run.report.c_value:.3f} dB over {args.n_models} models, M={args.m}")
    return 0


def cmd_landscape_1d(args: argparse.Namespace) -> int:
    a, b = Checkpoint.load(args.a), Checkpoint.load(args.b)
    oracle, theta_a, batch = _probe_setup(a, args)
    theta_b = (b.params if args.raw else b.ema_params).values
    curve = interpolate_1d(oracle, theta_a, theta_b, np.linspace(0.0, 1.0, args.points), batch,
                           _filter(args, oracle), workers=args.workers)
    path = write_curve(_out(args) / "curve_1d.csv", curve,
                       {"a": str(args.a), "b": str(args.b), "weights": "raw" if args.raw else "ema"})
    print(f"roughness {curve.roughness():.6g}; wrote {path}")
    return 0


def cmd_landscape_2d(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    oracle, theta, batch = _probe_setup(ckpt, args)
    anchor = ckpt.params.with_values(theta)
    rng = np.random.default_rng(args.direction_seed)
    if args.normalization == "interpolation":
        if args.other is None:
            raise InvalidConfigurationError("--normalization interpolation needs --other CKPT")
        other = Checkpoint.load(args.other)
        d1 = Direction.between(theta, (other.params if args.raw else other.ema_params).values)
        d2 = Direction.random(anchor, rng, Normalization.LAYERWISE)
    else:
        mode = Normalization(args.normalization)
        d1 = Direction.random(anchor, rng, mode)
        d2 = Direction.random(anchor, rng, mode)
    grid = np.linspace(-args.span, args.span, args.points)
    losses = surface_2d(oracle, theta, d1, d2, grid, batch, _filter(args, oracle), workers=args.workers)
    header = {"normalization": args.normalization, "checkpoint": str(args.checkpoint),
              "direction_seed": args.direction_seed,
              "timestep_filter": args.t_filter}
    path = write_grid(_out(args) / "surface_2d.csv", grid, losses, header)
    print(f"loss range {float(losses.min()):.6g}..{float(losses.max()):.6g}; wrote {path}")
    return 0


def cmd_hessian(args: argparse.Namespace) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    oracle, theta, batch = _probe_setup(ckpt, args)
    spectrum = lanczos_spectrum(oracle, theta, args.iterations, args.probe_seed, batch, _filter(args, oracle),
                                n_probes=args.probes)
    path = write_spectrum(_out(args) / "spectrum.json", spectrum,
                          {"checkpoint": str(args.checkpoint), "timestep_filter": args.t_filter})
    print(f"lambda1={spectrum.lambda1:.6g} mu={spectrum.mean_mu:.6g} sigma2={spectrum.var_sigma2:.6g}; wrote {path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    baseline = _config(args, args.baseline)
    optimized = _config(args, args.optimized)
    report = compare(baseline, optimized, args.seeds, workers=args.workers)
    path = write_json(_out(args) / "speedup.json", report.to_dict())
    note = " (low confidence)" if report.low_confidence else ""
    print(f"median iterations ratio {report.ratio:.3f}{note}; wrote {path}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    written = emit_plots(args.inputs, _out(args))
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML or JSON experiment config")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config field (repeatable)")
    common.add_argument("--out", type=Path, help="Output directory (default: runs/<command>)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--log-format", default="text", choices=["text", "json"])
    common.add_argument("--no-progress", action="store_true", help="Disable progress bars")

    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--raw", action="store_true", help="Use raw weights instead of EMA weights")
    probe.add_argument("--t-filter", help="Timestep or inclusive range LO:HI")
    probe.add_argument("--batch-size", type=int, default=LANDSCAPE_BATCH)
    probe.add_argument("--batch-seed", type=int, default=None)
    probe.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(prog="diffaccel", description="Desk-scale diffusion training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="Train one denoiser")
    p.add_argument("--resume", type=Path, help="Checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="Draw samples from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="Use raw weights instead of EMA weights")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("consistency", parents=[common], help="Shared-noise consistency of N models")
    p.add_argument("--n-models", type=int, default=3)
    p.add_argument("--m", type=int, default=32)
    p.add_argument("--all-pairs", action="store_true")
    p.add_argument("--weights", choices=["raw", "ema"], default="raw")
    p.set_defaults(func=cmd_consistency)

    p = sub.add_parser("landscape-1d", parents=[common, probe], help="Loss along the line between two checkpoints")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--points", type=int, default=51)
    p.set_defaults(func=cmd_landscape_1d)

    p = sub.add_parser("landscape-2d", parents=[common, probe], help="Loss surface around a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--other", type=Path, help="Second anchor for interpolation directions")
    p.add_argument("--points", type=int, default=21)
    p.add_argument("--span", type=float, default=1.0)
    p.add_argument("--normalization", choices=["none", "layerwise", "interpolation"], default="layerwise")
    p.add_argument("--direction-seed", type=int, default=0)
    p.set_defaults(func=cmd_landscape_2d)

    p = sub.add_parser("hessian", parents=[common, probe], help="Lanczos Hessian spectrum at a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--probe-seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=1)
    p.set_defaults(func=cmd_hessian)

    p = sub.add_parser("compare", parents=[common], help="Baseline vs accelerated speedup over seeds")
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--optimized", type=Path, required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", parents=[common], help="Render result files as SVG")
    p.add_argument("inputs", type=Path, nargs="+")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    """Run one diffaccel subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_format)
    try:
        return args.func(args)
    except DiffAccelError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_IO
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
