"""Command-line entry point: one PocketFlow flow per subcommand.

    python main.py fit --epochs data/ --rank 2 --out model.json
    python main.py crossval --epochs data/ --k 4 --rank 2 --out cv.json
    python main.py bench-precond --synthetic --seeds 1 2 3 --rank 2 --out bench.json
"""
import argparse
import logging
import os
import sys
from datetime import datetime, timezone

from flow import FLOWS
from nodes import sibling_path
from utils import __version__
from utils.config import load_config, resolve_optim_config, setup_logging
from utils.errors import ConfigurationError, DataError, NumericalError, PlsrError
from utils.evaluation import parse_bench_variants
from utils.io import read_json
from utils.plsr import Variant

logger = logging.getLogger(__name__)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
VARIANT_CHOICES = ["bigr", "bigr-noprecond", "simpls"]


def _add_optim_flags(parser):
    parser.add_argument("--seed", type=int, default=None, help="initialization / fold seed (default 0)")
    parser.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    parser.add_argument("--tol", type=float, default=None, dest="grad_tol", help="Riemannian gradient-norm tolerance")
    parser.add_argument("--restart-period", type=int, default=None, dest="restart_period")


def _add_preprocess_flags(parser):
    parser.add_argument("--bandpass", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    parser.add_argument("--downsample", type=float, metavar="FS", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="plsr-bigr", description="PLSR on the bi-Grassmann manifold")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="YAML file with optim: / preprocess: sections")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("--verbose", action="store_true")
    noise.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model on CSV matrices or an epoch directory")
    fit.add_argument("--x", dest="x_path")
    fit.add_argument("--y", dest="y_path")
    fit.add_argument("--epochs", dest="epochs_dir")
    fit.add_argument("--rank", type=int, required=True)
    fit.add_argument("--variant", choices=VARIANT_CHOICES, default="bigr")
    fit.add_argument("--no-center", action="store_true")
    fit.add_argument("--warm-start", action="store_true", help="start from the truncated SVD")
    fit.add_argument("--no-timing", action="store_true")
    fit.add_argument("--out", required=True)
    _add_optim_flags(fit)
    _add_preprocess_flags(fit)

    predict = sub.add_parser("predict", help="score new rows with a fitted model")
    predict.add_argument("--model", dest="model_path", required=True)
    predict.add_argument("--x", dest="x_path", required=True)
    predict.add_argument("--labels", dest="labels_path")
    predict.add_argument("--metrics", dest="metrics_path")
    predict.add_argument("--out", required=True)

    crossval = sub.add_parser("crossval", help="k-fold classification accuracy on an epoch directory")
    crossval.add_argument("--epochs", dest="epochs_dir", required=True)
    crossval.add_argument("--k", type=int, default=4)
    crossval.add_argument("--rank", type=int, required=True)
    crossval.add_argument("--variant", choices=VARIANT_CHOICES, default="bigr")
    crossval.add_argument("--no-center", action="store_true")
    crossval.add_argument("--no-timing", action="store_true")
    crossval.add_argument("--out", required=True)
    _add_optim_flags(crossval)
    _add_preprocess_flags(crossval)

    bench = sub.add_parser("bench-precond", help="per-seed comparison; preconditioned vs non-preconditioned by default")
    source = bench.add_mutually_exclusive_group(required=True)
    source.add_argument("--epochs", dest="epochs_dir")
    source.add_argument("--synthetic", action="store_true")
    bench.add_argument("--seeds", type=int, nargs="*", default=None)
    bench.add_argument("--variants", nargs="+", choices=VARIANT_CHOICES, default=None, help="default: bigr bigr-noprecond")
    bench.add_argument("--rank", type=int, required=True)
    bench.add_argument("--k", type=int, default=4)
    bench.add_argument("--trials", type=int, default=120)
    bench.add_argument("--channels", type=int, default=8)
    bench.add_argument("--samples", type=int, default=200)
    bench.add_argument("--classes", type=int, default=2)
    bench.add_argument("--snr", type=float, default=1.0)
    bench.add_argument("--no-timing", action="store_true")
    bench.add_argument("--out", required=True)
    for flag, dest, kind in (("--max-iters", "max_iters", int), ("--tol", "grad_tol", float), ("--restart-period", "restart_period", int)):
        bench.add_argument(flag, type=kind, default=None, dest=dest)
    _add_preprocess_flags(bench)

    synth = sub.add_parser("synth", help="write a synthetic epoch directory")
    synth.add_argument("--trials", type=int, default=120)
    synth.add_argument("--channels", type=int, default=8)
    synth.add_argument("--samples", type=int, default=200)
    synth.add_argument("--classes", type=int, default=2)
    synth.add_argument("--snr", type=float, default=1.0)
    synth.add_argument("--fs", type=float, default=200.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)

    rerun = sub.add_parser("rerun", help="re-execute a command from its run manifest")
    rerun.add_argument("--manifest", required=True)
    return parser


def build_shared(args, argv):
    """Materialize the shared store for ``args.command``; CLI values win over the config file."""
    run_config = load_config(args.config)
    sibling_path(args.out, ".manifest.json")  # rejects "." and ".." before anything is written
    shared = {
        "command": args.command,
        "argv": list(argv),
        "out": args.out,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "include_timing": not getattr(args, "no_timing", False),
        "outputs": [],
    }

    if args.command in ("fit", "crossval", "bench-precond"):
        overrides = {key: getattr(args, key, None) for key in ("seed", "max_iters", "grad_tol", "restart_period")}
        optim = resolve_optim_config(run_config, overrides)
        if args.rank < 1:
            raise ConfigurationError(f"--rank must be >= 1, got {args.rank}")
        band = tuple(args.bandpass) if args.bandpass else run_config.band
        target_fs = args.downsample if args.downsample is not None else run_config.target_fs
        shared.update(
            optim_config=optim,
            rank=args.rank,
            seed=optim.seed,
            band=band,
            target_fs=target_fs,
            resolved_config={
                "optim": optim.to_dict(),
                "preprocess": {"band": list(band) if band else None, "target_fs": target_fs},
            },
        )

    if args.command == "fit":
        shared.update(
            x_path=args.x_path,
            y_path=args.y_path,
            epochs_dir=args.epochs_dir,
            variant=Variant.parse(args.variant),
            center=not args.no_center,
            warm_start=args.warm_start,
            inputs=[p for p in (args.x_path, args.y_path, args.epochs_dir) if p],
        )
        shared["resolved_config"].update(variant=args.variant, center=not args.no_center, warm_start=args.warm_start)
    elif args.command == "predict":
        shared.update(
            model_path=args.model_path,
            x_path=args.x_path,
            labels_path=args.labels_path,
            metrics_path=args.metrics_path,
            inputs=[p for p in (args.model_path, args.x_path, args.labels_path) if p],
        )
    elif args.command == "crossval":
        shared.update(
            epochs_dir=args.epochs_dir,
            k=args.k,
            variant=Variant.parse(args.variant),
            center=not args.no_center,
            inputs=[args.epochs_dir],
        )
        shared["resolved_config"].update(variant=args.variant, k=args.k, center=not args.no_center)
    elif args.command == "bench-precond":
        synth_params = {key: getattr(args, key) for key in ("trials", "channels", "samples", "classes", "snr")}
        variants = parse_bench_variants(args.variants)
        shared.update(
            epochs_dir=args.epochs_dir,
            synthetic=args.synthetic,
            seeds=args.seeds,
            k=args.k,
            bench_variants=variants,
            synth_params=synth_params,
            inputs=[args.epochs_dir] if args.epochs_dir else [],
        )
        shared["seed"] = list(args.seeds or [])
        shared["resolved_config"].update(
            k=args.k, seeds=list(args.seeds or []), synthetic=args.synthetic, variants=[v.cli_name for v in variants]
        )
        if args.synthetic:
            shared["resolved_config"]["synthetic"] = synth_params
    elif args.command == "synth":
        synth_params = {key: getattr(args, key) for key in ("trials", "channels", "samples", "classes", "snr", "fs")}
        shared.update(synth_params=synth_params, seed=args.seed, inputs=[], resolved_config={"synth": synth_params})
    return shared


def rerun(manifest_path):
    """Replay a manifest's argument vector from the directory it was recorded in."""
    manifest = read_json(manifest_path)
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv:
        raise DataError(f"{manifest_path}: manifest has no argv")
    cwd = manifest.get("cwd") or os.getcwd()
    previous = os.getcwd()
    logger.info("rerun: %s (in %s)", " ".join(argv), cwd)
    os.chdir(cwd)
    try:
        return main(argv)
    finally:
        os.chdir(previous)


def run(args, argv):
    if args.command == "rerun":
        return rerun(args.manifest)
    shared = build_shared(args, argv)
    shared["cwd"] = os.getcwd()
    logger.info("%s: starting", args.command)
    FLOWS[args.command]().run(shared)
    return 0


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    setup_logging(args.verbose, args.quiet)

    try:
        return run(args, argv)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PlsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
