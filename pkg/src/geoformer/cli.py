"""Command-line entry point: ``geoformer {synth,train,eval,gradcheck,bench}``.

Exit codes: 0 success, 1 contract/configuration error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import GeoFormerError

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONTRACT, f"{self.prog}: error: {message}\n")


def _lengths(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid length list {text!r}") from exc
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("lengths must be positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="global RNG seed (default 42)")

    parser = _Parser(prog="geoformer", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="build a synthetic dataset directory")
    p.add_argument("--stations", type=int, default=35, help="number of stations (default 35)")
    p.add_argument("--days", type=int, default=450, help="days per station (default 450)")
    p.add_argument("--history", type=int, default=32, help="history length L (default 32)")
    p.add_argument("--out", required=True, help="output dataset directory")

    p = sub.add_parser(
        "train",
        parents=[common],
        help="train a model on the train split",
        description="Train a model. Settings resolve as flag > config file > default.",
    )
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default 600)")
    p.add_argument("--config", default=None,
                   help='JSON file {"model": {...GeoFormerConfig}, "train": {...TrainConfig}}')
    p.add_argument("--out", required=True, help="checkpoint directory (also receives loss.csv)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 16)")

    p = sub.add_parser("eval", parents=[common], help="print MAE/MSE/size JSON for a split")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=("train", "test"), default="test", help="split (default test)")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, bit-reproducible)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")

    p = sub.add_parser("bench", parents=[common], help="dense vs ProbSparse dot-product counts")
    p.add_argument("--lengths", type=_lengths, default=[256, 512, 1024, 2048, 4096],
                   help="comma-separated sequence lengths (default 256,512,1024,2048,4096)")
    p.add_argument("--variant", choices=("paper-eq3", "informer-max-mean"), default="paper-eq3",
                   help="sparsity measurement (default paper-eq3)")
    return parser


def cmd_synth(args) -> int:
    from .data import build_dataset

    build_dataset(args.out, args.stations, args.days, args.history, args.seed)
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


def resolve_train_settings(args):
    from .model import GeoFormerConfig
    from .training import TrainConfig

    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    model_cfg = GeoFormerConfig.from_dict({"init_seed": args.seed, **file_cfg.get("model", {})})
    train_cfg = TrainConfig.from_dict({"seed": args.seed, **file_cfg.get("train", {})})
    overrides = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr), ("batch_size", args.batch_size)) if v is not None}
    return model_cfg, replace(train_cfg, **overrides)


def cmd_train(args) -> int:
    from .data import load_dataset, read_manifest
    from .errors import ConfigurationError
    from .model import GeoFormer
    from .training import train

    model_cfg, train_cfg = resolve_train_settings(args)
    history = read_manifest(args.data)["config"]["history"]
    if history != model_cfg.history:
        model_cfg = replace(model_cfg, history=history)
    data = load_dataset(args.data, "train")
    if data.images.shape[1] != model_cfg.image_size:
        raise ConfigurationError(f"dataset images are {data.images.shape[1]}px, model expects {model_cfg.image_size}")
    model = GeoFormer(model_cfg, data.stats)
    train(model, data, train_cfg, out_dir=args.out)
    print(Path(args.out) / "manifest.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .training import evaluate

    with threadpool_limits(limits=max(1, args.threads)):
        report = evaluate(args.ckpt, load_dataset(args.data, args.split))
    print(report.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.seed)
    ok = True
    for r in results:
        passed = r.max_rel_error < args.tol
        ok &= passed
        print(f"{r.name:28s} max_rel_err={r.max_rel_error:.3e} coords={r.n_coords:5d} {'ok' if passed else 'FAIL'}")
    print("all checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_CONTRACT


def cmd_bench(args) -> int:
    from .bench import format_csv, run_bench

    sys.stdout.write(format_csv(run_bench(args.lengths, args.variant, args.seed)))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limit = args.threads if args.command == "eval" else 1
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args)
    except (GeoFormerError, ValueError, KeyError) as exc:
        print(f"geoformer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"geoformer {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
