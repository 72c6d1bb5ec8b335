"""Command-line interface.

Exit codes: 0 ok, 2 usage/config error, 3 data/ledger error, 4 evaluator
protocol failure (no trial succeeded).
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    VARIANTS,
    DataError,
    PreprocessSpec,
    epoch_records,
    generate_synthetic,
    load_manifest,
    read_image,
    read_mask,
    synthesize,
    write_image,
    write_mask,
)
from .evaluation import ExternalEvaluator, ProxyEvaluator
from .plotting import plot_marginals, plot_trace, write_marginals_csv
from .raster import (
    IGNORE_INDEX,
    RAND_NAMES,
    ContractError,
    apply_op,
    get_op,
    magnitude_to_param,
)
from .search import (
    LedgerError,
    SearchError,
    SearchSpace,
    TPESampler,
    format_report,
    read_ledger,
    run_search,
    summarize_ledger,
)
from .strategy import ConfigError, EpochClock, StrategyConfig

log = logging.getLogger("smartaug")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EVALUATOR = 0, 2, 3, 4

EXTERNAL_CONTRACT = """\
external evaluator contract:
  input file  = JSON {"config": <StrategyConfig>, "seed": <int>, "out": "<path>"}
  invocation  = <command> <input-path>
  output file at "out" = JSON {"miou": <real>}
  exit 0 on success; nonzero exit, malformed output or timeout fails the trial
"""


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    return w, h


def _load_strategy(text: str) -> StrategyConfig:
    path = Path(text)
    try:
        if path.exists():
            return StrategyConfig.load(path)
        return StrategyConfig.from_json(text)
    except (ConfigError, ContractError, KeyError, TypeError) as exc:
        raise CliError(f"invalid strategy: {exc}", EXIT_USAGE) from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_augment(args) -> int:
    strategy = _load_strategy(args.strategy)
    if args.epochs < 1:
        raise CliError("--epochs must be >= 1", EXIT_USAGE)
    spec = PreprocessSpec(args.target, args.crop_probability) if args.target else None
    try:
        manifest = load_manifest(args.data)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError(f"output directory {out} is not empty", EXIT_USAGE)
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    try:
        with open(out / "plans.jsonl", "w", encoding="utf-8") as plans:
            for epoch in range(args.epochs):
                clock = EpochClock(epoch, args.epochs)
                edir = out / f"epoch_{epoch}"
                (edir / "images").mkdir(parents=True)
                (edir / "masks").mkdir(parents=True)
                for rec in epoch_records(manifest, args.split, strategy, clock, args.seed, spec):
                    write_image(edir / "images" / rec.name, rec.image)
                    write_mask(edir / "masks" / rec.name, rec.mask)
                    plans.write(json.dumps({
                        "epoch": epoch, "index": rec.index, "name": rec.name,
                        "split": args.split, "preprocess": rec.preprocess,
                        "plan": rec.plan.to_dict(),
                    }, sort_keys=True) + "\n")
                log.info("epoch %d written to %s", epoch, edir)
    except BaseException as exc:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        else:
            for child in out.iterdir():
                shutil.rmtree(child) if child.is_dir() else child.unlink()
        if isinstance(exc, (DataError, OSError)):
            raise CliError(str(exc), EXIT_DATA) from None
        if isinstance(exc, (ConfigError, ContractError)):
            raise CliError(str(exc), EXIT_USAGE) from None
        raise
    print(f"wrote {args.epochs} epoch(s) to {out}")
    return EXIT_OK


def _make_evaluator(args):
    if args.evaluator == "proxy":
        if args.data:
            try:
                ds = load_manifest(args.data).load()
            except DataError as exc:
                raise CliError(str(exc), EXIT_DATA) from None
        else:
            ds = synthesize(seed=args.seed, variant=args.proxy_variant)
        return ProxyEvaluator(ds, epochs=args.proxy_epochs)
    if args.evaluator.startswith("external:"):
        command = args.evaluator[len("external:"):].strip()
        if not command:
            raise CliError("external evaluator needs a command: external:<cmd>", EXIT_USAGE)
        return ExternalEvaluator(command, args.timeout)
    raise CliError(f"unknown evaluator {args.evaluator!r}; use proxy or external:<cmd>", EXIT_USAGE)


def cmd_search(args) -> int:
    if args.method == "grid" and args.space != "rand":
        raise CliError("grid search requires --space rand", EXIT_USAGE)
    if args.budget < 1:
        raise CliError("--budget must be >= 1", EXIT_USAGE)
    if args.space == "smart":
        space = SearchSpace.smart()
    else:
        n_max = args.n_max if args.n_max is not None else (3 if args.method == "grid" else None)
        try:
            space = SearchSpace.rand(n_max)
        except SearchError as exc:
            raise CliError(str(exc), EXIT_USAGE) from None
    evaluator = _make_evaluator(args)
    try:
        path = run_search(args.method, space, evaluator, args.budget, args.seed, args.ledger,
                          jobs=args.jobs, sampler=TPESampler())
        records = read_ledger(path)
    except LedgerError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    except SearchError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    failed = [r for r in records if r.status == "failed"]
    if len(failed) == len(records):
        print(f"all {len(records)} trials failed; last error:\n{failed[-1].error}", file=sys.stderr)
        return EXIT_EVALUATOR
    report = summarize_ledger(records)
    print(format_report(dict(report, marginals={})))
    if failed:
        print(f"note: {len(failed)} trial(s) failed (see ledger)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        records = read_ledger(args.ledger)
        report = summarize_ledger(records)
    except (LedgerError, SearchError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stem = out.with_suffix("")
    write_marginals_csv(report, f"{stem}_marginals.csv")
    if not args.no_figures:
        plot_marginals(report, f"{stem}_marginals.png")
        plot_trace(records, f"{stem}_trace.png")
    print(format_report(report))
    return EXIT_OK


_LABEL_COLORS = np.array([
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
], dtype=np.float64)
IGNORE_COLOR = np.array([255, 0, 255], dtype=np.uint8)


def _rgb(image: np.ndarray) -> np.ndarray:
    return np.repeat(image[:, :, None], 3, axis=2) if image.ndim == 2 else image


def mask_overlay(image: np.ndarray, mask: np.ndarray, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Half-blend of the image with per-label colors; ignore pixels solid magenta."""
    rgb = _rgb(image).astype(np.float64)
    colors = _LABEL_COLORS[mask.astype(np.int64) % len(_LABEL_COLORS)]
    out = np.floor(0.5 * rgb + 0.5 * colors + 0.5).astype(np.uint8)
    out[mask == ignore_index] = IGNORE_COLOR
    return out


def preview_panel(image, mask, out_image, out_mask, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """2x2 grid: top row image before/after, bottom row mask overlays."""
    top = np.concatenate([_rgb(image), _rgb(out_image)], axis=1)
    bottom = np.concatenate([mask_overlay(image, mask, ignore_index),
                             mask_overlay(out_image, out_mask, ignore_index)], axis=1)
    return np.concatenate([top, bottom], axis=0)


def cmd_preview(args) -> int:
    try:
        op = get_op(args.op)
        if op.name not in RAND_NAMES:
            raise ContractError(f"unknown op {args.op!r}; valid names: {', '.join(RAND_NAMES)}")
        param = magnitude_to_param(op, args.magnitude, args.sign)
    except ContractError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    try:
        image = read_image(args.image)
        mask = read_mask(args.mask)
        out_image, out_mask = apply_op(op, param, image, mask, args.ignore_index)
    except ContractError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    except (OSError, DataError) as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_DATA) from None
    write_image(args.out, preview_panel(image, mask, out_image, out_mask, args.ignore_index))
    print(f"{op.name} magnitude {args.magnitude} (param {param}) -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        manifest = generate_synthetic(args.out, args.n_images, args.canvas, args.k, args.seed,
                                      args.variant, args.n_shapes)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote synthetic dataset to {args.out}: {counts}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--config", help="JSON file with default values for this command's flags")
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--jobs", type=int, default=1, help="max parallel workers")

    parser = argparse.ArgumentParser(prog="smartaug", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", parents=[common], help="augment a dataset split per epoch")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--strategy", required=True, help="strategy JSON file or inline JSON")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--target", type=_size, help="crop/downsize target WIDTHxHEIGHT")
    p.add_argument("--crop-probability", type=float, default=0.5)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("search", parents=[common], help="search augmentation strategies",
                       epilog=EXTERNAL_CONTRACT, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--space", choices=("smart", "rand"), default="smart")
    p.add_argument("--method", choices=("bo", "random", "grid"), default="bo")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--evaluator", default="proxy", help="proxy | external:<cmd>")
    p.add_argument("--ledger", default="ledger.jsonl")
    p.add_argument("--n-max", type=int, help="upper bound of N for the rand space "
                   "(default 3 for grid, 13 otherwise)")
    p.add_argument("--data", help="dataset root for the proxy evaluator (default: synthetic)")
    p.add_argument("--proxy-variant", choices=VARIANTS, default="shapes")
    p.add_argument("--proxy-epochs", type=int, default=4)
    p.add_argument("--timeout", type=float, help="external evaluator timeout in seconds")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("analyze", parents=[common], help="summarize a search ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("preview", parents=[common], help="before/after view of one op")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--op", required=True, help=f"one of: {', '.join(RAND_NAMES)}")
    p.add_argument("--magnitude", type=int, required=True)
    p.add_argument("--sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--ignore-index", type=int, default=IGNORE_INDEX)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, default=40)
    p.add_argument("--canvas", type=_size, default=(32, 32))
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--variant", choices=VARIANTS, default="shapes")
    p.add_argument("--n-shapes", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


def _apply_config_file(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    try:
        defaults = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read --config {known.config}: {exc}", EXIT_USAGE) from None
    if not isinstance(defaults, dict):
        raise CliError("--config must hold a JSON object", EXIT_USAGE)
    defaults = {k.replace("-", "_"): v for k, v in defaults.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1", EXIT_USAGE)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
