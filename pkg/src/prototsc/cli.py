"""Command line interface. Every failure is reported as one line on stderr,
``error: <category>: <message>``, with exit code 2 for usage and configuration
errors and 1 for everything else.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import typing as t

from .attribution import inspect_model
from .attribution import write_embeddings_csv
from .benchmark import run_benchmark
from .config import FORMAT_VERSION
from .config import load_config
from .config import RunConfig
from .config import write_json
from .data import load_ts
from .data import make_synthetic_split
from .data import read_csv
from .data import save_ts
from .data import SyntheticSpec
from .data import TimeSeriesDataset
from .errors import DataError
from .errors import PrototscError
from .errors import UsageError
from .model import load_checkpoint
from .model import PrototypeClassifier
from .model import save_checkpoint
from .testing import run_selftest
from .train import evaluate
from .train import train
from .validators import ValidationError

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> t.NoReturn:
        raise UsageError(message)


def _load_dataset(
    path: str,
    args: argparse.Namespace,
    length: int | None = None,
    class_names: list[str] | None = None,
) -> TimeSeriesDataset:
    """Read ``.csv`` or ``.ts`` input. ``.ts`` files are resampled to ``length``
    if given. With ``class_names``, CSV labels are indexed by them and ``.ts``
    files must declare exactly them.
    """
    if path.lower().endswith(".csv"):
        if args.variables is None or args.length is None:
            raise UsageError("CSV input needs --variables and --length")

        return read_csv(path, args.variables, args.length, class_names)

    dataset = load_ts(path, length=length)

    if class_names is not None and dataset.class_names != class_names:
        raise DataError(
            f"{path} declares classes {dataset.class_names}, expected {class_names}"
        )

    return dataset


def _load_for_model(path: str, args: argparse.Namespace, model: PrototypeClassifier) -> TimeSeriesDataset:
    dataset = _load_dataset(path, args, model.length, model.class_names)

    if (dataset.n_variables, dataset.length) != (model.n_variables, model.length):
        raise DataError(
            f"{path} has (V, L) {(dataset.n_variables, dataset.length)}, the model"
            f" expects {(model.n_variables, model.length)}"
        )

    return dataset.normalized() if model.config.normalize else dataset


def _require(value: str | None, flag: str, key: str) -> str:
    if value is None:
        raise UsageError(f"{flag} is required when the config has no '{key}'")

    return value


def cmd_train(args: argparse.Namespace) -> int:
    run = load_config(args.config, args.seed)
    train_path = _require(args.data or run.train_path, "--data", "train_path")
    test_path = args.test or run.test_path
    out_dir = _require(args.out or run.out_dir, "--out", "out_dir")
    config = run.train.variant(args.variant)
    train_set = _load_dataset(train_path, args)
    test_set = None

    if test_path is not None:
        test_set = _load_dataset(test_path, args, train_set.length, train_set.class_names)
        train_set.check_compatible(test_set)

    if config.normalize:
        train_set = train_set.normalized()
        test_set = test_set.normalized() if test_set is not None else None

    result = train(config, train_set)
    model = result.model
    os.makedirs(out_dir, exist_ok=True)
    summary = {
        "format_version": FORMAT_VERSION,
        "train_path": train_path,
        "test_path": test_path,
        "variant": args.variant,
        "seed": config.seed,
        "head": config.head,
        "pooling": config.pooling,
        "n_prototypes": model.bank.total_prototypes if model.bank is not None else 0,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "best_val_accuracy": result.best_val_accuracy,
        "train_accuracy": evaluate(model, train_set),
        "test_accuracy": evaluate(model, test_set) if test_set is not None else None,
    }
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), model, {"summary": summary})
    result.history.write_csv(os.path.join(out_dir, "history.csv"))
    write_json(os.path.join(out_dir, "summary.json"), summary)
    effective = RunConfig(
        train=config,
        train_path=train_path,
        test_path=test_path,
        data_dir=run.data_dir,
        out_dir=out_dir,
    )
    write_json(os.path.join(out_dir, "config.json"), effective.to_dict())
    logger.info("wrote %s", out_dir)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = _load_for_model(args.data, args, model)

    result = {
        "format_version": FORMAT_VERSION,
        "data": args.data,
        "n_samples": len(dataset),
        "accuracy": evaluate(model, dataset),
    }

    if args.out:
        write_json(args.out, result)
    else:
        print(f"{result['accuracy']!r}")

    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    run = load_config(args.config, args.seed)
    data_dir = _require(args.data or run.data_dir, "--data", "data_dir")
    out_dir = _require(args.out or run.out_dir, "--out", "out_dir")
    report = run_benchmark(run, data_dir, args.device_threads)
    report.write(out_dir)
    write_json(
        os.path.join(out_dir, "config.json"),
        run.replace(data_dir=data_dir, out_dir=out_dir).to_dict(),
    )
    aggregates = report.aggregates

    for method in report.methods:
        print(
            f"{method}: top1={aggregates.top1[method]}"
            f" average_accuracy={aggregates.average_accuracy[method]:.4f}"
            f" average_rank={aggregates.average_rank[method]:.3f}"
        )

    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)

    if model.bank is None:
        raise UsageError("inspect needs a checkpoint with a prototype head")

    dataset = _load_for_model(args.data, args, model)

    records, embeddings = inspect_model(model, dataset, args.top)
    os.makedirs(args.out, exist_ok=True)
    write_json(
        os.path.join(args.out, "attributions.json"),
        {
            "format_version": FORMAT_VERSION,
            "data": args.data,
            "records": [r.to_dict() for r in records],
        },
    )
    write_embeddings_csv(
        os.path.join(args.out, "embeddings.csv"), embeddings, dataset.labels, dataset.class_names
    )
    return 0


def cmd_synthetic(args: argparse.Namespace) -> int:
    try:
        frequencies = tuple(float(f) for f in args.frequencies.split(","))
    except ValueError:
        raise UsageError(f"--frequencies must be comma separated numbers, got {args.frequencies!r}") from None

    spec = SyntheticSpec(
        n_classes=len(frequencies),
        n_train=args.n_train,
        n_test=args.n_test,
        n_variables=args.variables or 1,
        length=args.length or 128,
        base_frequencies=frequencies,
        noise_std=args.noise,
        seed=args.seed if args.seed is not None else 2025,
    )
    train_set, test_set = make_synthetic_split(spec)
    os.makedirs(args.out, exist_ok=True)
    save_ts(os.path.join(args.out, f"{args.name}_TRAIN.ts"), train_set, args.name)
    save_ts(os.path.join(args.out, f"{args.name}_TEST.ts"), test_set, args.name)
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    checks = run_selftest(args.seed if args.seed is not None else 2025)

    for check in checks:
        print(f"{'ok' if check.passed else 'FAIL'} {check.name}: {check.detail}")

    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="Overrides the config file seed.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log debug messages.")
    common.add_argument("--variables", type=int, help="Channels V of CSV input.")
    common.add_argument("--length", type=int, help="Series length L of CSV input.")

    parser = _Parser(
        prog="prototsc", description="Prototype-guided time series classification."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", parents=[common], help="Train on a dataset.")
    p.add_argument("--config", help="JSON configuration file.")
    p.add_argument("--data", help="Training set, .ts or .csv.")
    p.add_argument("--test", help="Test set, reported in the summary.")
    p.add_argument("--out", help="Output directory.")
    p.add_argument("--variant", default="full", help="Named config variant to apply.")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("evaluate", parents=[common], help="Accuracy of a checkpoint.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="Write the result as JSON instead of printing it.")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("benchmark", parents=[common], help="Run variants over datasets.")
    p.add_argument("--config", help="JSON configuration file.")
    p.add_argument("--data", help="Directory of <name>_TRAIN.ts and <name>_TEST.ts pairs.")
    p.add_argument("--out", help="Output directory.")
    p.add_argument(
        "--device-threads", type=int, default=1, help="Runs to execute in parallel."
    )
    p.set_defaults(func=cmd_benchmark)

    p = commands.add_parser("inspect", parents=[common], help="Export prototype neighbors.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="The training set of the checkpoint.")
    p.add_argument("--out", required=True, help="Output directory.")
    p.add_argument("--top", type=int, default=5, help="Neighbors per prototype.")
    p.set_defaults(func=cmd_inspect)

    p = commands.add_parser("synthetic", parents=[common], help="Write a synthetic dataset.")
    p.add_argument("--out", required=True, help="Output directory.")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--frequencies", default="2,5,9", help="Cycles per window per class.")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=cmd_synthetic)

    p = commands.add_parser("selftest", parents=[common], help="Run the built-in checks.")
    p.set_defaults(func=cmd_selftest)
    return parser


def _fail(prefix: str, message: str) -> None:
    print(f"error: {prefix}: {' '.join(message.split())}", file=sys.stderr)


def main(argv: t.Sequence[str] | None = None) -> int:
    parser = build_parser()

    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _fail(e.prefix, e.message)
        return 2
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        return args.func(args)  # type: ignore[no-any-return]
    except (UsageError, ValidationError) as e:
        _fail(e.prefix, str(e))
        return 2
    except PrototscError as e:
        _fail(e.prefix, str(e))
        return 1
    except OSError as e:
        _fail("io", f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
        return 1
