"""Command-line entry point: ``tubalnet {complete,gradcheck,synth,eval}``.

Exit codes: 0 ok, 1 check failed, 2 input error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from tubalnet.backprop import finite_difference_check
from tubalnet.dataio import TensorFormatError, read_mask, read_tensor, write_mask, write_tensor
from tubalnet.network import ConfigurationError, EmptyObservationError, init_params
from tubalnet.tensor import ShapeError
from tubalnet.training import (
    DivergenceError,
    TrainConfig,
    make_synthetic_low_rank,
    mean_fill,
    random_missing_mask,
    rmse,
    train_completion,
)
from tubalnet.transform import parse_transform

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("tubalnet")

_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}


class InputError(Exception):
    pass


def _dims(text):
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 30,30,10, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError("dims needs three positive integers")
    return dims


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=_DEFAULTS["epochs"], help="maximum full-batch epochs")
    g.add_argument("--lr", type=float, default=_DEFAULTS["learning_rate"], help="learning rate")
    g.add_argument("--weight-decay", type=float, default=_DEFAULTS["weight_decay"], help="L2 penalty")
    g.add_argument("--depth", type=int, default=_DEFAULTS["depth"], help="layers per branch")
    g.add_argument("--latent-dim", type=int, default=_DEFAULTS["latent_dim"], help="latent size m")
    g.add_argument("--activation", choices=["sigmoid", "relu", "tanh"], default=_DEFAULTS["activation"], help="nonlinearity")
    g.add_argument("--optimizer", choices=["adam", "sgd"], default=_DEFAULTS["optimizer"], help="update rule")
    g.add_argument("--pooling", choices=["stacked", "tube-wise"], default=_DEFAULTS["pooling"], help="output pooling")
    g.add_argument("--transform", default=_DEFAULTS["transform"], help="dct | identity | rand-orth:<seed>")
    g.add_argument("--patience", type=int, default=_DEFAULTS["patience"], help="early-stopping patience")
    g.add_argument("--validation-fraction", type=float, default=_DEFAULTS["validation_fraction"],
                   help="share of observed entries held out for early stopping")
    g.add_argument("--batch-columns", type=int, default=_DEFAULTS["batch_columns"],
                   help="columns per mini-batch (full batch when unset)")
    g.add_argument("--no-normalize", action="store_true", help="train on raw values")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        depth=args.depth,
        latent_dim=args.latent_dim,
        activation=args.activation,
        optimizer=args.optimizer,
        pooling=args.pooling,
        transform=args.transform,
        seed=args.seed,
        normalize=not args.no_normalize,
        patience=args.patience,
        validation_fraction=args.validation_fraction,
        batch_columns=args.batch_columns,
    )


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, argv, config, seed, inputs, outputs, seconds):
    manifest = {
        "command": ["tubalnet", *argv],
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seconds": round(seconds, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _report_csv(report) -> str:
    """Per-epoch curve plus a closing ``final`` row carrying the test RMSE."""
    vals = [v for v in report.val_rmse if v is not None]
    final = ["final", repr(report.train_loss[-1]), repr(min(vals)) if vals else "",
             "" if report.test_rmse is None else repr(report.test_rmse)]
    lines = report.to_csv().splitlines()
    lines[0] += ",test_rmse"
    lines = [lines[0]] + [line + "," for line in lines[1:]] + [",".join(final)]
    return "\n".join(lines) + "\n"


def _write_series(path, truth, estimate, mask, row):
    """Horizontal slice ``row`` flattened day by day, for plotting."""
    n1, n2, n3 = estimate.shape
    if not 0 <= row < n1:
        raise InputError(f"--series row {row} out of range [0, {n1})")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "truth", "estimate", "observed"])
        for k in range(n3):
            for j in range(n2):
                tv = "" if truth is None or not np.isfinite(truth[row, j, k]) else repr(float(truth[row, j, k]))
                w.writerow([k * n2 + j, tv, repr(float(estimate[row, j, k])), int(mask[row, j, k])])


def _fit_and_write(args, argv, data, mask, truth, out: Path, inputs, extra_outputs=()):
    start = time.perf_counter()
    cfg = _train_config(args)
    _, completed, report = train_completion(data, mask, cfg, truth=truth)
    outputs = [out / "completed.t3b", out / "report.csv", out / "report.json", *extra_outputs]
    write_tensor(completed, out / "completed.t3b")
    (out / "report.csv").write_text(_report_csv(report))
    meta = report.metadata()
    meta["transform"] = parse_transform(cfg.transform, data.shape[2]).name
    meta["pre_missing"] = int(np.count_nonzero(~np.isfinite(data)))
    (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if args.series is not None:
        _write_series(out / "series.csv", truth, completed, mask, args.series)
        outputs.append(out / "series.csv")
    _write_manifest(out, argv, asdict(cfg), args.seed, inputs, outputs, time.perf_counter() - start)
    return completed, report


def cmd_complete(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = read_tensor(args.input)
    inputs = [args.input]
    truth = None
    finite = np.isfinite(data)
    if args.mask is not None:
        mask = read_mask(args.mask)
        inputs.append(args.mask)
        if mask.shape != data.shape:
            raise InputError(f"mask shape {mask.shape} != tensor shape {data.shape}")
        if args.truth is not None:
            truth = read_tensor(args.truth)
            inputs.append(args.truth)
            if truth.shape != data.shape:
                raise InputError(f"truth shape {truth.shape} != tensor shape {data.shape}")
    else:
        if args.missing_rate is None:
            raise InputError("give either --mask or --missing-rate")
        mask = random_missing_mask(data.shape, args.missing_rate, seed=args.seed)
        truth = np.where(finite, data, np.nan)
        write_mask(mask & finite, out / "mask.t3m")
    mask = mask & finite
    _, report = _fit_and_write(args, argv, data, mask, truth, out, inputs)
    if report.test_rmse is not None:
        print(f"test RMSE: {report.test_rmse!r}")
    print(f"train RMSE: {report.train_rmse!r}")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = make_synthetic_low_rank(args.dims, args.rank, seed=args.seed, m=parse_transform(args.transform, args.dims[2]))
    mask = random_missing_mask(truth.shape, args.missing_rate, seed=args.seed)
    write_tensor(truth, out / "truth.t3b")
    write_mask(mask, out / "mask.t3m")
    _, report = _fit_and_write(
        args, argv, np.where(mask, truth, np.nan), mask, truth, out, [],
        extra_outputs=[out / "truth.t3b", out / "mask.t3m", out / "summary.csv"],
    )
    baseline = rmse(truth, mean_fill(truth, mask), ~mask) if (~mask).any() else None
    row = {
        "dims": "x".join(map(str, args.dims)),
        "rank": args.rank,
        "missing_rate": args.missing_rate,
        "seed": args.seed,
        "train_rmse": repr(report.train_rmse),
        "test_rmse": "" if report.test_rmse is None else repr(report.test_rmse),
        "meanfill_rmse": "" if baseline is None else repr(baseline),
        "ratio": "" if baseline is None else repr(report.test_rmse / baseline),
    }
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    print(f"train RMSE: {report.train_rmse!r}")
    if report.test_rmse is None:
        print("test set empty (missing rate 0)")
    else:
        print(f"test RMSE: {report.test_rmse!r}")
        print(f"mean-fill RMSE: {baseline!r}  ratio: {report.test_rmse / baseline:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    if max(args.dims) > 8:
        raise InputError("gradcheck dims must each be <= 8")
    if not 1e-8 <= args.epsilon <= 1e-3:
        print(
            f"warning: epsilon {args.epsilon:g} is outside [1e-8, 1e-3]; "
            "the comparison will be dominated by truncation or round-off error",
            file=sys.stderr,
        )
    rng = np.random.default_rng(args.seed)
    tm = parse_transform(args.transform, args.dims[2])
    params = init_params(args.dims, tm, args.depth, args.latent_dim, args.activation, args.pooling, seed=args.seed)
    # nonzero biases keep ReLU pre-activations off the kink at 0
    for b in params.b_u + params.b_v:
        b[...] = 0.1 * rng.standard_normal(b.shape)
    r = rng.random(args.dims)
    mask = random_missing_mask(args.dims, args.missing_rate, seed=args.seed)
    report = finite_difference_check(
        params, r, mask, args.epsilon, args.pooling, corrupt=args.corrupt, check_epsilon=False
    )
    text = report.to_csv()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.csv").write_text(text)
    if not report.passed:
        print(f"FAILED blocks: {', '.join(report.failed_blocks())}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    truth = read_tensor(args.truth)
    estimate = read_tensor(args.estimate)
    mask = read_mask(args.mask)
    if truth.shape != estimate.shape or truth.shape != mask.shape:
        raise InputError(f"shape mismatch: truth {truth.shape}, estimate {estimate.shape}, mask {mask.shape}")
    held_out = ~mask & np.isfinite(truth)
    print(f"{rmse(np.where(held_out, truth, 0.0), estimate, held_out):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tubalnet", description="Deep tensor factorization for tensor completion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("complete", help="fill in the missing entries of a tensor", formatter_class=fmt)
    p.add_argument("--input", required=True, help="T3B1 tensor")
    p.add_argument("--mask", help="T3M1 mask of observed entries")
    p.add_argument("--truth", help="T3B1 ground truth for scoring (with --mask)")
    p.add_argument("--missing-rate", type=float, help="hide this fraction of --input at random")
    p.add_argument("--seed", type=int, default=_DEFAULTS["seed"])
    p.add_argument("--series", type=int, help="also write series.csv for this horizontal slice")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("synth", help="complete a synthetic low-tubal-rank tensor", formatter_class=fmt)
    p.add_argument("--dims", type=_dims, default=(30, 30, 10), help="n1,n2,n3")
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--missing-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--series", type=int)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="compare back-propagation with finite differences", formatter_class=fmt)
    p.add_argument("--dims", type=_dims, default=(4, 5, 3))
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--latent-dim", type=int, default=4)
    p.add_argument("--activation", choices=["sigmoid", "relu", "tanh", "linear"], default=_DEFAULTS["activation"])
    p.add_argument("--pooling", choices=["stacked", "tube-wise"], default=_DEFAULTS["pooling"])
    p.add_argument("--transform", default=_DEFAULTS["transform"])
    p.add_argument("--missing-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--corrupt", metavar="BLOCK", help=argparse.SUPPRESS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="RMSE of an estimate on the unobserved entries", formatter_class=fmt)
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--mask", required=True, help="observed entries; scoring uses the complement")
    p.set_defaults(func=cmd_eval)
    return parser


def _thread_limit():
    threads = int(os.environ.get("TUBALNET_THREADS", "0") or 0)
    if threads <= 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args, argv)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (TensorFormatError, InputError, ShapeError, ConfigurationError,
            EmptyObservationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
