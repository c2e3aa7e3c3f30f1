"""Command-line interface.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
data or correctness errors. Every command that draws random numbers takes a
mandatory ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from mcdrop import rng
from mcdrop.architectures import build
from mcdrop.datasets import Blobs, DatasetSpec, MultiHotPatches, generate
from mcdrop.errors import ConfigError, McDropError
from mcdrop.harness import BENCH_HEADER, TauMode, bench_cache, evaluate, load_report, significance, sweep
from mcdrop.io import load_checkpoint, load_dataset, save_checkpoint, save_dataset, write_csv, write_json
from mcdrop.network import validate_split
from mcdrop.training import TrainConfig, train
from mcdrop.uncertainty import BehaviorMode

log = logging.getLogger("mcdrop")

TRAIN_KEYS = {"train_data", "network", "checkpoint", "loss_csv", "training"}
TRAINING_KEYS = {
    "learning_rate", "weight_decay", "batch_size", "iterations", "lr_drop",
    "dropout_rate_train", "loss", "noise_sigma", "max_translate",
}  # fmt: skip


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    if args.kind == "blobs":
        kind = Blobs(args.classes, args.dim, args.spread)
    else:
        kind = MultiHotPatches(args.classes, args.image_size, args.max_objects)
    train_set, test_set = generate(DatasetSpec(kind, args.train_count, args.test_count, args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "train.opt", *train_set)
    save_dataset(out / "test.opt", *test_set)
    print(f"wrote {out / 'train.opt'} ({len(train_set.x)} samples) and {out / 'test.opt'} ({len(test_set.x)} samples)")
    return 0


def _read_config(path: Path) -> dict:
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")
    for key in ("train_data", "network", "checkpoint"):
        if key not in cfg:
            raise ConfigError(f"{path}: missing required key {key!r}")
    training = cfg.get("training", {})
    unknown = set(training) - TRAINING_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) training.{sorted(unknown)}")
    return cfg


def cmd_train(args) -> int:
    path = Path(args.config)
    cfg = _read_config(path)
    base = path.parent
    x, y = load_dataset(base / cfg["train_data"])
    net = build(cfg["network"], x.shape[1:], y.shape[1], args.seed)
    try:
        tcfg = TrainConfig(base_seed=args.seed, **cfg.get("training", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: training: {exc}") from None
    result = train(net, x, y, tcfg)
    # the checkpoint stores float32, so round now to keep save/load exact
    trained = result.net.round_to_float32()
    save_checkpoint(base / cfg["checkpoint"], trained, args.seed)
    loss_csv = base / cfg.get("loss_csv", Path(cfg["checkpoint"]).with_suffix(".loss.csv"))
    write_csv(loss_csv, ["iteration", "loss"], [[i, repr(v)] for i, v in enumerate(result.losses)])
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {tcfg.iterations} iterations, final batch loss {final:.6f}; checkpoint {base / cfg['checkpoint']}")
    return 0


def _tau(args) -> TauMode:
    if args.tau_mode == "off":
        return TauMode()
    missing = [f for f in ("length_scale_sq", "train_size", "weight_decay") if getattr(args, f) is None]
    if missing:
        raise UsageError(f"--tau-mode {args.tau_mode} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return TauMode(args.tau_mode, args.length_scale_sq, args.train_size, args.weight_decay)


def _load_model(path) -> object:
    net, _ = load_checkpoint(path)
    validate_split(net)
    return net


def cmd_eval(args) -> int:
    net = _load_model(args.model)
    x, y = load_dataset(args.data)
    report = evaluate(net, x, y, args.mode, args.T, args.p_drop, args.alpha, args.seed, _tau(args), args.threads)
    write_json(args.report, report)
    print(json.dumps(report["aggregates"], sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    net = _load_model(args.model)
    x, y = load_dataset(args.data)
    out = Path(args.out)
    timing = Path(args.timing_out) if args.timing_out else out.with_name(out.stem + ".timing.csv")
    rows = sweep(net, x, y, args.modes, args.T, args.p_drop, args.alpha, args.seed, out, timing, _tau(args), args.threads)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_significance(args) -> int:
    a = load_report(args.report_a)
    b = load_report(args.report_b)
    verdict = significance(a, b, args.sigma_p, args.seed)
    if args.out:
        write_json(args.out, verdict)
    print(json.dumps(verdict, sort_keys=True))
    return 0


def cmd_bench_cache(args) -> int:
    net = _load_model(args.model)
    if args.data:
        x = load_dataset(args.data)[0][0]
    else:
        x = rng.stream(args.seed, rng.BENCH_INPUT).normal(size=net.input_shape)
    results = bench_cache(net, x, args.T, args.repetitions, args.p_drop, args.seed)
    rows = [[r["T"], f"{r['naive_ms']:.3f}", f"{r['fast_ms']:.3f}", f"{r['speedup']:.3f}", r["outputs_equal"]] for r in results]
    write_csv(args.out, BENCH_HEADER, rows)
    for r in rows:
        print("T={:<5} naive {:>10} ms  fast {:>10} ms  speedup {}".format(*r[:4]))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_sampling(p, many: bool) -> None:
    if many:
        p.add_argument("--T", type=_int_list, required=True, help="comma-separated pass counts")
        p.add_argument("--p-drop", type=_float_list, required=True, help="comma-separated dropout rates")
    else:
        p.add_argument("--T", type=int, default=1, help="number of dropout passes")
        p.add_argument("--p-drop", type=float, default=0.0, help="test-time dropout rate")
    p.add_argument("--alpha", type=float, default=0.01, help="confidence level parameter (default 0.01)")
    p.add_argument("--tau-mode", choices=("off", "variance", "literal"), default="off")
    p.add_argument("--length-scale-sq", type=float)
    p.add_argument("--train-size", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--threads", type=int, default=1)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcdrop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic train/test pair")
    p.add_argument("--kind", choices=("blobs", "patches"), required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--image-size", type=int, default=16)
    p.add_argument("--max-objects", type=int, default=3)
    p.add_argument("--train-count", type=int, default=500)
    p.add_argument("--test-count", type=int, default=500)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network from a JSON config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a test set under one behavior")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=[m.value for m in BehaviorMode], required=True)
    _add_sampling(p, many=False)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="evaluate a mode x T x p_drop grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--modes", type=_str_list, default=["mean", "optimistic", "pessimistic"])
    _add_sampling(p, many=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--timing-out", help="runtime CSV (default: <out stem>.timing.csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("significance", help="paired permutation test between two reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--sigma-p", type=float, default=0.001)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("bench-cache", help="time naive vs cached sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--T", type=_int_list, default=[1, 10, 100])
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--p-drop", type=float, default=0.5)
    p.add_argument("--data", help="use the first sample of this dataset as input")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_cache)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"mcdrop {args.command}: configuration error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        if not isinstance(exc, McDropError):
            print(f"mcdrop {args.command}: invalid argument: {exc}", file=sys.stderr)
            return 1
        print(f"mcdrop {args.command}: {exc}", file=sys.stderr)
        return 2
    except (McDropError, OSError, ArithmeticError) as exc:
        print(f"mcdrop {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
