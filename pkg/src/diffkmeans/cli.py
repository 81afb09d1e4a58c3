"""Command-line front end.

    diffkmeans train     --config run.cfg [--seed N] [--out DIR]
    diffkmeans eval      --config run.cfg [--checkpoint PATH]
    diffkmeans baseline  --config run.cfg [--checkpoint PATH] [--k K]
    diffkmeans gen-data  --config run.cfg
    diffkmeans gradcheck [--seed N] [--sizes N,D,K] [--instances M]

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numeric failure.
All outputs go to ``<out>/<run_id>/``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import checks, data, evalkit
from .trainer import (
    CheckpointError,
    NonFiniteLossError,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("diffkmeans")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

SYNTHETIC_KEYS = {"dim", "n_fg_classes", "per_class", "n_bg", "separation", "noise_sigma"}
CIFAR_KEYS = {"cifar_train", "cifar_test", "fg_classes", "bg_keep"}
CSV_KEYS = {"csv_path"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    dataset: str = "synthetic"
    run_id: str = "run"
    out: str = "runs"
    data_seed: int = 0
    test_fraction: float = 0.3
    # synthetic
    dim: int = 16
    n_fg_classes: int = 3
    per_class: int = 100
    n_bg: int = 300
    separation: float = 10.0
    noise_sigma: float = 0.5
    # cifar
    cifar_train: list = field(default_factory=list)
    cifar_test: list = field(default_factory=list)
    fg_classes: list = field(default_factory=lambda: [1, 5])
    bg_keep: float = 1.0
    # csv
    csv_path: str = ""

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.run_id

    def path(self, suffix: str) -> Path:
        return self.run_dir / f"{self.run_id}.{suffix}"


def _parse_list(text: str, conv):
    return [conv(t.strip()) for t in text.split(",") if t.strip()]


def _class_id(text: str) -> int:
    if text.isdigit():
        return int(text)
    try:
        return data.CIFAR_CLASSES.index(text.lower())
    except ValueError:
        raise ValueError(f"unknown CIFAR-10 class {text!r}") from None


def _coerce(name: str, raw: str, default):
    if name == "hidden_dims":
        return tuple(_parse_list(raw, int))
    if name in ("cifar_train", "cifar_test"):
        return _parse_list(raw, str)
    if name == "fg_classes":
        return _parse_list(raw, _class_id)
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a RunConfig."""
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    run_fields = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "train"}
    train_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in train_fields:
            target, f = train_kw, train_fields[key]
            default = f.default if f.default is not dataclasses.MISSING else None
        elif key in run_fields:
            target, f = run_kw, run_fields[key]
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        else:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        if key in target:
            raise ConfigError(f"field {key!r}: given twice")
        try:
            target[key] = _coerce(key, raw, default)
        except ValueError as exc:
            raise ConfigError(f"field {key!r}: {exc}") from None

    source = run_kw.get("dataset", "synthetic")
    own = {"synthetic": SYNTHETIC_KEYS, "cifar": CIFAR_KEYS, "csv": CSV_KEYS}
    if source not in own:
        raise ConfigError(f"field 'dataset': must be synthetic, cifar or csv, got {source!r}")
    for other, keys in own.items():
        stray = sorted(keys & run_kw.keys())
        if other != source and stray:
            raise ConfigError(f"field {stray[0]!r}: belongs to dataset={other}, but dataset={source}")
    if source == "cifar" and not run_kw.get("cifar_train"):
        raise ConfigError("field 'cifar_train': required when dataset=cifar")
    if source == "csv" and not run_kw.get("csv_path"):
        raise ConfigError("field 'csv_path': required when dataset=csv")
    try:
        cfg = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(f"training fields: {exc}") from None
    rc = RunConfig(train=cfg, **run_kw)
    if not 0 < rc.test_fraction < 1:
        raise ConfigError("field 'test_fraction': must lie in (0, 1)")
    if not rc.run_id or os.sep in rc.run_id:
        raise ConfigError("field 'run_id': must be a nonempty plain name")
    return rc


def load_config(path, seed: int | None = None, out: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    rc = parse_config(text)
    if seed is not None:
        rc.train = dataclasses.replace(rc.train, seed=seed)
    if out is not None:
        rc.out = out
    return rc


def raw_dataset(rc: RunConfig) -> tuple[data.Dataset, data.Dataset]:
    """Unstandardised (train, test) splits for the configured source."""
    if rc.dataset == "synthetic":
        try:
            ds = data.gen_blobs(rc.dim, rc.n_fg_classes, rc.n_bg, rc.per_class,
                                rc.separation, rc.noise_sigma, rc.data_seed)
        except ValueError as exc:
            raise ConfigError(f"synthetic dataset: {exc}") from None
        return data.split(ds, 1 - rc.test_fraction, rc.data_seed)
    if rc.dataset == "csv":
        try:
            ds = data.read_csv(rc.csv_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"field 'csv_path': {exc}") from None
        return data.split(ds, 1 - rc.test_fraction, rc.data_seed)
    try:
        train_ds = data.relabel_foreground(data.read_cifar10_binary(rc.cifar_train), rc.fg_classes)
        train_ds = data.downsample_background(train_ds, rc.bg_keep, rc.data_seed)
        if rc.cifar_test:
            test_ds = data.relabel_foreground(data.read_cifar10_binary(rc.cifar_test), rc.fg_classes)
            return train_ds, test_ds
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cifar dataset: {exc}") from None
    return data.split(train_ds, 1 - rc.test_fraction, rc.data_seed)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_run(rc: RunConfig, checkpoint: str | None):
    ckpt = Path(checkpoint) if checkpoint else rc.path("ckpt")
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint {ckpt} not found")
    try:
        net, head, extra = load_checkpoint(ckpt)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from None
    train_ds, test_ds = raw_dataset(rc)
    if "norm.mean" in extra:
        std = data.Standardizer(extra["norm.mean"].reshape(-1), extra["norm.std"].reshape(-1))
    else:
        std = data.Standardizer.fit(train_ds.features)
    if std.mean.shape[0] != test_ds.dim or net.input_dim != test_ds.dim:
        raise ConfigError(f"checkpoint expects {net.input_dim}-dim input, dataset has {test_ds.dim}")
    return net, head, std(test_ds)


def cmd_train(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    train_ds, test_ds = raw_dataset(rc)
    std = data.Standardizer.fit(train_ds.features)
    train_ds, test_ds = std(train_ds), std(test_ds)
    try:
        net, head, history = train(train_ds.to_batch(), rc.train)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for w in history.warnings:
        print(f"warning: {w}", file=sys.stderr)
    rc.run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(rc.path("ckpt"), net, head, {"norm.mean": std.mean, "norm.std": std.std})
    _write(rc.path("history.csv"), history.to_csv())
    result = evalkit.evaluate_model(net, head, test_ds)
    if result.report is not None:
        _write(rc.path("confusion.csv"), result.report.to_csv())
    else:
        _write(rc.path("confusion.csv"), "# no foreground test samples\n")
    print(result.summary(f"{rc.run_id}: trained head"), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    net, head, test_ds = _load_run(rc, args.checkpoint)
    result = evalkit.evaluate_model(net, head, test_ds)
    csv_text = result.report.to_csv() if result.report is not None else "# no foreground test samples\n"
    _write(rc.path("confusion.csv"), csv_text)
    _write(rc.path("summary.txt"), result.summary(f"{rc.run_id}: trained head"))
    print(result.summary(f"{rc.run_id}: trained head"), end="")
    return EXIT_OK


def cmd_baseline(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    net, head, test_ds = _load_run(rc, args.checkpoint)
    K = args.k if args.k is not None else head.K
    n_fg = int(test_ds.fg_flags.sum())
    if K < 1 or K > n_fg:
        raise ConfigError(f"K={K} must lie in [1, {n_fg}] (foreground test samples)")
    report, res = evalkit.baseline_report(net, test_ds, K, rc.train.seed)
    trained = evalkit.evaluate_model(net, head, test_ds)
    _write(rc.path("baseline.confusion.csv"), report.to_csv())
    text = report.summary(f"{rc.run_id}: post-hoc Lloyd k-means, K={K}")
    text += f"lloyd_iterations: {len(res.objectives) - 1}\nlloyd_objective: {res.objectives[-1]!r}\n"
    if trained.report is not None:
        text += trained.report.summary(f"{rc.run_id}: trained head, K={head.K}")
    _write(rc.path("baseline.summary.txt"), text)
    print(text, end="")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    rc = load_config(args.config, args.seed, args.out)
    if rc.dataset != "synthetic":
        raise ConfigError("field 'dataset': gen-data needs dataset=synthetic")
    try:
        ds = data.gen_blobs(rc.dim, rc.n_fg_classes, rc.n_bg, rc.per_class,
                            rc.separation, rc.noise_sigma, rc.data_seed)
    except ValueError as exc:
        raise ConfigError(f"synthetic dataset: {exc}") from None
    rc.run_dir.mkdir(parents=True, exist_ok=True)
    data.write_csv(ds, rc.path("data.csv"))
    print(f"wrote {len(ds)} samples to {rc.path('data.csv')}")
    return EXIT_OK


def cmd_gradcheck(args, tol: float = 1e-4) -> int:
    sizes = None
    if args.sizes:
        try:
            sizes = tuple(_parse_list(args.sizes, int))
            assert len(sizes) == 3 and sizes[0] >= 2 and sizes[1] >= 1 and 2 <= sizes[2] <= sizes[0]
        except (ValueError, AssertionError):
            raise ConfigError("--sizes must be N,D,K with N >= 2, D >= 1 and 2 <= K <= N") from None
    res = checks.run_suite(seed=args.seed or 0, instances=args.instances, sizes=sizes,
                           corrupt=args.corrupt_gradient, force_tie=args.force_tie, log=print)
    verdict = "PASS" if res.passed(tol) else "FAIL"
    print(f"{verdict}: {res.checked} instances, {len(res.skipped)} skipped, worst parameter "
          f"{res.worst_name}{list(res.worst.worst_index)} rel. error {res.worst.max_rel_error:.3e} "
          f"(analytic {res.worst.analytic:.6e}, numeric {res.worst.numeric:.6e}), tolerance {tol:g}")
    return EXIT_OK if res.passed(tol) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffkmeans", description="Differentiable k-means with a learned embedding.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key = value run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the training seed")
        p.add_argument("--out", default=None, help="output root directory")
        return p

    common(sub.add_parser("train", help="train net and cluster head")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate a trained checkpoint"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("baseline", help="post-hoc Lloyd k-means on the frozen embedding"))
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_baseline)
    common(sub.add_parser("gen-data", help="write the synthetic dataset as CSV")).set_defaults(func=cmd_gen_data)
    p = common(sub.add_parser("gradcheck", help="finite-difference check of the full objective"), config_required=False)
    p.add_argument("--sizes", default=None, help="N,D,K (default: random per instance)")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--force-tie", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
