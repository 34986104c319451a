"""Command line entry point.

Exit codes: 0 success, 2 unreadable input or output, 3 bad configuration or
incompatible shapes, 64 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .data import Dataset, load_mnist, xor_split
from .errors import ConfigError, FormatError, ShapeError
from .modelio import (
    compression_report, export_sparse, read_model, save_dense, save_sparse, write_bytes,
)
from .network import MODELS, Network, evaluate, init_network
from .surgery import SurgeryConfig, load_config, parse_config, run_surgery, train_reference

log = logging.getLogger("dnsurgery")

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def builtin_config(name: str) -> str:
    return resources.files("dnsurgery").joinpath("configs", f"{name}.cfg").read_text(encoding="utf-8")


def _config(args, default: str | None = None) -> SurgeryConfig:
    overrides = {"seed": args.seed} if args.seed is not None else None
    if args.config:
        return load_config(args.config, overrides)
    if default is None:
        raise UsageError("--config is required")
    return parse_config(builtin_config(default), overrides)


def _datasets(cfg: SurgeryConfig, input_dim: int, data_dir) -> tuple[Dataset, Dataset]:
    if input_dim == 2:
        return xor_split(cfg.xor_samples, cfg.xor_noise, cfg.xor_seed)
    if input_dim == 784:
        if not data_dir:
            raise UsageError("--data-dir is required for MNIST models")
        return load_mnist(data_dir, "train"), load_mnist(data_dir, "test")
    raise ShapeError(f"no dataset known for models with {input_dim} inputs")


class CsvLog:
    """Append-only CSV writer with a header row."""

    def __init__(self, path, header: str):
        self.path = Path(path)
        self.f = open(self.path, "w", encoding="utf-8")
        self.f.write(header + "\n")

    def row(self, *values):
        self.f.write(",".join(v if isinstance(v, str) else repr(v) if isinstance(v, int) else f"{v:.6g}"
                              for v in values) + "\n")

    def close(self):
        self.f.close()


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _train(cfg: SurgeryConfig, train: Dataset, test: Dataset, out: Path) -> Network:
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; choose from {sorted(MODELS)}")
    net = init_network(MODELS[cfg.model](), cfg.seed)
    csv = CsvLog(_sibling(out, ".log.csv"), "iter,loss,lr")

    def progress(net, state, acts):
        loss = float(np.mean(state.loss_history))
        csv.row(state.iter, loss, state.lr)
        if state.iter % (cfg.log_interval * 10) == 0:
            log.info("iter %d  loss %.4f  lr %.4g", state.iter, loss, state.lr)

    try:
        net = train_reference(net, train, cfg, progress)
    finally:
        csv.close()
    write_bytes(out, save_dense(net))
    err = evaluate(net, test.features, test.labels)
    log.info("reference written to %s", out)
    print(f"top1_error={err:.4f}")
    return net


def _surgery(cfg: SurgeryConfig, ref: Network, train: Dataset, test: Dataset, out: Path,
             track_splices: bool = False):
    csv = CsvLog(_sibling(out, ".log.csv"), "iter,loss,lr,kept_fraction")
    ever_pruned = [np.zeros(p.w.shape, dtype=bool) for p in ref.params]

    def progress(net, state, acts):
        kept = sum(p.kept for p in net.params) / sum(p.w.size for p in net.params)
        loss = float(np.mean(state.loss_history))
        csv.row(state.iter, loss, state.lr, kept)
        if track_splices:
            for seen, p in zip(ever_pruned, net.params):
                seen |= p.t == 0.0
        if state.iter % (cfg.log_interval * 10) == 0:
            log.info("iter %d  loss %.4f  kept %.4f", state.iter, loss, kept)

    try:
        net, report = run_surgery(ref, train, cfg, progress)
    finally:
        csv.close()
    write_bytes(out, save_dense(net))
    write_bytes(_sibling(out, ".dnss"), save_sparse(export_sparse(net)))
    _sibling(out, ".report.csv").write_text(report.to_csv(), encoding="utf-8")
    err = evaluate(net, test.features, test.labels)
    print(report.format_table())
    print(f"top1_error={err:.4f}")
    return net, report, err, ever_pruned


def cmd_train_reference(args) -> None:
    cfg = _config(args)
    if cfg.model not in MODELS:
        raise ConfigError(f"unknown model {cfg.model!r}; choose from {sorted(MODELS)}")
    train, test = _datasets(cfg, MODELS[cfg.model]()[0].input_dim, args.data_dir)
    _train(cfg, train, test, Path(args.out))


def cmd_surgery(args) -> None:
    cfg = _config(args)
    ref = read_model(args.input)
    train, test = _datasets(cfg, ref.input_dim, args.data_dir)
    _surgery(cfg, ref, train, test, Path(args.out))


def cmd_eval(args) -> None:
    net = read_model(args.input)
    cfg = _config(args, default="xor-reference")
    _, test = _datasets(cfg, net.input_dim, args.data_dir)
    if test.n_classes > net.n_classes:
        raise ShapeError(f"dataset has {test.n_classes} classes, model predicts {net.n_classes}")
    print(f"top1_error={evaluate(net, test.features, test.labels):.4f}")


def cmd_report(args) -> None:
    report = compression_report(read_model(args.input))
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(report.to_csv(), encoding="utf-8")


def cmd_xor_demo(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = {"seed": args.seed} if args.seed is not None else None
    ref_cfg = (load_config(args.ref_config, overrides) if args.ref_config
               else parse_config(builtin_config("xor-reference"), overrides))
    cfg = _config(args, default="xor-surgery")
    train, test = xor_split(ref_cfg.xor_samples, ref_cfg.xor_noise, ref_cfg.xor_seed)
    log.info("training the reference network")
    ref = _train(ref_cfg, train, test, out / "reference.dnsd")
    log.info("running surgery")
    net, report, _, ever_pruned = _surgery(cfg, ref, train, test, out / "pruned.dnsd", track_splices=True)
    # weight/mask matrices before and after surgery, one CSV per matrix
    for name, before, after, seen in zip(net.layer_names, ref.params, net.params, ever_pruned):
        np.savetxt(out / f"{name}_w_before.csv", before.w, delimiter=",", fmt="%.6f")
        np.savetxt(out / f"{name}_w_after.csv", after.w, delimiter=",", fmt="%.6f")
        np.savetxt(out / f"{name}_t_after.csv", after.t, delimiter=",", fmt="%d")
        np.savetxt(out / f"{name}_spliced.csv", (seen & (after.t == 1.0)).astype(int), delimiter=",", fmt="%d")
    pruned = report.total - report.kept
    print(f"pruned {pruned}/{report.total} parameters ({100.0 * pruned / report.total:.1f}%)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dnsurgery", description="Dynamic network surgery toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help, config=False, data=False, inp=False, out=False, seed=False):
        p = sub.add_parser(name, help=help)
        if config:
            p.add_argument("--config", required=config == "required", help="key = value config file")
        if data:
            p.add_argument("--data-dir", help="directory holding the uncompressed MNIST IDX files")
        if inp:
            p.add_argument("--in", dest="input", required=True, help="model file (DNSD or DNSS)")
        if out:
            p.add_argument("--out", required=out == "required", help="output path")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")
        p.set_defaults(func=func)
        return p

    add("train-reference", cmd_train_reference, "train a dense reference model",
        config="required", data=True, out="required", seed=True)
    add("surgery", cmd_surgery, "prune and splice a reference model",
        config="required", data=True, inp=True, out="required", seed=True)
    add("eval", cmd_eval, "print the top-1 test error of a model", config=True, data=True, inp=True, seed=True)
    add("report", cmd_report, "print per-layer compression statistics", inp=True, out=True)
    demo = add("xor-demo", cmd_xor_demo, "noisy-XOR reference training, surgery and report in one go",
               config=True, out="required", seed=True)
    demo.add_argument("--ref-config", help="config for the reference training stage")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dnsurgery: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ShapeError) as exc:
        print(f"dnsurgery: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"dnsurgery: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
