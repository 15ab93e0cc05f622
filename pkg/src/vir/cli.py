"""Command-line experiment runner.

    vir train            --config FILE [--out DIR] [--seed N] [--threads N]
    vir diagnose         --config FILE [--out DIR] [--seed N] [--threads N]
    vir robustness       --config FILE --checkpoint FILE [--out DIR] ...
    vir export-matrices  --config FILE [--out DIR] ...

Exit codes: 0 success, 1 unexpected failure, 2 invalid configuration,
3 dataset missing, 4 checkpoint does not match the configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_CHECKPOINT = 4

log = logging.getLogger("vir")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class DatasetMissing(Exception):
    pass


class CheckpointMismatch(Exception):
    pass


# -- data --------------------------------------------------------------------


def _find(directory: Path, names) -> Path:
    for name in names:
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.exists():
                return candidate
    raise DatasetMissing(f"none of {list(names)} found in {directory}")


def load_dataset(ds):
    """(train, test) ImageBatches for a :class:`~vir.config.DatasetConfig`."""
    from .patches import load_cifar10_bin, load_cifar100_bin, load_mnist_idx

    d = ds.directory()
    if not d.is_dir():
        raise DatasetMissing(f"dataset directory {d} does not exist (set dataset.path or VIR_DATA_DIR)")
    if ds.name == "mnist":
        train = load_mnist_idx(_find(d, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]), _find(d, ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]))
        test = load_mnist_idx(_find(d, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]), _find(d, ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]))
    elif ds.name == "cifar10":
        train = load_cifar10_bin([_find(d, [f"data_batch_{i}.bin"]) for i in range(1, 6)])
        test = load_cifar10_bin(_find(d, ["test_batch.bin"]))
    else:
        train = load_cifar100_bin(_find(d, ["train.bin"]))
        test = load_cifar100_bin(_find(d, ["test.bin"]))
    if ds.train_limit:
        train = train.head(ds.train_limit)
    if ds.test_limit:
        test = test.head(ds.test_limit)
    return train, test


# -- commands ----------------------------------------------------------------


def _out_dir(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_report(cfg) -> dict:
    from . import __version__, kernels

    return {
        "toolkit_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
    }


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_train(cfg) -> dict:
    from .training import build_model, count_parameters, save_checkpoint, train, write_log

    t0 = time.perf_counter()
    train_set, test_set = load_dataset(cfg.dataset)
    model = build_model(cfg.model, seed=cfg.train.seed)
    records = train(model, train_set, cfg.train, test_set)
    out = _out_dir(cfg)
    write_log(records, out / "log.csv")
    save_checkpoint(model, out / "model.ckpt", extra={"config_hash": cfg.config_hash()})
    last = records[-1]
    report = _base_report(cfg)
    report.update(
        {
            "accuracy": {"train": last.train_acc, "test": last.test_acc},
            "parameters": count_parameters(model),
            "epochs": [{"epoch": r.epoch, "loss": None if r.loss != r.loss else r.loss, "train_acc": r.train_acc, "test_acc": None if r.test_acc != r.test_acc else r.test_acc} for r in records],
            "samples": {"train": len(train_set), "test": len(test_set)},
            "timing": {"wall_clock_seconds": time.perf_counter() - t0, "epoch_seconds": [r.seconds for r in records]},
        }
    )
    _write_json(out / "report.json", report)
    return report


def cmd_diagnose(cfg) -> dict:
    from .metrics import diagnostic_reservoir, small_worldness, sweep, write_sweep_csv
    from .numerics import RngStream
    from .topology import build_reservoir, undirected_adjacency

    from .errors import ConfigError

    dg = cfg.diagnostics
    if not dg.run:
        raise ConfigError("diagnostics.run is empty; nothing to do")
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    spec = cfg.model.deep.specs[0]
    report = _base_report(cfg)
    results = {}
    if "small_world" in dg.run:
        m = build_reservoir(spec)
        sw = small_worldness(undirected_adjacency(m.W), stream=RngStream(cfg.seed, "random-graph"))
        (out / "small_world.json").write_text(sw.to_json() + "\n")
        (out / "small_world.md").write_text(sw.to_markdown() + "\n")
        results["small_world"] = {r.name: r.delta for r in sw.rows}
    base = None
    if "lyapunov_sweep" in dg.run or "mc_sweep" in dg.run:
        base = diagnostic_reservoir(spec, dg.sweep_n)
    if "lyapunov_sweep" in dg.run:
        pts = sweep(base, dg.rhos, dg.input_scalings, lyapunov=True, memory=False, lyapunov_steps=dg.lyapunov_steps, seed=cfg.seed)
        write_sweep_csv(pts, out / "lyapunov_sweep.csv")
        results["lyapunov_sweep"] = [[p.rho, p.input_scaling, p.lam] for p in pts]
    if "mc_sweep" in dg.run:
        pts = sweep(base, dg.rhos, dg.input_scalings, lyapunov=False, memory=True, mc_kwargs={"train_len": dg.mc_train, "test_len": dg.mc_test}, seed=cfg.seed)
        write_sweep_csv(pts, out / "mc_sweep.csv")
        results["mc_sweep"] = [[p.rho, p.input_scaling, p.mc] for p in pts]
    if "robustness" in dg.run:
        log.info("robustness needs a trained checkpoint; run `vir robustness --checkpoint ...`")
    report["diagnostics"] = results
    report["timing"] = {"wall_clock_seconds": time.perf_counter() - t0}
    _write_json(out / "diagnostics.json", report)
    return report


def cmd_robustness(cfg, checkpoint) -> dict:
    from .metrics import corrupted_sets, corruption_error
    from .training import evaluate, load_checkpoint, read_checkpoint_header

    header = read_checkpoint_header(checkpoint)[0]
    if header.get("shape_hash") != cfg.model.shape_hash():
        raise CheckpointMismatch(f"checkpoint {checkpoint} was trained with a different model shape ({header.get('shape_hash')} vs {cfg.model.shape_hash()})")
    model, _ = load_checkpoint(checkpoint)
    t0 = time.perf_counter()
    _, test_set = load_dataset(cfg.dataset)
    if cfg.diagnostics.robustness_limit:
        test_set = test_set.head(cfg.diagnostics.robustness_limit)
    pooling = cfg.train.pooling
    rep = corruption_error(lambda b: 1.0 - evaluate(model, b, pooling), test_set, corrupted_sets(test_set, cfg.seed))
    out = _out_dir(cfg)
    rep.write_csv(out / "robustness.csv")
    report = _base_report(cfg)
    report["robustness"] = {"clean_error": rep.clean_error, "errors": rep.errors, "ce": rep.ce, "mean_ce": rep.mean_ce, "samples": len(test_set)}
    report["timing"] = {"wall_clock_seconds": time.perf_counter() - t0}
    _write_json(out / "robustness.json", report)
    return report


def cmd_export_matrices(cfg) -> dict:
    from .reservoir import build_stack
    from .topology import export_matrices, write_matrix

    stack = build_stack(cfg.model.deep, cfg.model.activation)
    out = _out_dir(cfg)
    single = len(stack.layers) == 1
    for l, m in enumerate(stack.layers):
        export_matrices(m, out, "" if single else f"layer{l}_")
    for l, u in enumerate(stack.inter):
        write_matrix(out / f"layer{l}_U.bin", u)
    return {"layers": len(stack.layers), "output_dir": str(out)}


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vir", description="Vision reservoir experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML (or .json) experiment configuration")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS / OpenMP threads")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train and evaluate a model"))
    common(sub.add_parser("diagnose", help="small-worldness, Lyapunov and memory-capacity sweeps"))
    rob = sub.add_parser("robustness", help="corruption error of a trained checkpoint")
    common(rob)
    rob.add_argument("--checkpoint", required=True)
    common(sub.add_parser("export-matrices", help="write W and V as portable binaries"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads:
        # only effective when the BLAS library has not been loaded yet
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .config import load
    from .errors import ConfigError, FormatError

    try:
        cfg = load(args.config).with_overrides(seed=args.seed, output_dir=args.out)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            report = cmd_train(cfg)
            print(json.dumps({"accuracy": report["accuracy"], "output_dir": cfg.output_dir}))
        elif args.command == "diagnose":
            report = cmd_diagnose(cfg)
            print(json.dumps(report["diagnostics"]))
        elif args.command == "robustness":
            report = cmd_robustness(cfg, args.checkpoint)
            print(json.dumps({"mean_ce": report["robustness"]["mean_ce"]}))
        else:
            print(json.dumps(cmd_export_matrices(cfg)))
    except DatasetMissing as exc:
        print(f"dataset missing: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except CheckpointMismatch as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, FormatError) as exc:
        if args.command == "robustness":
            print(f"checkpoint unusable: {exc}", file=sys.stderr)
            return EXIT_CHECKPOINT
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
