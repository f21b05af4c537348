"""Command-line interface: gen-data, train, eval, verify.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 missing artifact or generation failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as D
from . import model as M
from . import pde
from . import sensors
from . import train as tr
from . import verify as V
from .config import ConfigError, config_to_dict, load_config
from .sensors import SENSOR_KINDS, SensorConfig

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _default_threads() -> int:
    env = os.environ.get("VIDON_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, seed=args.seed,
            train=dataclasses.replace(cfg.train, seed=args.seed))
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out=args.out)
    return cfg


def _echo_config(cfg) -> None:
    print("resolved config:")
    print(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))


def cmd_gen_data(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _echo_config(cfg)
    t0 = time.perf_counter()
    try:
        meta = D.build_dataset(cfg, cfg.out, threads=args.threads,
                               progress=lambda msg: print(msg, flush=True))
    except (pde.SolverError, pde.StabilityError, OSError, RuntimeError) as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_MISSING
    lo, hi = meta.sensor_ranges
    print(f"dataset written to {cfg.out}")
    print(f"counts: {meta.counts}")
    print(f"sensor count range: [{lo}, {hi}]")
    print(f"normalization: {meta.normalization}")
    print(f"elapsed: {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    _echo_config(cfg)
    out = Path(cfg.out)
    meta = D.load_meta(out)
    train_samples = D.load_split(out, "train", meta)
    val_samples = D.load_split(out, "val", meta)
    D.normalize_inputs(train_samples, meta)
    D.normalize_targets(train_samples, meta)
    D.normalize_inputs(val_samples, meta)

    start_epoch = 0
    if args.resume:
        ckpt0 = tr.load_checkpoint(args.resume)
        params = ckpt0.build_params()
        start_epoch = ckpt0.epoch + 1
        print(f"resuming from {args.resume} at epoch {start_epoch}")
    elif cfg.model.type == "deeponet":
        params = M.init_deeponet(cfg.deeponet_spec(),
                                 np.random.default_rng(cfg.train.seed))
    else:
        params = M.init_vidon(cfg.vidon_spec(), np.random.default_rng(cfg.train.seed))

    print(f"model: {cfg.model.type}, {M.count_model_params(params)} parameters")
    t0 = time.perf_counter()
    try:
        ckpt = tr.fit(params, train_samples, val_samples, cfg.train,
                      metrics_path=out / "metrics.csv",
                      denorm=D.denormalizer(meta), start_epoch=start_epoch,
                      log_every=args.log_every)
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    tr.save_checkpoint(out / "checkpoint.ckpt", ckpt)
    print(f"best validation rel-L2 {ckpt.val_rel_l2:.6f} at epoch {ckpt.epoch}")
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    print(f"metrics: {out / 'metrics.csv'}")
    print(f"elapsed: {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = tr.load_checkpoint(args.checkpoint)
    data_dir = Path(args.data)
    meta = D.load_meta(data_dir)
    samples = D.load_split(data_dir, args.split, meta)
    print(f"eval: checkpoint {args.checkpoint}, data {data_dir}, split {args.split}, "
          f"sensors {args.sensors or 'stored'}, seed {args.seed if args.seed is not None else meta.master_seed}")

    sensors_tag = ""
    if args.sensors:
        if args.split != "test":
            print("--sensors re-sampling is only supported on the test split",
                  file=sys.stderr)
            return EXIT_CONFIG
        records = {rec["id"]: rec for rec in D.load_fields(data_dir)}
        base = meta.sensors
        override = SensorConfig(
            kind=args.sensors, base_grid=tuple(base["base_grid"]),
            domain=tuple(tuple(b) for b in base["domain"]),
            drop_fraction_max=base["drop_fraction_max"],
            count_variance=base["count_variance"])
        layout_seed = args.seed if args.seed is not None else meta.master_seed
        for i, s in enumerate(samples):
            gidx = D.global_sensor_index("test", i, meta.counts)
            coords = sensors.sample_coords(override, gidx, layout_seed)
            s.sensor_coords = coords
            s.sensor_values = D.sensor_values_from_field(
                meta.problem, records[s.id], coords)
        sensors_tag = f"_sensors-{args.sensors}"
        print(f"re-sampled inputs with {args.sensors} sensors "
              f"(range {sensors.config_ranges(override)})")

    D.normalize_inputs(samples, meta)
    params = ckpt.build_params()
    mean, std = tr.evaluate_relative_l2(params, samples, denorm=D.denormalizer(meta))
    result = {"mean_rel_l2": mean, "std_rel_l2": std, "n": len(samples)}
    print(json.dumps(result, sort_keys=True))
    out_path = Path(args.out) if args.out else data_dir / f"eval_{args.split}{sensors_tag}.json"
    out_path.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    print(f"verify: suite {args.suite}, seed {args.seed or 0}")
    try:
        results = V.run_suite(args.suite, seed=args.seed or 0)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidon",
        description="Variable-input operator networks: data generation, "
                    "training, evaluation and verification suites.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--log-every", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "val"), default="test")
    p.add_argument("--sensors", choices=SENSOR_KINDS,
                   help="re-sample input sensors on the stored test fields")
    p.add_argument("--seed", type=int,
                   help="layout seed for --sensors re-sampling (default: dataset seed)")
    p.add_argument("--out", help="path for the metrics JSON")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run property/oracle suites")
    p.add_argument("--suite", choices=("autodiff", "spectral", "pde", "invariance", "all"),
                   default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (tr.CheckpointError, D.FormatError, D.CorruptionError) as exc:
        print(f"unreadable artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
