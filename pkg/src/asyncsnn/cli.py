"""Command-line interface.

Exit codes: 0 success, 1 check failed (gradcheck), 2 usage or configuration
error, 3 numeric divergence during training or inference.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from typing import List, Optional

from .config import (PRESETS, ExperimentConfig, load_checkpoint, load_config, normalize_config,
                     save_checkpoint)
from .core import ConfigurationError, NumericDivergenceError, parse_architecture, NetworkTopology
from .engine import PRESETS as HW_PRESETS
from .engine import neuromorphic_preset

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
THREADS_ENV = "ASYNCSNN_THREADS"

log = logging.getLogger("asyncsnn")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config(args, extra: Optional[dict] = None) -> ExperimentConfig:
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _parse_kv(items: List[str]) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    from .experiments import train_experiment
    from .training.trainer import CSV_HEADER

    cfg = _config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)

        def on_row(row):
            w.writerow(row.as_list())
            fh.flush()
            print(",".join(str(x) for x in row.as_list()))

        topo, _ = train_experiment(cfg, on_row=on_row, eval_every=args.eval_every)
    ckpt = os.path.join(args.out_dir, "checkpoint.json")
    save_checkpoint(ckpt, topo, cfg.lif(), cfg.forward(training=True),
                    extra={"config": cfg.to_dict()})
    print(f"wrote {ckpt} and {metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiments import dataset_for, evaluate

    topo, params, _, extra = load_checkpoint(args.checkpoint)
    if args.config is None and "config" in extra:
        base = dict(extra["config"])
        if args.seed is not None:
            base["seed"] = args.seed
        cfg = ExperimentConfig(**base)
    else:
        cfg = _config(args)
    over = {}
    if args.inference:
        over["inference_method"] = args.inference
    if args.stop:
        over["stop"] = args.stop
    if over:
        cfg = cfg.replace(**normalize_config(over))
        cfg.__post_init__()
    if topo.n_input != cfg.n_input or topo.layer_sizes != cfg.layer_sizes:
        raise ConfigurationError("checkpoint topology does not match the config architecture")
    ds = dataset_for(cfg)
    samples = ds.split(args.split)
    rep = evaluate(topo, params, samples, cfg.inference_method, cfg.forward(), seed=cfg.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    report = {"config": cfg.to_dict(), "split": args.split, "metrics": rep.to_dict()}
    _write_json(os.path.join(args.out_dir, "report.json"), report)
    with open(os.path.join(args.out_dir, "predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "label", "prediction", "spikes_processed"])
        for i, (y, p, n) in enumerate(zip(rep.labels, rep.predictions, rep.spikes_processed)):
            w.writerow([i, y, p, n])
    print(json.dumps(rep.summary(), sort_keys=True))
    return EXIT_OK


# fields that only change inference; any other sweep axis retrains the model
INFERENCE_AXES = {"group_size", "inference_method", "stop", "steps_after_output",
                  "prioritize_input", "sync_threshold", "barrier_messages"}


def run_sweep(cfg: ExperimentConfig, grid: dict, topology: Optional[NetworkTopology] = None,
              dataset=None, split: str = "test"):
    """Sweep ``grid`` (config keys -> value lists).  Returns (rows, axes).

    ``steps_after_output`` accepts ``"drain"``, meaning the OnSpikingDone stop
    condition.  Inference-only axes reuse one model and the config seed for
    evaluation; other axes train a model per cell from the cell seed.
    """
    from .experiments import dataset_for, evaluate_config, sweep, train_experiment

    norm_grid = {}
    for key, values in grid.items():
        name = list(normalize_config({key: None}))[0]
        norm_grid[name] = values
    ds = dataset if dataset is not None else dataset_for(cfg)
    shared = {"topo": topology}

    def run_cell(cell, cell_seed):
        c = dict(cell)
        if c.get("steps_after_output") == "drain":
            c.pop("steps_after_output")
            c["stop"] = "on_spiking_done"
        fields = normalize_config({k: v for k, v in c.items()
                                   if not (k == "stop" and v == "on_spiking_done")})
        if c.get("stop") == "on_spiking_done":
            fields["stop"] = "on_spiking_done"
        cell_cfg = cfg.replace(**fields)
        cell_cfg.__post_init__()
        if set(cell) - INFERENCE_AXES:
            topo, _ = train_experiment(cell_cfg.replace(seed=cell_seed), ds, eval_every=0)
        else:
            if shared["topo"] is None:
                shared["topo"], _ = train_experiment(cfg, ds, eval_every=0)
            topo = shared["topo"]
        return evaluate_config(cell_cfg, topo, ds.split(split)).summary()

    return sweep(run_cell, norm_grid, seed=cfg.seed), sorted(norm_grid)


def cmd_sweep(args) -> int:
    from .experiments import rows_to_long_csv

    with open(args.grid) as fh:
        grid = json.load(fh)
    if not isinstance(grid, dict):
        raise ConfigurationError("grid file must hold a JSON object of key -> list")
    cfg = _config(args)
    topo = load_checkpoint(args.checkpoint)[0] if args.checkpoint else None
    rows, axes = run_sweep(cfg, grid, topo, split=args.split)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_long_csv(rows, axes))
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {path}: {len(rows)} cells, {failed} failed")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .data import DATASETS, synth_task, write_dataset
    import dataclasses

    seed = args.seed if args.seed is not None else 0
    opts = _parse_kv(args.option)
    spec = dataclasses.replace(DATASETS[args.kind], train_size=args.n_train, test_size=args.n_test)
    if "n_channels" in opts:
        spec.n_input = int(opts["n_channels"])
    streams = synth_task(args.kind, args.n_train + args.n_test, seed, **opts)
    out = os.path.join(args.out_dir, args.kind)
    path = write_dataset(out, spec, {"train": streams[:args.n_train],
                                     "test": streams[args.n_train:]})
    print(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .training.gradcheck import run_gradcheck

    t0 = time.time()
    results = run_gradcheck(args.seeds)
    worst = max(r.max_rel_error for r in results)
    for r in results:
        log.info("seed %d %s: max rel err %.2e", r.seed, r.mode, r.max_rel_error)
    ok = worst < args.tol
    print(f"gradcheck: {len(results)} instances, max relative error {worst:.3e} "
          f"(tol {args.tol:g}), {time.time() - t0:.1f}s: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_preset(args) -> int:
    if args.architecture:
        n_in, sizes = parse_architecture(args.architecture)
    else:
        cfg = _config(args)
        n_in, sizes = cfg.n_input, cfg.layer_sizes
    topo = NetworkTopology(n_in, sizes)
    core_map = None
    if args.core_map:
        with open(args.core_map) as fh:
            core_map = json.load(fh)
    frag = neuromorphic_preset(args.name, topo, core_map)
    sync = frag.pop("sync")
    frag["sync_threshold"] = sync.threshold
    frag["barrier_messages"] = sync.emit_barrier
    print(json.dumps(frag, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    common.add_argument("--config", default=None,
                        help=f"JSON config file or built-in preset ({', '.join(sorted(PRESETS))})")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=int(os.environ.get(THREADS_ENV, "1")),
                        help=f"worker threads for numeric libraries (default ${THREADS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="asyncsnn", parents=[common],
                                description="Spiking networks under network asynchrony.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a network from a config")
    t.add_argument("--eval-every", type=int, default=1,
                   help="evaluate the test split every N epochs (0 = never)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--inference", default=None, help="layered, async_rs or async_ms")
    e.add_argument("--stop", default=None, help="on_output or on_spiking_done")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="evaluate a grid of settings")
    s.add_argument("grid", help="JSON object mapping config keys to value lists")
    s.add_argument("--checkpoint", default=None, help="model for inference-only axes")
    s.add_argument("--split", default="test", choices=["train", "test"])
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic task as event files")
    g.add_argument("kind", choices=["rate_pair", "temporal_order"])
    g.add_argument("--n-train", type=int, default=400)
    g.add_argument("--n-test", type=int, default=200)
    g.add_argument("--option", action="append", default=[], metavar="KEY=VALUE",
                   help="generator option, e.g. noise_hz=300")
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("preset", parents=[common], help="print a neuromorphic preset")
    r.add_argument("name", choices=list(HW_PRESETS))
    r.add_argument("--architecture", default=None, help='e.g. "64-[64x3]-2"')
    r.add_argument("--core-map", default=None, help="JSON list: core id per neuron (timer_core)")
    r.set_defaults(func=cmd_preset)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))
    try:
        return args.func(args)
    except NumericDivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
