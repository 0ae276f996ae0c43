"""Inference metrics (accuracy, spike density, latency) and parameter sweeps."""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import ConfigurationError, LifParams, NetworkTopology
from .engine import ForwardConfig, run_sample
from .scheduler import MOMENTUM, RANDOM, SchedulingPolicy
from .training.losses import predict

INFERENCE_METHODS = ("layered", "async_rs", "async_ms")
_INFER_ALIASES = {"layered": "layered", "async rs": "async_rs", "async_rs": "async_rs",
                  "rs": "async_rs", "async ms": "async_ms", "async_ms": "async_ms", "ms": "async_ms"}


def inference_method(name: str) -> str:
    key = str(name).strip().lower().replace("-", "_")
    key = _INFER_ALIASES.get(key, _INFER_ALIASES.get(key.replace("_", " ")))
    if key is None:
        raise ConfigurationError(f"unknown inference method {name!r}; use {INFERENCE_METHODS}")
    return key


def inference_config(method: str, forward: ForwardConfig) -> ForwardConfig:
    """Forward config for an inference method; momentum noise is training-only."""
    method = inference_method(method)
    if method == "layered":
        return forward
    kind = RANDOM if method == "async_rs" else MOMENTUM
    return forward.replace(policy=SchedulingPolicy(kind, 0.0, forward.policy.input_momentum))


@dataclass
class MetricsReport:
    n_samples: int
    accuracy: float
    density: float  # hidden spikes per hidden neuron per sample
    output_density: float  # output spikes per output neuron per sample
    mean_Nt: float
    latency: List[int]  # network spikes before the first output spike, per decided pass
    no_decision: List[int]  # drained spike count of each pass without an output spike
    fanin_hist: List[int]  # fanin_hist[k]: spike events that integrated k currents
    spike_percentiles: Dict[str, float]
    predictions: List[int]
    labels: List[int]
    spikes_processed: List[int]  # per sample, network spikes propagated

    @property
    def latency_median(self) -> Optional[float]:
        return float(np.median(self.latency)) if self.latency else None

    @property
    def latency_hist(self) -> List[int]:
        return np.bincount(np.asarray(self.latency, dtype=np.int64)).tolist() if self.latency else []

    def summary(self) -> dict:
        return {
            "n_samples": self.n_samples, "accuracy": self.accuracy, "density": self.density,
            "output_density": self.output_density, "mean_Nt": self.mean_Nt,
            "latency_median": self.latency_median, "decided_passes": len(self.latency),
            "no_decision_passes": len(self.no_decision),
        }

    def to_dict(self) -> dict:
        d = self.summary()
        d.update(latency_hist=self.latency_hist, no_decision=list(self.no_decision),
                 fanin_hist=list(self.fanin_hist), spike_percentiles=dict(self.spike_percentiles),
                 predictions=list(self.predictions), labels=list(self.labels),
                 spikes_processed=list(self.spikes_processed))
        return d


PERCENTILES = (5, 25, 50, 75, 95)


def evaluate(topology: NetworkTopology, params: LifParams, samples: Sequence,
             method: str, forward: Optional[ForwardConfig] = None, seed: int = 0,
             check_refractory: bool = False) -> MetricsReport:
    """Run inference over ``samples`` (objects with ``frames`` and ``label``)."""
    method = inference_method(method)
    forward = inference_config(method, forward or ForwardConfig())
    mode = "layered" if method == "layered" else "async"
    n_in = topology.n_input
    for s in samples:
        if s.frames.shape[1] != n_in:
            raise ConfigurationError(f"sample has {s.frames.shape[1]} channels, network expects {n_in}")
        if not 0 <= s.label < topology.n_output:
            raise ConfigurationError(f"label {s.label} outside the {topology.n_output} output classes")
    preds, labels, processed = [], [], []
    hidden_spikes, out_spikes, steps, passes = 0, 0, 0, 0
    latency, no_dec, fanin, per_sample = [], [], [], []
    for i, s in enumerate(samples):
        res = run_sample(topology, params, s.frames, forward, mode=mode, seed=seed, sample_id=i)
        _, _, k = predict(res.output_counts)
        preds.append(k)
        labels.append(int(s.label))
        h = sum(p.hidden_spikes for p in res.passes)
        hidden_spikes += h
        per_sample.append(h)
        out_spikes += sum(p.output_spikes for p in res.passes)
        processed.append(sum(p.spikes_propagated for p in res.passes))
        for p in res.passes:
            steps += p.n_steps
            passes += 1
            if p.decision_spikes is None:
                no_dec.append(p.spikes_propagated)
            else:
                latency.append(p.decision_spikes)
            fanin.extend(p.fanin_to_spike.tolist())
            if check_refractory and forward.refractory_dropout == 0 and p.counts.max(initial=0) > 1:
                raise AssertionError(f"sample {i}: a neuron fired twice in one forward pass")
    n = len(samples)
    correct = sum(int(p == y) for p, y in zip(preds, labels))
    pct = np.percentile(per_sample, PERCENTILES) if per_sample else [0.0] * len(PERCENTILES)
    return MetricsReport(
        n_samples=n,
        accuracy=correct / n if n else 0.0,
        density=hidden_spikes / (n * topology.n_hidden) if n and topology.n_hidden else 0.0,
        output_density=out_spikes / (n * topology.n_output) if n else 0.0,
        mean_Nt=steps / passes if passes else 0.0,
        latency=latency, no_decision=no_dec,
        fanin_hist=np.bincount(np.asarray(fanin, dtype=np.int64)).tolist() if fanin else [],
        spike_percentiles={f"p{q}": float(v) for q, v in zip(PERCENTILES, pct)},
        predictions=preds, labels=labels, spikes_processed=processed)


# ------------------------------------------------------------------ sweeps

def expand_grid(grid: Dict[str, Sequence]) -> List[Dict[str, object]]:
    """Cartesian product of the grid axes, in sorted axis order."""
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or not grid[k]:
            raise ConfigurationError(f"sweep axis {k!r} needs a non-empty list of values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def sweep(run_cell, grid: Dict[str, Sequence], seed: int = 0) -> List[dict]:
    """Evaluate ``run_cell(cell_params, cell_seed) -> dict of metrics`` per grid cell.

    Errors are recorded in an ``error`` column instead of aborting the sweep.
    Returns one wide row per cell.
    """
    rows = []
    for idx, cell in enumerate(expand_grid(grid)):
        cell_seed = int(np.random.default_rng([seed, idx]).integers(2**31))
        row = {"cell": idx, **cell, "seed": cell_seed}
        try:
            row.update(run_cell(dict(cell), cell_seed))
            row["error"] = ""
        except Exception as exc:  # recorded, not fatal
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def rows_to_long_csv(rows: List[dict], axes: Sequence[str]) -> str:
    """Long-format CSV: one line per (cell, metric)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell"] + list(axes) + ["seed", "metric", "value", "error"])
    for r in rows:
        metrics = [k for k in r if k not in ("cell", "seed", "error") and k not in axes]
        if not metrics:
            w.writerow([r["cell"]] + [r[a] for a in axes] + [r["seed"], "", "", r["error"]])
        for m in metrics:
            v = r[m]
            w.writerow([r["cell"]] + [r[a] for a in axes] + [r["seed"], m,
                        f"{v:.6f}" if isinstance(v, float) else v, r["error"]])
    return buf.getvalue()


# ------------------------------------------------------------------ pipelines

def dataset_for(cfg):
    """Dataset described by an ExperimentConfig: neutral files or a synthetic task."""
    from .data import DATASETS, load_dataset, synthetic_dataset

    if cfg.data_dir:
        limit = {k: v for k, v in (("train", cfg.n_train), ("test", cfg.n_test)) if v is not None}
        ds = load_dataset(cfg.data_dir, limit or None)
    elif cfg.dataset in ("rate_pair", "temporal_order"):
        ds = synthetic_dataset(cfg.dataset, cfg.seed, cfg.n_train, cfg.n_test, **cfg.dataset_options)
    elif cfg.dataset in DATASETS:
        raise ConfigurationError(
            f"dataset {cfg.dataset!r} needs data_dir pointing at converted event files")
    else:
        raise ConfigurationError(f"unknown dataset {cfg.dataset!r}")
    if ds.spec.n_input != cfg.n_input:
        raise ConfigurationError(
            f"architecture expects {cfg.n_input} inputs, dataset has {ds.spec.n_input}")
    if ds.spec.n_classes != cfg.layer_sizes[-1]:
        raise ConfigurationError(
            f"architecture has {cfg.layer_sizes[-1]} outputs, dataset has {ds.spec.n_classes} classes")
    return ds


def evaluate_config(cfg, topology: NetworkTopology, samples, **overrides) -> MetricsReport:
    """Evaluate with the inference settings of ``cfg`` (fields may be overridden)."""
    c = cfg.replace(**overrides) if overrides else cfg
    return evaluate(topology, c.lif(), samples, c.inference_method, c.forward(), seed=c.seed)


def train_experiment(cfg, dataset=None, on_row=None, eval_every: int = 1):
    """Train a fresh network per ``cfg``; returns ``(topology, rows)``.

    After every ``eval_every`` epochs (and the last) the test split is
    evaluated with the configured inference method.
    """
    from .training.trainer import EpochRow, train

    ds = dataset if dataset is not None else dataset_for(cfg)
    topo = cfg.init_topology()

    def test_row(t, epoch):
        if eval_every <= 0 or not ds.test:
            return None
        if epoch % eval_every and epoch != cfg.epochs - 1:
            return None
        rep = evaluate_config(cfg, t, ds.test)
        return EpochRow(epoch, "test", rep.accuracy, rep.density, rep.mean_Nt, float("nan"))

    rows = train(ds, topo, cfg.lif(), cfg.train_config(), eval_fn=test_row, on_row=on_row)
    return topo, rows
