"""Experiment configuration files and checkpoints (both JSON).

Config files are flat JSON objects.  Keys are matched after normalization
(lower case, units and symbols stripped), so hyperparameter names written the
way a results table would spell them are accepted, e.g.::

    {"Architecture": "2312-[64x3]-10", "Timestep size": "10 ms",
     "Learning rate": 5e-4, "Membrane time constant tau_m": "1 ms",
     "Forward group size F": 8, "Training method": "Unlayered RS"}

A ``"preset"`` key (``nmnist``, ``shd``, ``dvs_gesture``, ``temporal_order``,
``rate_pair``) loads built-in defaults that the remaining keys override.
"""
from __future__ import annotations

import dataclasses
import json
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .core import ConfigurationError, LifParams, NetworkTopology, init_topology, parse_architecture
from .engine import ForwardConfig
from .scheduler import MOMENTUM, RANDOM, SchedulingPolicy, SyncConfig

TRAINING_METHODS = ("layered", "unlayered_rs", "unlayered_ms")


@dataclass
class ExperimentConfig:
    dataset: str = "temporal_order"
    dataset_options: Dict[str, Any] = field(default_factory=dict)
    data_dir: Optional[str] = None
    n_train: Optional[int] = None
    n_test: Optional[int] = None
    architecture: str = "64-[64x3]-2"
    timestep_size: float = 10.0
    batch_size: int = 16
    epochs: int = 10
    lr: float = 5e-3
    u_thr: float = 0.3
    weight_decay: float = 1e-5
    tau_m: float = 20.0
    alpha: float = 2.0
    input_spike_dropout: float = 0.0
    group_size: int = 8
    train_group_size: Optional[int] = None
    refractory_dropout: float = 0.0
    momentum_noise: float = 0.0
    network_spike_dropout: float = 0.0
    training_method: str = "unlayered_rs"
    inference_method: str = "async_rs"
    stop: str = "on_output"  # inference stop condition; training always drains
    steps_after_output: int = 1
    prioritize_input: bool = True
    sync_threshold: int = 1
    barrier_messages: bool = False
    bptt_window: Optional[int] = None
    init_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        m = str(self.training_method).strip().lower().replace(" ", "_").replace("-", "_")
        if m not in TRAINING_METHODS:
            raise ConfigurationError(f"training method {self.training_method!r} not in {TRAINING_METHODS}")
        self.training_method = m
        from .experiments import inference_method
        self.inference_method = inference_method(self.inference_method)
        self.forward()  # validate

    @property
    def n_input(self) -> int:
        return parse_architecture(self.architecture)[0]

    @property
    def layer_sizes(self):
        return parse_architecture(self.architecture)[1]

    def lif(self) -> LifParams:
        return LifParams(tau_m=float(self.tau_m), u_thr=float(self.u_thr))

    def forward(self, training: bool = False) -> ForwardConfig:
        """Forward config for training (policy from the training method) or inference."""
        if training:
            kind = MOMENTUM if self.training_method == "unlayered_ms" else RANDOM
            f = self.train_group_size or self.group_size
        else:
            kind = MOMENTUM if self.inference_method == "async_ms" else RANDOM
            f = self.group_size
        return ForwardConfig(
            group_size=f,
            policy=SchedulingPolicy(kind, self.momentum_noise if training else 0.0),
            stop="on_spiking_done" if training else self.stop,
            steps_after_output=self.steps_after_output,
            prioritize_input=self.prioritize_input,
            sync=SyncConfig(self.sync_threshold, self.barrier_messages),
            refractory_dropout=self.refractory_dropout,
            network_spike_dropout=self.network_spike_dropout,
            input_spike_dropout=self.input_spike_dropout,
            timestep_size=self.timestep_size,
        )

    def train_config(self):
        from .training.trainer import TrainConfig
        return TrainConfig(
            method="layered" if self.training_method == "layered" else "unlayered",
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, alpha=self.alpha, forward=self.forward(training=True),
            bptt_window=self.bptt_window, seed=self.seed)

    def init_topology(self) -> NetworkTopology:
        return init_topology(self.n_input, self.layer_sizes, seed=self.seed, gain=self.init_gain)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Hyperparameters per dataset (full-scale values); temporal_order and
# rate_pair are the desk-scale substitutes used by the acceptance suite.
PRESETS: Dict[str, Dict[str, Any]] = {
    "nmnist": dict(dataset="nmnist", architecture="2312-[64x3]-10", timestep_size=10.0,
                   batch_size=256, epochs=50, lr=5e-4, u_thr=0.3, weight_decay=1e-5, tau_m=1.0,
                   alpha=2.0, input_spike_dropout=0.25, group_size=8, refractory_dropout=0.8,
                   momentum_noise=1e-6),
    "shd": dict(dataset="shd", architecture="350-[128x3]-20", timestep_size=10.0,
                batch_size=32, epochs=100, lr=7e-4, u_thr=0.3, weight_decay=1e-4, tau_m=100.0,
                alpha=10.0, input_spike_dropout=0.2, group_size=8, refractory_dropout=0.8,
                momentum_noise=0.1),
    "dvs_gesture": dict(dataset="dvs_gesture", architecture="2048-[128x3]-11", timestep_size=20.0,
                        batch_size=32, epochs=70, lr=1e-4, u_thr=0.3, weight_decay=1e-5,
                        tau_m=100.0, alpha=10.0, input_spike_dropout=0.2, group_size=8,
                        refractory_dropout=0.8, momentum_noise=0.1),
    "temporal_order": dict(dataset="temporal_order",
                           dataset_options={"n_channels": 64, "group_size": 16, "noise_hz": 300.0},
                           n_train=400, n_test=200, architecture="64-[64x3]-2",
                           timestep_size=10.0, batch_size=16, epochs=20, lr=5e-3, u_thr=0.3,
                           weight_decay=1e-5, tau_m=20.0, alpha=2.0, group_size=4,
                           init_gain=1.5),
    "rate_pair": dict(dataset="rate_pair", n_train=400, n_test=200, architecture="16-[16x1]-2",
                      timestep_size=10.0, batch_size=16, epochs=20, lr=5e-3, u_thr=0.3,
                      weight_decay=1e-5, tau_m=20.0, alpha=2.0, group_size=8),
}


def _norm(key: str) -> str:
    k = unicodedata.normalize("NFKD", str(key)).lower()
    k = k.replace("λ", "lambda").replace("τ", "tau").replace("α", "alpha")
    k = re.sub(r"\$|\\text|\\|[{}()]", " ", k)
    k = re.sub(r"[^a-z0-9]+", " ", k).strip()
    return k


_ALIASES = {
    "architecture": "architecture",
    "timestep size": "timestep_size",
    "batch size": "batch_size",
    "epochs": "epochs",
    "learning rate": "lr", "lr": "lr",
    "membrane potential threshold u thr": "u_thr", "membrane potential threshold": "u_thr",
    "u thr": "u_thr", "threshold": "u_thr",
    "weight decay constant lambda w": "weight_decay", "weight decay constant": "weight_decay",
    "weight decay": "weight_decay", "lambda w": "weight_decay",
    "membrane time constant tau m": "tau_m", "membrane time constant": "tau_m", "tau m": "tau_m",
    "surrogate steepness constant alpha": "alpha", "surrogate steepness constant": "alpha",
    "alpha": "alpha",
    "input spike dropout": "input_spike_dropout",
    "forward group size f": "group_size", "forward group size": "group_size", "f": "group_size",
    "training forward group size": "train_group_size", "train group size": "train_group_size",
    "refractory dropout": "refractory_dropout",
    "momentum noise lambda ms": "momentum_noise", "momentum noise": "momentum_noise",
    "lambda ms": "momentum_noise",
    "network spike dropout": "network_spike_dropout",
    "training method": "training_method", "training": "training_method",
    "inference method": "inference_method", "inference": "inference_method",
    "stop condition": "stop", "stop": "stop",
    "forward steps after output": "steps_after_output", "steps after output": "steps_after_output",
    "prioritize input": "prioritize_input",
    "synchronization threshold": "sync_threshold", "sync threshold": "sync_threshold",
    "barrier messages": "barrier_messages",
    "bptt window": "bptt_window",
    "init gain": "init_gain",
    "dataset": "dataset", "dataset options": "dataset_options", "data dir": "data_dir",
    "n train": "n_train", "n test": "n_test", "seed": "seed",
}

_UNIT = re.compile(r"^\s*([-+0-9.eE]+)\s*(ms|s)?\s*$")


def _number(value, key):
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return value
    m = _UNIT.match(str(value))
    if not m:
        raise ConfigurationError(f"{key}: cannot read {value!r} as a number")
    v = float(m.group(1))
    return v * 1000.0 if m.group(2) == "s" else v


def _bool(value, key):
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ConfigurationError(f"{key}: expected a boolean, got {value!r}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def normalize_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Map table-style keys to ExperimentConfig fields and coerce values."""
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        if key == "preset":
            continue
        name = key if key in _FIELD_TYPES else _ALIASES.get(_norm(key))
        if name is None:
            raise ConfigurationError(f"unknown config key {key!r}")
        if value is None or name in ("architecture", "dataset", "data_dir", "dataset_options",
                                     "training_method", "inference_method", "stop"):
            if name == "architecture" and value is not None:
                parse_architecture(value)
            out[name] = value
            continue
        t = _FIELD_TYPES[name]
        if t == "bool":
            out[name] = _bool(value, key)
        elif "int" in t:
            v = _number(value, key)
            if float(v) != int(v):
                raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
            out[name] = int(v)
        else:
            out[name] = float(_number(value, key))
    return out


def load_config(source, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a JSON path, a dict, or a preset name."""
    if isinstance(source, dict):
        raw = dict(source)
    elif source is None:
        raw = {}
    elif str(source) in PRESETS:
        raw = {"preset": str(source)}
    else:
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{source}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    base: Dict[str, Any] = {}
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigurationError(f"unknown preset {raw['preset']!r}; choose from {sorted(PRESETS)}")
        base.update(PRESETS[raw["preset"]])
    base.update(normalize_config(raw))
    if overrides:
        base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


# ------------------------------------------------------------------ checkpoints

CHECKPOINT_FORMAT = "asyncsnn-checkpoint"
CHECKPOINT_VERSION = 1


def checkpoint_dict(topology: NetworkTopology, params: LifParams,
                    forward: ForwardConfig, extra: Optional[dict] = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "precision": "float64",
        "n_input": topology.n_input,
        "layer_sizes": list(topology.layer_sizes),
        # row-major: weights[l][i][j] is the synapse from neuron j of layer l-1 to i of layer l
        "weights": [w.tolist() for w in topology.weights],
        "lif": dataclasses.asdict(params),
        "forward": forward.to_dict(),
        "extra": extra or {},
    }


def save_checkpoint(path: str, topology: NetworkTopology, params: LifParams,
                    forward: ForwardConfig, extra: Optional[dict] = None) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(topology, params, forward, extra), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str):
    """Returns ``(topology, params, forward_config, extra)``."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {d.get('version')}")
    if d.get("precision") not in ("float64", "float32"):
        raise ConfigurationError(f"{path}: unknown precision {d.get('precision')!r}")
    dtype = np.float64 if d["precision"] == "float64" else np.float32
    weights = [np.asarray(w, dtype=dtype).astype(np.float64) for w in d["weights"]]
    topo = NetworkTopology(int(d["n_input"]), d["layer_sizes"], weights)
    return topo, LifParams(**d["lif"]), ForwardConfig.from_dict(d["forward"]), d.get("extra", {})
