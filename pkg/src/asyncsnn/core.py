"""LIF neuron mathematics shared by every executor.

Membrane potentials live in one flat vector covering all non-input layers;
``NetworkTopology.layer_slice`` maps a layer to its index range.  All numerics
are float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


class ConfigurationError(ValueError):
    """Raised when shapes or parameters are inconsistent."""


class NumericDivergenceError(RuntimeError):
    """A forward pass produced a non-finite or runaway membrane potential."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


# |u| above this aborts the pass; only reachable with runaway weights.
DIVERGENCE_LIMIT = 1e6


@dataclass
class LifParams:
    tau_m: float = 1.0  # ms
    u_thr: float = 0.3

    def __post_init__(self):
        if not self.tau_m > 0:
            raise ConfigurationError(f"tau_m must be > 0, got {self.tau_m}")
        if not self.u_thr > 0:
            raise ConfigurationError(f"u_thr must be > 0, got {self.u_thr}")


@dataclass
class NetworkTopology:
    """Layer sizes plus one dense ``(N_l, N_{l-1})`` weight matrix per layer."""

    n_input: int
    layer_sizes: List[int]
    weights: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if self.n_input < 1 or not self.layer_sizes or min(self.layer_sizes) < 1:
            raise ConfigurationError("topology needs n_input >= 1 and non-empty layers")
        if not self.weights:
            self.weights = [np.zeros((n, m)) for m, n in zip(self.fan_ins, self.layer_sizes)]
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        if len(self.weights) != len(self.layer_sizes):
            raise ConfigurationError(
                f"{len(self.weights)} weight matrices for {len(self.layer_sizes)} layers")
        for l, (w, n, m) in enumerate(zip(self.weights, self.layer_sizes, self.fan_ins)):
            if w.shape != (n, m):
                raise ConfigurationError(f"layer {l}: weight shape {w.shape}, expected {(n, m)}")
        self.offsets = np.concatenate([[0], np.cumsum(self.layer_sizes)]).astype(int)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_neurons(self) -> int:
        return int(sum(self.layer_sizes))

    @property
    def n_hidden(self) -> int:
        return int(sum(self.layer_sizes[:-1]))

    @property
    def n_output(self) -> int:
        return self.layer_sizes[-1]

    @property
    def fan_ins(self) -> List[int]:
        return [self.n_input] + self.layer_sizes[:-1]

    def layer_slice(self, layer: int) -> slice:
        """Flat-index range of layer ``layer`` (0-based over non-input layers)."""
        return slice(int(self.offsets[layer]), int(self.offsets[layer + 1]))

    @property
    def output_slice(self) -> slice:
        return self.layer_slice(self.n_layers - 1)

    def layer_index(self) -> np.ndarray:
        """Layer number of every flat neuron index."""
        return np.repeat(np.arange(self.n_layers), self.layer_sizes)

    def copy(self) -> "NetworkTopology":
        return NetworkTopology(self.n_input, list(self.layer_sizes), [w.copy() for w in self.weights])

    @property
    def n_params(self) -> int:
        return int(sum(w.size for w in self.weights))


def init_topology(n_input: int, layer_sizes: Sequence[int], seed: int = 0,
                  gain: float = 1.0) -> NetworkTopology:
    """Uniform init in +-gain*sqrt(1/fan_in), drawn layer by layer from ``seed``."""
    rng = np.random.default_rng(seed)
    weights = []
    fan_in = n_input
    for n in layer_sizes:
        bound = gain * math.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(n, fan_in)))
        fan_in = n
    return NetworkTopology(n_input, list(layer_sizes), weights)


def parse_architecture(text: str) -> Tuple[int, List[int]]:
    """Parse ``"2312-[64x3]-10"`` style architecture strings.

    Hidden blocks may be written ``[64x3]``, ``[64×3]`` or plain ``64``.
    """
    parts = [p.strip() for p in str(text).replace("×", "x").split("-")]
    if len(parts) < 2:
        raise ConfigurationError(f"bad architecture string {text!r}")
    try:
        n_input = int(parts[0])
        sizes: List[int] = []
        for p in parts[1:]:
            p = p.strip("[]() ")
            if "x" in p:
                width, depth = p.split("x")
                sizes.extend([int(width)] * int(depth))
            else:
                sizes.append(int(p))
    except ValueError as exc:
        raise ConfigurationError(f"bad architecture string {text!r}") from exc
    return n_input, sizes


def format_architecture(n_input: int, layer_sizes: Sequence[int]) -> str:
    hidden = list(layer_sizes[:-1])
    if hidden and all(h == hidden[0] for h in hidden):
        mid = [f"[{hidden[0]}x{len(hidden)}]"]
    else:
        mid = [str(h) for h in hidden]
    return "-".join([str(n_input)] + mid + [str(layer_sizes[-1])])


def synaptic_current(weights: np.ndarray, spikes: np.ndarray) -> np.ndarray:
    """Postsynaptic currents ``W @ s`` summed in ascending presynaptic order.

    Only active presynaptic columns are visited, so the cost scales with the
    number of spikes rather than the fan-in.
    """
    spikes = np.asarray(spikes)
    if weights.ndim != 2 or spikes.shape != (weights.shape[1],):
        raise ConfigurationError(
            f"cannot apply weights {weights.shape} to spikes {spikes.shape}")
    out = np.zeros(weights.shape[0])
    for j in np.flatnonzero(spikes):
        v = spikes[j]
        if v == 1:
            out += weights[:, j]
        else:
            out += weights[:, j] * v
    return out


def decay(u, delta_t: float, tau_m: float):
    return u * math.exp(-delta_t / tau_m)


def threshold(u, u_thr: float):
    """Heaviside step with a strict inequality: ``u == u_thr`` does not fire."""
    if np.ndim(u) == 0:
        return int(u > u_thr)
    return (np.asarray(u) > u_thr).astype(np.int64)


def event_update(u_prev: float, x_t: float, delta_t: float,
                 params: LifParams) -> Tuple[float, int, float]:
    """Atomic event-driven LIF update.

    Returns ``(u_new, spiked, u_pre_reset)``; ``u_pre_reset`` is the potential
    after integrating ``x_t`` and before any reset.
    """
    u_plus = decay(u_prev, delta_t, params.tau_m) + x_t
    spiked = threshold(u_plus, params.u_thr)
    return (0.0 if spiked else u_plus), spiked, u_plus
