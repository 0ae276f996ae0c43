"""Forward-pass executors.

``forward_pass_async`` runs the vectorized network-asynchrony loop: neurons
integrate whatever currents reach them in a forward step, new spikes join a
queue, and a scheduling policy picks up to ``F`` queued spikes to propagate
next.  ``forward_pass_layered`` is the layer-synchronized reference.

Both return a ``PassResult`` whose trace records every decision taken
(evaluated neurons, spike decisions, selections, dropout draws) so the pass
can be replayed and differentiated with the schedule held fixed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .core import (DIVERGENCE_LIMIT, ConfigurationError, LifParams, NetworkTopology,
                   NumericDivergenceError, decay, synaptic_current)
from .scheduler import (SchedulingPolicy, SpikeQueue, SyncConfig, apply_sync_threshold,
                        route_input, select_spikes)

ON_SPIKING_DONE = "on_spiking_done"
ON_OUTPUT = "on_output"
_STOP_ALIASES = {
    "on_spiking_done": ON_SPIKING_DONE, "onspikingdone": ON_SPIKING_DONE, "drain": ON_SPIKING_DONE,
    "on_output": ON_OUTPUT, "onoutput": ON_OUTPUT, "output": ON_OUTPUT,
}


@dataclass
class ForwardConfig:
    group_size: int = 8
    policy: SchedulingPolicy = field(default_factory=SchedulingPolicy)
    stop: str = ON_SPIKING_DONE
    steps_after_output: int = 1
    prioritize_input: bool = True
    sync: SyncConfig = field(default_factory=SyncConfig)
    # per-neuron core id; selection then runs independently per core
    core_map: Optional[Sequence[int]] = None
    core_group_size: Optional[Sequence[int]] = None
    refractory_dropout: float = 0.0
    network_spike_dropout: float = 0.0
    input_spike_dropout: float = 0.0
    timestep_size: float = 1.0  # ms

    def __post_init__(self):
        if isinstance(self.policy, dict):
            self.policy = SchedulingPolicy(**self.policy)
        if isinstance(self.sync, dict):
            self.sync = SyncConfig(**self.sync)
        key = str(self.stop).lower().replace(" ", "_").replace("'", "").replace('"', "")
        if key not in _STOP_ALIASES and key.replace("_", "") not in _STOP_ALIASES:
            raise ConfigurationError(f"unknown stop condition {self.stop!r}")
        self.stop = _STOP_ALIASES.get(key) or _STOP_ALIASES[key.replace("_", "")]
        if int(self.group_size) < 1:
            raise ConfigurationError("forward group size must be >= 1")
        self.group_size = int(self.group_size)
        if self.steps_after_output < 0:
            raise ConfigurationError("steps_after_output must be >= 0")
        for name in ("refractory_dropout", "network_spike_dropout", "input_spike_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        if not self.timestep_size > 0:
            raise ConfigurationError("timestep_size must be > 0")

    def replace(self, **changes) -> "ForwardConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("core_map", "core_group_size"):
            if d[key] is not None:
                d[key] = [int(v) for v in d[key]]
        thr = d["sync"]["threshold"]
        d["sync"]["threshold"] = np.asarray(thr).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForwardConfig":
        return cls(**d)


@dataclass
class StepRecord:
    """Everything decided during one forward step.

    Selection arrays index the extended queue space (inputs first).  For a
    selected neuron, ``sel_pending`` spike instances were queued, ``sel_count``
    of them were dequeued and ``sel_kept`` survived network spike dropout.
    ``sel_pending == 0`` marks a barrier-only selection.
    """

    eval_idx: np.ndarray
    u_plus: np.ndarray
    allowed: np.ndarray
    fired: np.ndarray
    barrier: np.ndarray
    sel_idx: np.ndarray
    sel_count: np.ndarray
    sel_pending: np.ndarray
    sel_kept: np.ndarray


@dataclass
class PassTrace:
    mode: str  # "async" or "layered"
    decay_factor: float
    s_in: np.ndarray
    prioritize_input: bool = True
    steps: List[StepRecord] = field(default_factory=list)
    # layered mode: per-layer potentials before reset and spike decisions
    layer_u_plus: List[np.ndarray] = field(default_factory=list)
    layer_fired: List[np.ndarray] = field(default_factory=list)


@dataclass
class PassResult:
    counts: np.ndarray  # spike counts per network neuron
    u: np.ndarray  # potentials after the pass
    trace: PassTrace
    n_steps: int
    spikes_propagated: int
    decision_spikes: Optional[int]  # network spikes propagated before the first output spike
    fanin_to_spike: np.ndarray  # currents integrated before each spike event
    barriers_sent: int = 0
    output_spikes: int = 0

    @property
    def hidden_spikes(self) -> int:
        return int(self.counts.sum() - self.output_spikes)


def early_stop(output_spike_history: Sequence[int], stop: str, steps_after_output: int) -> bool:
    """Whether to stop before running another forward step.

    ``output_spike_history[k]`` is the number of output spikes emitted in
    executed step ``k``.  Only the first output spike anchors the count.
    """
    if stop != ON_OUTPUT:
        return False
    for k, n in enumerate(output_spike_history):
        if n:
            return len(output_spike_history) - 1 - k >= steps_after_output
    return False


def _selection_groups(topology: NetworkTopology, config: ForwardConfig):
    if config.core_map is None:
        return None
    n_in = topology.n_input
    core_map = np.asarray(config.core_map, dtype=np.int64)
    if core_map.shape != (topology.n_neurons,):
        raise ConfigurationError("core_map needs one entry per network neuron")
    cores = np.unique(core_map)
    sizes = config.core_group_size
    groups = [(np.arange(n_in), n_in if sizes is not None else config.group_size)]
    for k in cores:
        members = np.flatnonzero(core_map == k) + n_in
        f = int(sizes[k]) if sizes is not None else config.group_size
        groups.append((members, max(f, 1)))
    return groups


def _pass_decay(u: np.ndarray, t0: Optional[float], t1: float, params: LifParams):
    dt = 0.0 if t0 is None else float(t1) - float(t0)
    if dt < 0:
        raise ConfigurationError("forward passes must advance in time")
    factor = float(decay(1.0, dt, params.tau_m))
    return u * factor, factor


def _check(u_plus: np.ndarray, step: int):
    if u_plus.size and not (np.all(np.isfinite(u_plus)) and np.abs(u_plus).max() <= DIVERGENCE_LIMIT):
        raise NumericDivergenceError(f"membrane potential diverged at forward step {step}", step)


def forward_pass_async(topology: NetworkTopology, params: LifParams, u: np.ndarray,
                       s_in: np.ndarray, t0: Optional[float], t1: float,
                       config: ForwardConfig, rng: np.random.Generator,
                       refractory_free: Optional[np.ndarray] = None) -> PassResult:
    """One forward pass under network asynchrony.

    ``refractory_free`` marks neurons exempt from refractoriness in this pass
    (refractory dropout); when omitted it is drawn from ``rng`` using
    ``config.refractory_dropout``.
    """
    N, n_in, L = topology.n_neurons, topology.n_input, topology.n_layers
    s_in = np.asarray(s_in)
    if u.shape != (N,) or s_in.shape != (n_in,):
        raise ConfigurationError("state or input frame has the wrong length")
    u, factor = _pass_decay(np.array(u, dtype=np.float64), t0, t1, params)
    trace = PassTrace("async", factor, s_in.copy(), config.prioritize_input)

    if refractory_free is None:
        refractory_free = (rng.random(N) < config.refractory_dropout
                           if config.refractory_dropout > 0 else np.zeros(N, dtype=bool))
    is_output = np.zeros(N, dtype=bool)
    is_output[topology.output_slice] = True
    sync = config.sync
    sync_thr = sync.thresholds(N)
    groups = _selection_groups(topology, config)
    slices = [topology.layer_slice(l) for l in range(L)]
    # queue segment feeding layer l: inputs for l == 0, else layer l-1
    sources = [slice(0, n_in)] + [slice(n_in + s.start, n_in + s.stop) for s in slices[:-1]]

    queue = SpikeQueue.empty(n_in + N)
    received = np.zeros(N, dtype=np.int64)
    integrated = np.zeros(N, dtype=np.int64)
    refractory = np.zeros(N, dtype=bool)
    counts = np.zeros(N, dtype=np.int64)
    x = np.zeros(N)
    arrivals = np.zeros(N, dtype=np.int64)
    currents_in = np.zeros(N, dtype=np.int64)

    input_momentum = (config.policy.input_momentum
                      if config.policy.input_momentum is not None else params.u_thr)
    direct = route_input(s_in, config.prioritize_input, queue, input_momentum, sync.emit_barrier)
    if direct is not None and s_in.any():
        x[slices[0]] = synaptic_current(topology.weights[0], direct)
        n_spk = int(s_in.sum())
        currents_in[slices[0]] = n_spk
        arrivals[slices[0]] = n_in if sync.emit_barrier else n_spk
    elif direct is not None and sync.emit_barrier:
        arrivals[slices[0]] = n_in

    history: List[int] = []
    spikes_propagated = 0
    decision_spikes = None
    fanin: List[int] = []
    barriers_sent = 0
    step = 0
    while (arrivals.any() or queue.pending) and not early_stop(history, config.stop,
                                                                config.steps_after_output):
        # integrate arrivals, fire, enqueue
        ev = np.flatnonzero((arrivals > 0) & ~refractory)
        u_plus = u[ev] + x[ev]
        _check(u_plus, step)
        above = u_plus > params.u_thr
        allowed, bar = apply_sync_threshold(received[ev], arrivals[ev], sync_thr[ev],
                                            sync.emit_barrier, above)
        received[ev] += arrivals[ev]
        integrated[ev] += currents_in[ev]
        fired = allowed & above
        bar &= ~is_output[ev]
        u[ev] = np.where(fired, 0.0, u_plus)
        spk = ev[fired]
        counts[spk] += 1
        refractory[spk] = ~refractory_free[spk]
        fanin.extend(integrated[spk].tolist())
        integrated[spk] = 0
        hidden_spk = spk[~is_output[spk]]
        queue.spikes[n_in + hidden_spk] += 1
        queue.momentum[n_in + hidden_spk] = u_plus[fired & ~is_output[ev]]
        bar_idx = ev[bar]
        queue.barriers[n_in + bar_idx] = 1
        queue.momentum[n_in + bar_idx] = u_plus[bar]
        barriers_sent += len(bar_idx)
        n_out = int(is_output[spk].sum())
        if n_out and decision_spikes is None:
            decision_spikes = spikes_propagated
        history.append(n_out)

        # select, dequeue, propagate
        x = np.zeros(N)
        arrivals = np.zeros(N, dtype=np.int64)
        currents_in = np.zeros(N, dtype=np.int64)
        if queue.pending:
            sel_sp, sel_bar = select_spikes(queue, config.group_size, config.policy, rng, groups)
            sel_idx = np.flatnonzero(sel_sp + sel_bar)
            pending = queue.spikes[sel_idx].copy()
            queue.spikes -= sel_sp
            queue.barriers -= sel_bar
            kept = sel_sp.copy()
            if config.network_spike_dropout > 0:
                net = sel_idx[sel_idx >= n_in]
                kept[net] = rng.binomial(sel_sp[net], 1.0 - config.network_spike_dropout)
            spikes_propagated += int(sel_sp[n_in:].sum())
            for l in range(L):
                src = sources[l]
                msgs = kept[src].sum() + sel_bar[src].sum()
                if msgs == 0:
                    continue
                if kept[src].any():
                    x[slices[l]] = synaptic_current(topology.weights[l], kept[src])
                arrivals[slices[l]] += msgs
                currents_in[slices[l]] += kept[src].sum()
            sel_count, sel_kept = sel_sp[sel_idx], kept[sel_idx]
        else:
            sel_idx = sel_count = pending = sel_kept = np.zeros(0, dtype=np.int64)
        trace.steps.append(StepRecord(ev, u_plus, allowed, fired, bar, sel_idx,
                                      sel_count, pending, sel_kept))
        step += 1

    out_spikes = int(counts[topology.output_slice].sum())
    return PassResult(counts, u, trace, step, spikes_propagated, decision_spikes,
                      np.asarray(fanin, dtype=np.int64), barriers_sent, out_spikes)


def forward_pass_layered(topology: NetworkTopology, params: LifParams, u: np.ndarray,
                         s_in: np.ndarray, t0: Optional[float], t1: float) -> PassResult:
    """Layer-synchronized pass: each layer integrates all its currents, then fires."""
    N, L = topology.n_neurons, topology.n_layers
    s_in = np.asarray(s_in)
    if u.shape != (N,) or s_in.shape != (topology.n_input,):
        raise ConfigurationError("state or input frame has the wrong length")
    u, factor = _pass_decay(np.array(u, dtype=np.float64), t0, t1, params)
    trace = PassTrace("layered", factor, s_in.copy())
    counts = np.zeros(N, dtype=np.int64)
    fanin: List[int] = []
    s_prev = s_in
    propagated = 0
    for l in range(L):
        sl = topology.layer_slice(l)
        if s_prev.any():
            x = synaptic_current(topology.weights[l], s_prev)
        else:
            x = np.zeros(topology.layer_sizes[l])
        u_plus = u[sl] + x
        _check(u_plus, l)
        fired = u_plus > params.u_thr
        u[sl] = np.where(fired, 0.0, u_plus)
        counts[sl] = fired
        fanin.extend([int(s_prev.sum())] * int(fired.sum()))
        trace.layer_u_plus.append(u_plus)
        trace.layer_fired.append(fired)
        if l < L - 1:
            propagated += int(fired.sum())
        s_prev = fired.astype(np.int64)
    out_spikes = int(counts[topology.output_slice].sum())
    return PassResult(counts, u, trace, L, propagated, propagated if out_spikes else None,
                      np.asarray(fanin, dtype=np.int64), 0, out_spikes)


@dataclass
class InputFrame:
    t: int
    spikes: np.ndarray


@dataclass
class SampleResult:
    passes: List[PassResult]
    frame_times: List[int]
    output_slice: slice

    @property
    def output_counts(self) -> np.ndarray:
        """Per-pass output-layer spike counts, shape (passes, n_output)."""
        n_out = self.output_slice.stop - self.output_slice.start
        return np.array([p.counts[self.output_slice] for p in self.passes]).reshape(-1, n_out)

    @property
    def traces(self) -> List[PassTrace]:
        return [p.trace for p in self.passes]


def _frames(frames) -> List[InputFrame]:
    if isinstance(frames, np.ndarray):
        if frames.ndim != 2:
            raise ConfigurationError("frame array must be 2-D (timesteps, n_input)")
        return [InputFrame(t, frames[t]) for t in range(len(frames))]
    return list(frames)


def pass_rng(seed: int, sample_id: int, t: int) -> np.random.Generator:
    """Independent stream per (seed, sample, timestep)."""
    return np.random.default_rng([int(seed), int(sample_id), int(t)])


def run_sample(topology: NetworkTopology, params: LifParams,
               frames: Union[np.ndarray, Sequence[InputFrame]], config: ForwardConfig,
               mode: str = "async", seed: int = 0, sample_id: int = 0,
               training: bool = False) -> SampleResult:
    """Run all frames of one sample, carrying membrane state between passes.

    Regularizers (input, refractory and network spike dropout) are applied
    only when ``training`` is set.
    """
    from .regularizers import apply_regularizers

    if mode not in ("async", "layered"):
        raise ConfigurationError(f"unknown execution mode {mode!r}")
    if not training:
        config = config.replace(refractory_dropout=0.0, network_spike_dropout=0.0,
                                input_spike_dropout=0.0)
    u = np.zeros(topology.n_neurons)
    passes: List[PassResult] = []
    times: List[int] = []
    t_prev = None
    for frame in _frames(frames):
        rng = pass_rng(seed, sample_id, frame.t)
        masks = apply_regularizers(config, rng, topology.n_input, topology.n_neurons)
        s_in = np.asarray(frame.spikes) * masks.input_keep
        t1 = frame.t * config.timestep_size
        if mode == "layered":
            res = forward_pass_layered(topology, params, u, s_in, t_prev, t1)
        else:
            res = forward_pass_async(topology, params, u, s_in, t_prev, t1, config, rng,
                                     refractory_free=masks.refractory_free)
        u = res.u
        t_prev = t1
        passes.append(res)
        times.append(frame.t)
    return SampleResult(passes, times, topology.output_slice)


PRESETS = ("barrier_layer", "timer_core", "async")


def neuromorphic_preset(name: str, topology: NetworkTopology,
                        core_map: Optional[Sequence[int]] = None) -> Dict[str, object]:
    """ForwardConfig fields imitating a class of neuromorphic processor.

    ``barrier_layer``: each layer processes its whole width per step and
    neurons wait for a report (spike or barrier) from every presynaptic
    neuron.  ``timer_core``: the same per core of ``core_map``.  ``async``:
    per-layer width, no waiting and no barriers.
    """
    layer_of = topology.layer_index()
    fan_in = np.asarray(topology.fan_ins)[layer_of]
    if name == "barrier_layer":
        return dict(core_map=layer_of.tolist(), core_group_size=list(topology.layer_sizes),
                    group_size=max(topology.layer_sizes),
                    sync=SyncConfig(threshold=fan_in.tolist(), emit_barrier=True))
    if name == "async":
        return dict(core_map=layer_of.tolist(), core_group_size=list(topology.layer_sizes),
                    group_size=max(topology.layer_sizes),
                    sync=SyncConfig(threshold=1, emit_barrier=False))
    if name == "timer_core":
        if core_map is None:
            raise ConfigurationError("timer_core preset needs a neuron-to-core map")
        core_map = np.asarray(core_map, dtype=np.int64)
        if core_map.shape != (topology.n_neurons,) or core_map.min() < 0:
            raise ConfigurationError("core_map needs one non-negative core id per neuron")
        sizes = np.bincount(core_map)
        # waiting for more messages than a neuron can receive would block it forever
        thr = np.minimum(sizes[core_map], fan_in)
        return dict(core_map=core_map.tolist(), core_group_size=sizes.tolist(),
                    group_size=int(sizes.max()),
                    sync=SyncConfig(threshold=thr.tolist(), emit_barrier=True))
    raise ConfigurationError(f"unknown neuromorphic preset {name!r}; choose from {PRESETS}")
