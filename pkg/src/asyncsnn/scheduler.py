"""Spike queue and the policies deciding which pending spikes propagate next.

Queue indices are "extended": ``[0, n_input)`` is a virtual input segment used
when input spikes are routed through the queue, and ``n_input + i`` is network
neuron ``i``.  Barrier messages live in a parallel 0/1 vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

RANDOM = "RS"
MOMENTUM = "MS"


@dataclass
class SchedulingPolicy:
    kind: str = RANDOM
    momentum_noise: float = 0.0
    # Momentum given to input spikes queued with prioritize_input=False.
    # ``None`` means "use the firing threshold".
    input_momentum: Optional[float] = None

    def __post_init__(self):
        self.kind = str(self.kind).upper()
        if self.kind not in (RANDOM, MOMENTUM):
            raise ValueError(f"unknown scheduling policy {self.kind!r}")
        if self.momentum_noise < 0:
            raise ValueError("momentum_noise must be >= 0")


@dataclass
class SpikeQueue:
    spikes: np.ndarray
    barriers: np.ndarray
    momentum: np.ndarray

    @classmethod
    def empty(cls, size: int) -> "SpikeQueue":
        return cls(np.zeros(size, dtype=np.int64), np.zeros(size, dtype=np.int64),
                   np.zeros(size))

    @property
    def pending(self) -> int:
        return int(self.spikes.sum() + self.barriers.sum())

    def __len__(self):
        return len(self.spikes)


@dataclass
class SyncConfig:
    """Per-neuron synchronization thresholds.

    ``threshold`` counts incoming messages (currents and barriers) a neuron
    must receive in a pass before it may fire.  A scalar broadcasts.
    """

    threshold: object = 1
    emit_barrier: bool = False

    def thresholds(self, n: int) -> np.ndarray:
        t = np.broadcast_to(np.asarray(self.threshold, dtype=np.int64), (n,)).copy()
        if (t < 0).any():
            raise ValueError("synchronization thresholds must be >= 0")
        return t

    @property
    def trivial(self) -> bool:
        return not self.emit_barrier and np.all(np.asarray(self.threshold) <= 1)


def enqueue(queue: SpikeQueue, new_spikes: np.ndarray, u_pre_reset: np.ndarray,
            offset: int = 0) -> SpikeQueue:
    """Add newly emitted spikes and record the potential each crossed with.

    ``new_spikes`` and ``u_pre_reset`` index network neurons; ``offset`` shifts
    them into the queue's extended index space.
    """
    idx = np.flatnonzero(new_spikes)
    queue.spikes[idx + offset] += np.asarray(new_spikes)[idx].astype(np.int64)
    queue.momentum[idx + offset] = np.asarray(u_pre_reset)[idx]
    return queue


def _instances(queue: SpikeQueue, members: Optional[np.ndarray]):
    """Flatten pending messages into (neuron, is_barrier) instance arrays."""
    spikes, barriers = queue.spikes, queue.barriers
    if members is not None:
        spike_idx = members[spikes[members] > 0]
        bar_idx = members[barriers[members] > 0]
    else:
        spike_idx = np.flatnonzero(spikes)
        bar_idx = np.flatnonzero(barriers)
    neuron = np.concatenate([np.repeat(spike_idx, spikes[spike_idx]), bar_idx])
    is_bar = np.concatenate([np.zeros(len(neuron) - len(bar_idx), dtype=bool),
                             np.ones(len(bar_idx), dtype=bool)])
    return neuron, is_bar


def _pick(neuron, is_bar, k, queue, policy, rng):
    n = len(neuron)
    if k >= n:
        return np.arange(n)
    if policy.kind == RANDOM:
        return rng.choice(n, size=k, replace=False)
    score = queue.momentum[neuron]
    if policy.momentum_noise > 0:
        score = score + policy.momentum_noise * rng.random(n)
    # highest score first; ties by ascending neuron index, spikes before barriers
    order = np.lexsort((is_bar, neuron, -score))
    return order[:k]


def select_spikes(queue: SpikeQueue, group_size: int, policy: SchedulingPolicy,
                  rng: np.random.Generator,
                  groups: Optional[Sequence[Tuple[np.ndarray, int]]] = None
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Choose up to ``group_size`` pending messages for propagation.

    Returns ``(selected_spikes, selected_barriers)`` in the queue's index
    space; the caller dequeues them.  When ``groups`` is given (a list of
    ``(member_indices, group_size)``) selection happens independently inside
    each group, which models per-core or per-layer processing.
    """
    if group_size < 1:
        raise ValueError("forward group size must be >= 1")
    sel_spikes = np.zeros(len(queue), dtype=np.int64)
    sel_bar = np.zeros(len(queue), dtype=np.int64)
    if queue.pending == 0:
        return sel_spikes, sel_bar
    for members, k in (groups if groups is not None else [(None, group_size)]):
        neuron, is_bar = _instances(queue, members)
        if len(neuron) == 0:
            continue
        chosen = _pick(neuron, is_bar, k, queue, policy, rng)
        np.add.at(sel_spikes, neuron[chosen][~is_bar[chosen]], 1)
        sel_bar[neuron[chosen][is_bar[chosen]]] = 1
    return sel_spikes, sel_bar


def apply_sync_threshold(received: np.ndarray, incoming: np.ndarray, sync_threshold: np.ndarray,
                         emit_barrier: bool, above_threshold: Optional[np.ndarray] = None
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """Update arrival counters and decide which neurons may fire.

    ``received`` is modified in place.  Returns ``(fire_allowed, barrier_out)``:
    a barrier is emitted by a neuron whose counter reaches its threshold in
    this update while it stays at or below the firing threshold.
    """
    before = received.copy()
    received += incoming
    fire_allowed = received >= sync_threshold
    if not emit_barrier:
        return fire_allowed, np.zeros(len(received), dtype=bool)
    crossed = (before < sync_threshold) & fire_allowed & (incoming > 0)
    if above_threshold is not None:
        crossed &= ~np.asarray(above_threshold, dtype=bool)
    return fire_allowed, crossed


def route_input(input_spikes: np.ndarray, prioritize_input: bool, queue: SpikeQueue,
                momentum: float, emit_barrier: bool = False) -> Optional[np.ndarray]:
    """Send an input frame either straight to the first layer or into the queue.

    With ``prioritize_input`` the frame is returned unchanged for immediate
    propagation.  Otherwise each input spike becomes a queue entry in the
    input segment with momentum ``momentum`` and ``None`` is returned; with
    barriers enabled, silent input channels queue a barrier instead.
    """
    s_in = np.asarray(input_spikes)
    if prioritize_input:
        return s_in
    n_in = len(s_in)
    queue.spikes[:n_in] += s_in.astype(np.int64)
    queue.momentum[:n_in] = momentum
    if emit_barrier:
        queue.barriers[:n_in] = (s_in == 0).astype(np.int64)
    return None
