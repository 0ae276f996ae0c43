"""Reverse-mode differentiation of recorded forward passes.

A ``Tape`` is the list of pass traces of one sample.  Every scheduling
decision on it (which neurons were evaluated, which fired, which queued
spikes were selected, dropout draws) is a constant; the weights are the only
variables.  ``replay`` recomputes the forward pass under that frozen schedule,
either with the hard threshold (reproducing the original run exactly) or with
the arctan-smoothed threshold, which makes the replay a smooth function of
the weights.

The queue is carried as a real-valued vector.  Each evaluated neuron adds
its spike value to its queue slot, including value-zero contributions from
neurons that stayed below threshold, so those neurons still receive a
surrogate gradient if their slot is propagated later in the pass.  Selecting
``k`` of ``n`` pending spikes moves the fraction ``k / n`` of the slot
forward; the remainder stays queued and its gradient flows straight through
the step (the skip path).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..core import ConfigurationError, LifParams, NetworkTopology, synaptic_current
from ..engine import PassTrace, SampleResult
from .losses import smooth_step, surrogate_grad


@dataclass
class Tape:
    mode: str
    passes: List[PassTrace]

    @classmethod
    def from_result(cls, result: SampleResult) -> "Tape":
        traces = result.traces
        modes = {t.mode for t in traces}
        if len(modes) > 1:
            raise ConfigurationError("tape mixes layered and async passes")
        return cls(modes.pop() if modes else "async", traces)


@dataclass
class _StepValues:
    u_plus: np.ndarray
    prop: np.ndarray  # propagated value per selected queue slot
    z: np.ndarray


@dataclass
class TapeValues:
    """Intermediate values of one replay, consumed by the reverse sweeps."""

    output_total: np.ndarray
    u_end: np.ndarray
    counts: List[np.ndarray] = field(default_factory=list)
    steps: List[List[_StepValues]] = field(default_factory=list)
    layer_z: List[List[np.ndarray]] = field(default_factory=list)


def _spike(u_plus, params: LifParams, alpha: float, smooth: bool):
    if smooth:
        return smooth_step(u_plus - params.u_thr, alpha)
    return (u_plus > params.u_thr).astype(np.float64)


def _sources(topology: NetworkTopology):
    n_in = topology.n_input
    out = [(0, n_in)]
    for l in range(topology.n_layers - 1):
        sl = topology.layer_slice(l)
        out.append((n_in + sl.start, n_in + sl.stop))
    return out


def replay(tape: Tape, topology: NetworkTopology, params: LifParams, alpha: float = 2.0,
           smooth: bool = False, weights: Optional[Sequence[np.ndarray]] = None) -> TapeValues:
    """Recompute a sample's forward passes under the frozen schedule."""
    W = list(weights) if weights is not None else topology.weights
    if tape.mode == "layered":
        return _replay_layered(tape, topology, params, alpha, smooth, W)
    N, n_in, L = topology.n_neurons, topology.n_input, topology.n_layers
    out_lo = topology.output_slice.start
    slices = [topology.layer_slice(l) for l in range(L)]
    sources = _sources(topology)
    u = np.zeros(N)
    vals = TapeValues(np.zeros(topology.n_output), u)
    for tr in tape.passes:
        u = u * tr.decay_factor
        q = np.zeros(n_in + N)
        counts = np.zeros(N)
        x = np.zeros(N)
        if tr.prioritize_input:
            if tr.s_in.any():
                x[slices[0]] = synaptic_current(W[0], tr.s_in)
        else:
            q[:n_in] = tr.s_in
        pass_vals = []
        for st in tr.steps:
            ev = st.eval_idx
            u_plus = u[ev] + x[ev]
            z = st.allowed * _spike(u_plus, params, alpha, smooth)
            u[ev] = u_plus * (1.0 - st.fired)
            counts[ev] += z
            hid = ev < out_lo
            q[n_in + ev[hid]] += z[hid]
            idx = st.sel_idx
            val = q[idx]
            pend = st.sel_pending
            barrier_only = pend == 0
            safe = np.where(barrier_only, 1, pend)
            deq = np.where(barrier_only, val, val * st.sel_count / safe)
            prop = np.where(barrier_only, val, val * st.sel_kept / safe)
            q[idx] = val - deq
            x = np.zeros(N)
            full = np.zeros(n_in + N)
            full[idx] = prop
            for l, (lo, hi) in enumerate(sources):
                if ((idx >= lo) & (idx < hi)).any():
                    src = full[lo:hi]
                    if src.any():
                        x[slices[l]] = synaptic_current(W[l], src)
            pass_vals.append(_StepValues(u_plus, prop, z))
        vals.output_total += counts[out_lo:]
        vals.counts.append(counts)
        vals.steps.append(pass_vals)
    vals.u_end = u
    return vals


def _replay_layered(tape, topology, params, alpha, smooth, W) -> TapeValues:
    N, L = topology.n_neurons, topology.n_layers
    u = np.zeros(N)
    vals = TapeValues(np.zeros(topology.n_output), u)
    for tr in tape.passes:
        u = u * tr.decay_factor
        counts = np.zeros(N)
        s_prev = np.asarray(tr.s_in, dtype=np.float64)
        zs = []
        for l in range(L):
            sl = topology.layer_slice(l)
            x = synaptic_current(W[l], s_prev) if s_prev.any() else np.zeros(topology.layer_sizes[l])
            u_plus = u[sl] + x
            z = _spike(u_plus, params, alpha, smooth)
            u[sl] = u_plus * (1.0 - tr.layer_fired[l])
            counts[sl] = z
            zs.append((u_plus, z))
            s_prev = z
        vals.output_total += counts[topology.output_slice]
        vals.counts.append(counts)
        vals.layer_z.append(zs)
    vals.u_end = u
    return vals


def _hard_values(tape: Tape, topology: NetworkTopology) -> TapeValues:
    """Hard-threshold tape values read straight off the trace (no replay)."""
    vals = TapeValues(np.zeros(topology.n_output), np.zeros(0))
    for tr in tape.passes:
        if tape.mode == "layered":
            vals.layer_z.append([(up, f.astype(np.float64))
                                 for up, f in zip(tr.layer_u_plus, tr.layer_fired)])
        else:
            vals.steps.append([_StepValues(st.u_plus, st.sel_kept.astype(np.float64),
                                           (st.allowed & st.fired).astype(np.float64))
                               for st in tr.steps])
    return vals


def backward_unlayered(tape: Tape, topology: NetworkTopology, params: LifParams,
                       grad_output: np.ndarray, alpha: float = 2.0,
                       values: Optional[TapeValues] = None, skip_path: bool = True,
                       bptt_window: Optional[int] = None) -> List[np.ndarray]:
    """Weight gradients of an async tape given ``dL/dc`` for the output counts.

    Two nested sweeps: passes in reverse (membrane state carried across
    timesteps) and, inside each pass, forward steps in reverse.  Unselected
    queue entries pass their gradient through a step unchanged; setting
    ``skip_path=False`` drops that contribution (used for ablation checks).
    ``values`` defaults to the hard-threshold values stored in the trace.
    """
    if tape.mode != "async":
        raise ConfigurationError("backward_unlayered needs an async tape")
    if values is None:
        values = _hard_values(tape, topology)
    if len(values.steps) != len(tape.passes):
        raise ConfigurationError("tape values do not match the tape")
    W = topology.weights
    N, n_in, L = topology.n_neurons, topology.n_input, topology.n_layers
    out_lo = topology.output_slice.start
    slices = [topology.layer_slice(l) for l in range(L)]
    sources = _sources(topology)
    g_out = np.asarray(grad_output, dtype=np.float64)
    if g_out.shape != (topology.n_output,):
        raise ConfigurationError("grad_output must have one entry per output neuron")
    grads = [np.zeros_like(w) for w in W]
    gu = np.zeros(N)
    n_pass = len(tape.passes)
    for p in range(n_pass - 1, -1, -1):
        tr = tape.passes[p]
        gq = np.zeros(n_in + N)
        gx = np.zeros(N)
        for st, sv in zip(reversed(tr.steps), reversed(values.steps[p])):
            idx = st.sel_idx
            if len(idx):
                # propagation x_next = sum_l W_l prop_src
                gprop = np.zeros(len(idx))
                for l, (lo, hi) in enumerate(sources):
                    m = (idx >= lo) & (idx < hi)
                    if not m.any():
                        continue
                    cols = idx[m] - lo
                    g_l = gx[slices[l]]
                    if not g_l.any():
                        continue
                    grads[l][:, cols] += np.outer(g_l, sv.prop[m])
                    gprop[m] = W[l][:, cols].T @ g_l
                pend = st.sel_pending
                barrier_only = pend == 0
                safe = np.where(barrier_only, 1, pend)
                keep_frac = np.where(barrier_only, 1.0, 1.0 - st.sel_count / safe)
                prop_frac = np.where(barrier_only, 1.0, st.sel_kept / safe)
                stay = gq[idx] * keep_frac if skip_path else 0.0
                if not skip_path:
                    gq[:] = 0.0
                gq[idx] = stay + gprop * prop_frac
            elif not skip_path:
                gq[:] = 0.0
            ev = st.eval_idx
            hid = ev < out_lo
            gz = np.where(hid, gq[n_in + np.where(hid, ev, 0)], 0.0)
            gz[~hid] = g_out[ev[~hid] - out_lo]
            gu_plus = gu[ev] * (1.0 - st.fired) + gz * st.allowed * surrogate_grad(
                sv.u_plus - params.u_thr, alpha)
            gu[ev] = gu_plus
            gx = np.zeros(N)
            gx[ev] = gu_plus
        if tr.prioritize_input and tr.s_in.any():
            g0 = gx[slices[0]]
            cols = np.flatnonzero(tr.s_in)
            grads[0][:, cols] += np.outer(g0, tr.s_in[cols])
        if bptt_window and p % bptt_window == 0:
            gu = np.zeros(N)
        else:
            gu = gu * tr.decay_factor
    return grads


def backward_layered(tape: Tape, topology: NetworkTopology, params: LifParams,
                     grad_output: np.ndarray, alpha: float = 2.0,
                     values: Optional[TapeValues] = None,
                     bptt_window: Optional[int] = None) -> List[np.ndarray]:
    """Backpropagation through time for layer-synchronized passes."""
    if tape.mode != "layered":
        raise ConfigurationError("backward_layered needs a layered tape")
    if values is None:
        values = _hard_values(tape, topology)
    W = topology.weights
    L = topology.n_layers
    g_out = np.asarray(grad_output, dtype=np.float64)
    grads = [np.zeros_like(w) for w in W]
    gu = np.zeros(topology.n_neurons)
    for p in range(len(tape.passes) - 1, -1, -1):
        tr = tape.passes[p]
        zs = values.layer_z[p]
        gz = g_out
        for l in range(L - 1, -1, -1):
            sl = topology.layer_slice(l)
            u_plus, _ = zs[l]
            gx = gu[sl] * (1.0 - tr.layer_fired[l]) + gz * surrogate_grad(
                u_plus - params.u_thr, alpha)
            gu[sl] = gx
            s_prev = np.asarray(tr.s_in, dtype=np.float64) if l == 0 else zs[l - 1][1]
            grads[l] += np.outer(gx, s_prev)
            if l > 0:
                gz = W[l].T @ gx
        if bptt_window and p % bptt_window == 0:
            gu = np.zeros_like(gu)
        else:
            gu = gu * tr.decay_factor
    return grads


def backward(tape: Tape, topology: NetworkTopology, params: LifParams,
             grad_output: np.ndarray, alpha: float = 2.0, **kw) -> List[np.ndarray]:
    if tape.mode == "layered":
        return backward_layered(tape, topology, params, grad_output, alpha, **kw)
    return backward_unlayered(tape, topology, params, grad_output, alpha, **kw)
