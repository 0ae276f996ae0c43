"""Finite-difference verification of the backward sweeps.

The forward pass is run once to freeze the schedule.  The loss is then
recomputed by replaying that schedule with the arctan-smoothed threshold,
which is a smooth function of the weights, and compared against the
analytic gradient of the same replay.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..core import LifParams, init_topology
from ..engine import ForwardConfig, run_sample
from .losses import count_loss_grad, one_hot
from .tape import Tape, backward, replay


@dataclass
class GradcheckResult:
    seed: int
    mode: str
    max_rel_error: float
    n_params: int
    n_spikes: int


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries meaningful."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_instance(seed: int, mode: str = "async", sizes: Sequence[int] = (3, 3, 2),
                   n_input: int = 2, timesteps: int = 3, eps: float = 1e-5,
                   alpha: float = 2.0, group_size: int = 1) -> GradcheckResult:
    rng = np.random.default_rng([seed, 11])
    topo = init_topology(n_input, list(sizes), seed=seed, gain=3.0)
    params = LifParams(tau_m=5.0, u_thr=0.3)
    frames = (rng.random((timesteps, n_input)) < 0.8).astype(np.int64)
    cfg = ForwardConfig(group_size=group_size, timestep_size=1.0)
    res = run_sample(topo, params, frames, cfg, mode=mode, seed=seed)
    tape = Tape.from_result(res)
    y = one_hot(seed % sizes[-1], sizes[-1])

    def loss(weights):
        return count_loss_grad(replay(tape, topo, params, alpha, True, weights).output_total, y)[0]

    vals = replay(tape, topo, params, alpha, smooth=True)
    _, g_out = count_loss_grad(vals.output_total, y)
    grads = backward(tape, topo, params, g_out, alpha, values=vals)
    worst = 0.0
    for l, w in enumerate(topo.weights):
        for idx in np.ndindex(w.shape):
            plus = [x.copy() for x in topo.weights]
            minus = [x.copy() for x in topo.weights]
            plus[l][idx] += eps
            minus[l][idx] -= eps
            fd = (loss(plus) - loss(minus)) / (2 * eps)
            worst = max(worst, relative_error(grads[l][idx], fd))
    return GradcheckResult(seed, mode, worst, topo.n_params, int(sum(p.counts.sum() for p in res.passes)))


def run_gradcheck(n_seeds: int = 20, modes=("async", "layered"), **kw) -> List[GradcheckResult]:
    return [check_instance(s, m, **kw) for s in range(n_seeds) for m in modes]
