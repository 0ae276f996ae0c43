"""Mini-batch training loop for layered and unlayered backpropagation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..core import LifParams, NetworkTopology, NumericDivergenceError
from ..engine import ON_SPIKING_DONE, ForwardConfig, run_sample
from .adam import Adam
from .losses import count_loss_grad, one_hot
from .tape import Tape, backward

log = logging.getLogger(__name__)

LAYERED = "layered"
UNLAYERED = "unlayered"


@dataclass
class TrainConfig:
    method: str = UNLAYERED  # "layered" or "unlayered"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 5e-4
    weight_decay: float = 1e-5
    alpha: float = 2.0
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    bptt_window: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.forward, dict):
            self.forward = ForwardConfig.from_dict(self.forward)
        self.method = str(self.method).lower()
        if self.method not in (LAYERED, UNLAYERED):
            raise ValueError(f"unknown training method {self.method!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr < 0 or self.weight_decay < 0 or not self.alpha > 0:
            raise ValueError("lr and weight_decay must be >= 0, alpha > 0")

    @property
    def exec_mode(self) -> str:
        return "layered" if self.method == LAYERED else "async"


@dataclass
class EpochRow:
    epoch: int
    split: str
    accuracy: float
    density: float
    mean_Nt: float
    loss: float

    def as_list(self):
        return [self.epoch, self.split, f"{self.accuracy:.6f}", f"{self.density:.6f}",
                f"{self.mean_Nt:.6f}", f"{self.loss:.6f}"]


CSV_HEADER = ["epoch", "split", "accuracy", "density", "mean_Nt", "loss"]


class TrainingDiverged(NumericDivergenceError):
    def __init__(self, message, epoch, batch, step=-1):
        super().__init__(f"epoch {epoch} batch {batch}: {message}", step)
        self.epoch = epoch
        self.batch = batch


def sample_gradient(topology: NetworkTopology, params: LifParams, frames, label: int,
                    cfg: TrainConfig, seed, sample_id: int):
    """Forward with recording, loss and weight gradients for one sample."""
    fwd = cfg.forward.replace(stop=ON_SPIKING_DONE) if cfg.forward.stop != ON_SPIKING_DONE else cfg.forward
    res = run_sample(topology, params, frames, fwd, mode=cfg.exec_mode, seed=seed,
                     sample_id=sample_id, training=True)
    counts = res.output_counts.sum(axis=0)
    loss, g = count_loss_grad(counts, one_hot(label, len(counts)))
    grads = backward(Tape.from_result(res), topology, params, g, cfg.alpha,
                     bptt_window=cfg.bptt_window)
    return res, counts, loss, grads


def train(dataset, topology: NetworkTopology, params: LifParams, cfg: TrainConfig,
          eval_fn: Optional[Callable[[NetworkTopology, int], Optional[EpochRow]]] = None,
          on_row: Optional[Callable[[EpochRow], None]] = None) -> List[EpochRow]:
    """Train ``topology`` in place; returns per-epoch metric rows.

    Within a batch, sample gradients are summed in ascending sample order and
    averaged.  ``eval_fn(topology, epoch)`` may return a test-split row.
    Training uses the OnSpikingDone stop condition regardless of
    ``cfg.forward.stop``.
    """
    opt = Adam(lr=cfg.lr)
    rows: List[EpochRow] = []
    train_set = dataset.train
    n = len(train_set)
    n_hidden = max(topology.n_hidden, 1)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(n)
        n_correct, loss_sum, spikes, steps, passes = 0, 0.0, 0, 0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = np.sort(order[start:start + cfg.batch_size])
            acc = [np.zeros_like(w) for w in topology.weights]
            for i in batch:
                s = train_set[i]
                try:
                    res, counts, loss, grads = sample_gradient(
                        topology, params, s.frames, s.label, cfg,
                        seed=cfg.seed * 100003 + epoch, sample_id=int(i))
                except NumericDivergenceError as exc:
                    raise TrainingDiverged(str(exc), epoch, b, exc.step) from exc
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise TrainingDiverged("non-finite loss or gradient", epoch, b)
                for a, g in zip(acc, grads):
                    a += g
                n_correct += int(np.argmax(counts) == s.label)
                loss_sum += loss
                spikes += sum(p.hidden_spikes for p in res.passes)
                steps += sum(p.n_steps for p in res.passes)
                passes += len(res.passes)
            acc = [a / len(batch) for a in acc]
            opt.step(topology.weights, acc, cfg.weight_decay)
            for w in topology.weights:
                if not np.all(np.isfinite(w)):
                    raise TrainingDiverged("non-finite weights after update", epoch, b)
        row = EpochRow(epoch, "train", n_correct / max(n, 1), spikes / (max(n, 1) * n_hidden),
                       steps / max(passes, 1), loss_sum / max(n, 1))
        rows.append(row)
        log.info("epoch %d train acc %.4f loss %.4f", epoch, row.accuracy, row.loss)
        if on_row:
            on_row(row)
        if eval_fn is not None:
            test_row = eval_fn(topology, epoch)
            if test_row is not None:
                rows.append(test_row)
                if on_row:
                    on_row(test_row)
    return rows
