"""Training-time regularizer draws (never applied during inference)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RegularizerMasks:
    input_keep: np.ndarray  # 1 = input spike survives
    refractory_free: np.ndarray  # True = neuron may re-fire within the pass


def apply_regularizers(config, rng: np.random.Generator, n_input: int,
                       n_neurons: int) -> RegularizerMasks:
    """Draw the per-pass masks for input spike dropout and refractory dropout.

    Each input channel and each neuron gets an independent Bernoulli draw.
    Network spike dropout is drawn per forward step by the engine and momentum
    noise per selection by the scheduler.  With all probabilities at zero no
    random numbers are consumed.
    """
    p_in = config.input_spike_dropout
    p_refr = config.refractory_dropout
    keep = ((rng.random(n_input) >= p_in).astype(np.int64) if p_in > 0
            else np.ones(n_input, dtype=np.int64))
    free = rng.random(n_neurons) < p_refr if p_refr > 0 else np.zeros(n_neurons, dtype=bool)
    return RegularizerMasks(keep, free)


def input_dropout(frames: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Drop each spike of a (timesteps, channels) frame array independently."""
    frames = np.asarray(frames)
    if p <= 0:
        return frames.copy()
    return frames * (rng.random(frames.shape) >= p)
