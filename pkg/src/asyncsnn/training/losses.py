"""Arctan surrogate, spike-count softmax and cross-entropy."""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np


def surrogate_grad(u_rel, alpha: float):
    """Derivative of the arctan-smoothed step at ``u_rel = u - u_thr``."""
    a = math.pi * alpha / 2.0
    return (alpha / 2.0) / (1.0 + (a * np.asarray(u_rel, dtype=np.float64)) ** 2)


def smooth_step(u_rel, alpha: float):
    """Arctan smoothing of the Heaviside step; its derivative is ``surrogate_grad``."""
    return 0.5 + np.arctan(math.pi * alpha / 2.0 * np.asarray(u_rel, dtype=np.float64)) / math.pi


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict(output_spikes) -> Tuple[np.ndarray, np.ndarray, int]:
    """Class prediction from per-pass output spikes.

    ``output_spikes`` has shape (passes, classes) or (classes,).  Counts are
    summed over passes and used directly as softmax logits; ties go to the
    lowest class index.
    """
    s = np.asarray(output_spikes, dtype=np.float64)
    counts = s.sum(axis=0) if s.ndim == 2 else s
    p = softmax(counts)
    return counts, p, int(np.argmax(counts))


def cross_entropy(p, y) -> float:
    """Negative log-likelihood ``-sum(y * log p)``."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = y != 0
    return float(-(y[mask] * np.log(p[mask])).sum())


def one_hot(label: int, n_classes: int) -> np.ndarray:
    y = np.zeros(n_classes)
    y[label] = 1.0
    return y


def count_loss_grad(counts, y) -> Tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the output spike counts (``p - y``)."""
    p = softmax(counts)
    return cross_entropy(p, y), p - np.asarray(y, dtype=np.float64)
