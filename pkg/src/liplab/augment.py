"""Mixup and label smoothing, plus the smoothed cross-entropy they feed.

Mixup blends two preprocessed clips with a Beta-distributed weight and
carries both class ids forward; the loss is the matching convex combination
of per-target smoothed cross-entropies, so the interpolation applies to the
targets and the objective alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class MixupSample:
    lam: float
    x_mixed: np.ndarray
    y_a: int
    y_b: int


@dataclass
class SmoothedLabelDistribution:
    q: np.ndarray
    epsilon: float
    target: int


def mixup(x_a: np.ndarray, x_b: np.ndarray, y_a: int, y_b: int,
          alpha: float, rng: np.random.Generator,
          lam: float | None = None) -> MixupSample:
    """Blend two samples: ``lam * x_a + (1 - lam) * x_b`` with lam ~ Beta(alpha, alpha).

    ``lam`` may be pinned explicitly (tests, or sharing one draw across a
    batch). Every channel is blended, including the word-boundary indicator.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x_a.shape != x_b.shape:
        raise ValueError(f"mixup inputs differ in shape: {x_a.shape} vs {x_b.shape}")
    if lam is None:
        if alpha <= 0.0:
            raise ValueError(f"mixup alpha must be positive, got {alpha}")
        lam = float(rng.beta(alpha, alpha))
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup weight must lie in [0, 1], got {lam}")
    return MixupSample(lam=lam, x_mixed=lam * x_a + (1.0 - lam) * x_b, y_a=y_a, y_b=y_b)


def smooth_labels(y: int, n_classes: int, epsilon: float) -> SmoothedLabelDistribution:
    """Smoothed target: eps/N off-target, 1 - (N-1)*eps/N on the target class."""
    if not 0 <= y < n_classes:
        raise ValueError(f"class id {y} out of range for {n_classes} classes")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"smoothing constant must be in [0, 1], got {epsilon}")
    q = np.full(n_classes, epsilon / n_classes)
    q[y] = 1.0 - (n_classes - 1) * epsilon / n_classes
    return SmoothedLabelDistribution(q=q, epsilon=epsilon, target=y)


def smoothed_cross_entropy(logits: Tensor, q: SmoothedLabelDistribution) -> Tensor:
    """-sum_i q_i * log_softmax(logits)_i; gradient is softmax(logits) - q."""
    if logits.ndim != 1:
        raise ValueError(f"expected 1-D logits, got shape {logits.shape}")
    if logits.shape[0] != q.q.shape[0]:
        raise ValueError(f"logits size {logits.shape[0]} != label size {q.q.shape[0]}")
    return -(T.constant(q.q) * T.log_softmax(logits, axis=0)).sum()


def mixup_loss(logits: Tensor, y_a: int, y_b: int, lam: float,
               smoothing_epsilon: float) -> Tensor:
    """lam-weighted smoothed cross-entropy against both mixup parents."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup weight must lie in [0, 1], got {lam}")
    n_classes = logits.shape[0]
    loss_a = smoothed_cross_entropy(logits, smooth_labels(y_a, n_classes, smoothing_epsilon))
    if y_a == y_b:
        return loss_a
    loss_b = smoothed_cross_entropy(logits, smooth_labels(y_b, n_classes, smoothing_epsilon))
    return loss_a * lam + loss_b * (1.0 - lam)
