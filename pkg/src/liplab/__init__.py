"""liplab: a desk-scale word-level lip-reading pipeline, built from scratch.

Landmark-based lip alignment, mixup + label smoothing, an SE-residual
frontend with 3-hop spatial and temporal attention, a bidirectional GRU
backend, and audio-teacher knowledge distillation -- all on a hand-rolled
float64 autodiff engine with finite-difference gradient verification, and
trainable end-to-end on a bundled synthetic video corpus.
"""

from .tensor import Tensor, constant, evaluating, no_grad, set_debug_checks

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "constant",
    "evaluating",
    "no_grad",
    "set_debug_checks",
    "__version__",
]
