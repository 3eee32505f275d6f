"""Finite-difference verification of the analytic gradients.

The checker re-runs a graph builder ``f`` with each input element nudged by
±h and compares the central difference ``(f(x+h) - f(x-h)) / 2h`` against
the gradient produced by ``backward()``. The comparison uses a guarded
relative error

    |analytic - numeric| / max(1, |analytic|, |numeric|)

so tiny gradients do not blow up the ratio while O(1) gradients are still
held to the stated tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class CheckReport:
    name: str
    max_rel_err: float
    n_checked: int
    tol: float
    worst_input: int = -1
    worst_index: int = -1

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"{self.name:<28s} max_rel_err={self.max_rel_err:.3e} "
                f"({self.n_checked} elements, tol={self.tol:g}) {status}")


def finite_diff_check(f: Callable[[Sequence[Tensor]], Tensor],
                      inputs: Sequence[Tensor],
                      h: float = 1e-5,
                      tol: float = 1e-6,
                      sample: int | None = None,
                      rng: np.random.Generator | None = None,
                      name: str = "fn") -> CheckReport:
    """Compare analytic gradients of ``f(inputs)`` against central differences.

    ``f`` must be deterministic and rebuild its graph from the inputs' current
    ``data`` on every call. When ``sample`` is given, only that many randomly
    chosen elements (across all inputs) are perturbed.
    """
    inputs = list(inputs)
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("finite_diff_check inputs must have requires_grad=True")
        t.grad = None
    loss = f(inputs)
    if loss.size != 1:
        raise ValueError("finite_diff_check expects f to return a scalar")
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    coords = [(i, j) for i, t in enumerate(inputs) for j in range(t.size)]
    if sample is not None and sample < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[int(k)] for k in picks]

    max_err, worst = -1.0, (-1, -1)
    for i, j in coords:
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = f(inputs).item()
        flat[j] = orig - h
        fm = f(inputs).item()
        flat[j] = orig
        numeric = (fp - fm) / (2.0 * h)
        ana = analytic[i].reshape(-1)[j]
        err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
        if err > max_err:
            max_err, worst = err, (i, j)

    return CheckReport(name=name, max_rel_err=max_err, n_checked=len(coords),
                       tol=tol, worst_input=worst[0], worst_index=worst[1])


# ---------------------------------------------------------------------------
# Randomized per-op check suite (shared by the CLI `grad-check` command and
# the acceptance tests).
# ---------------------------------------------------------------------------

def _rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, shape)


def _rand_away_from_zero(rng, *shape):
    # keep relu/abs-style kinks at least 0.2 away so the central difference
    # stays on one side of the kink
    mag = rng.uniform(0.2, 2.0, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign

def _probe(rng, shape):
    # fixed random projection to a scalar so gradients are generic
    return T.constant(rng.uniform(-1.0, 1.0, shape))


def _case_add(rng):
    a = Tensor(_rand(rng, 3, 4), requires_grad=True)
    b = Tensor(_rand(rng, 3, 4), requires_grad=True)
    p = _probe(rng, (3, 4))
    return lambda ins: (T.add(ins[0], ins[1]) * p).sum(), [a, b]


def _case_sub(rng):
    a = Tensor(_rand(rng, 2, 5), requires_grad=True)
    b = Tensor(_rand(rng, 2, 5), requires_grad=True)
    p = _probe(rng, (2, 5))
    return lambda ins: (T.sub(ins[0], ins[1]) * p).sum(), [a, b]


def _case_mul(rng):
    a = Tensor(_rand(rng, 3, 3), requires_grad=True)
    b = Tensor(_rand(rng, 3, 3), requires_grad=True)
    p = _probe(rng, (3, 3))
    return lambda ins: (T.mul(ins[0], ins[1]) * p).sum(), [a, b]


def _case_scalar_ops(rng):
    a = Tensor(_rand(rng, 4,), requires_grad=True)
    c = float(rng.uniform(0.5, 2.0))
    p = _probe(rng, (4,))
    return lambda ins: ((ins[0] * c + 1.3 - ins[0] / c) * p).sum(), [a]


def _case_power(rng):
    a = Tensor(_rand_away_from_zero(rng, 5), requires_grad=True)
    p = _probe(rng, (5,))
    return lambda ins: ((ins[0] ** 2) * p).sum(), [a]


def _case_matmul(rng):
    a = Tensor(_rand(rng, 3, 4), requires_grad=True)
    b = Tensor(_rand(rng, 4, 2), requires_grad=True)
    p = _probe(rng, (3, 2))
    return lambda ins: (T.matmul(ins[0], ins[1]) * p).sum(), [a, b]


def _case_add_rowvec(rng):
    x = Tensor(_rand(rng, 4, 3), requires_grad=True)
    v = Tensor(_rand(rng, 3), requires_grad=True)
    p = _probe(rng, (4, 3))
    return lambda ins: (T.add_rowvec(ins[0], ins[1]) * p).sum(), [x, v]


def _case_conv2d(rng):
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    x = Tensor(_rand(rng, 2, 2, 5, 5), requires_grad=True)
    w = Tensor(_rand(rng, 3, 2, 2, 2), requires_grad=True)
    b = Tensor(_rand(rng, 3), requires_grad=True)
    ho = (5 + 2 * padding - 2) // stride + 1
    p = _probe(rng, (2, 3, ho, ho))
    return (lambda ins: (T.conv2d(ins[0], ins[1], ins[2], stride=stride, padding=padding)
                         * p).sum(), [x, w, b])


def _case_relu(rng):
    a = Tensor(_rand_away_from_zero(rng, 4, 4), requires_grad=True)
    p = _probe(rng, (4, 4))
    return lambda ins: (T.relu(ins[0]) * p).sum(), [a]


def _case_sigmoid(rng):
    a = Tensor(_rand(rng, 3, 4), requires_grad=True)
    p = _probe(rng, (3, 4))
    return lambda ins: (T.sigmoid(ins[0]) * p).sum(), [a]


def _case_tanh(rng):
    a = Tensor(_rand(rng, 6), requires_grad=True)
    p = _probe(rng, (6,))
    return lambda ins: (T.tanh(ins[0]) * p).sum(), [a]


def _case_exp(rng):
    a = Tensor(_rand(rng, 5), requires_grad=True)
    p = _probe(rng, (5,))
    return lambda ins: (T.exp(ins[0]) * p).sum(), [a]


def _case_log(rng):
    a = Tensor(rng.uniform(0.3, 3.0, (5,)), requires_grad=True)
    p = _probe(rng, (5,))
    return lambda ins: (T.log(ins[0]) * p).sum(), [a]


def _case_softmax(rng):
    a = Tensor(_rand(rng, 2, 6), requires_grad=True)
    p = _probe(rng, (2, 6))
    return lambda ins: (T.softmax(ins[0], axis=1) * p).sum(), [a]


def _case_log_softmax(rng):
    a = Tensor(_rand(rng, 2, 6), requires_grad=True)
    p = _probe(rng, (2, 6))
    return lambda ins: (T.log_softmax(ins[0], axis=1) * p).sum(), [a]


def _case_sum(rng):
    a = Tensor(_rand(rng, 3, 4, 2), requires_grad=True)
    p = _probe(rng, (4,))
    return lambda ins: (T.sum_(ins[0], axis=(0, 2)) * p).sum(), [a]


def _case_mean(rng):
    a = Tensor(_rand(rng, 3, 4), requires_grad=True)
    p = _probe(rng, (3,))
    return lambda ins: (T.mean_(ins[0], axis=1) * p).sum(), [a]


def _case_avg_pool2d(rng):
    a = Tensor(_rand(rng, 2, 3, 4, 4), requires_grad=True)
    p = _probe(rng, (2, 3))
    return lambda ins: (T.avg_pool2d(ins[0]) * p).sum(), [a]


def _case_reshape(rng):
    a = Tensor(_rand(rng, 3, 4), requires_grad=True)
    p = _probe(rng, (2, 6))
    return lambda ins: (ins[0].reshape(2, 6) * p).sum(), [a]


def _case_expand(rng):
    a = Tensor(_rand(rng, 4, 1), requires_grad=True)
    p = _probe(rng, (4, 5))
    return lambda ins: (T.expand(ins[0], 1, 5) * p).sum(), [a]


def _case_narrow(rng):
    a = Tensor(_rand(rng, 6, 3), requires_grad=True)
    p = _probe(rng, (2, 3))
    return lambda ins: (T.narrow(ins[0], 0, 2, 2) * p).sum(), [a]


def _case_concat(rng):
    a = Tensor(_rand(rng, 2, 3), requires_grad=True)
    b = Tensor(_rand(rng, 4, 3), requires_grad=True)
    p = _probe(rng, (6, 3))
    return lambda ins: (T.concat([ins[0], ins[1]], axis=0) * p).sum(), [a, b]


def _case_dropout(rng):
    a = Tensor(_rand(rng, 4, 4), requires_grad=True)
    p = _probe(rng, (4, 4))
    seed = int(rng.integers(0, 2**31))

    def build(ins):
        # fresh generator per evaluation so the mask is a fixed function
        mask_rng = np.random.default_rng(seed)
        return (T.dropout(ins[0], 0.4, mask_rng) * p).sum()

    return build, [a]


OP_CASES: dict[str, Callable] = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "scalar_ops": _case_scalar_ops,
    "pow": _case_power,
    "matmul": _case_matmul,
    "add_rowvec": _case_add_rowvec,
    "conv2d": _case_conv2d,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "tanh": _case_tanh,
    "exp": _case_exp,
    "log": _case_log,
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "sum": _case_sum,
    "mean": _case_mean,
    "avg_pool2d": _case_avg_pool2d,
    "reshape": _case_reshape,
    "expand": _case_expand,
    "narrow": _case_narrow,
    "concat": _case_concat,
    "dropout": _case_dropout,
}


def run_op_checks(cases_per_op: int = 100, h: float = 1e-5, tol: float = 1e-6,
                  seed: int = 0) -> list[CheckReport]:
    """Randomized gradient checks for every primitive op.

    Each case draws fresh inputs and a fresh scalar projection, then checks
    every input element. Returns one aggregated report per op.
    """
    reports = []
    for op_index, (op_name, case_fn) in enumerate(OP_CASES.items()):
        rng = np.random.default_rng([seed, op_index])
        worst = CheckReport(name=op_name, max_rel_err=-1.0, n_checked=0, tol=tol)
        checked = 0
        for _ in range(cases_per_op):
            build, inputs = case_fn(rng)
            rep = finite_diff_check(build, inputs, h=h, tol=tol, name=op_name)
            checked += rep.n_checked
            if rep.max_rel_err > worst.max_rel_err:
                worst = rep
        worst.n_checked = checked
        reports.append(worst)
    return reports
