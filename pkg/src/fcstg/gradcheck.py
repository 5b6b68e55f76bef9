"""Central finite-difference checks for every primitive op and the full model.

A block's error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8)``,
measured over all entries of one op input or one parameter tensor.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .model import FCSTGNN
from .seeding import rng_for
from .tensor import Tape, Tensor, backward
from .training import batch_loss

STEP = 1e-5
TOLERANCE = 1e-4

TINY = dict(patch_size=3, feature_dim=4, window=2, stride=1, branches=2, repr_dim=8)
TINY_N, TINY_L = 3, 12


@dataclass(frozen=True)
class BlockResult:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < TOLERANCE)


def block_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``loss()`` with respect to ``arr``, perturbed in place."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + step
        lp = loss()
        arr[idx] = old - step
        lm = loss()
        arr[idx] = old
        g[idx] = (lp - lm) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def _op_cases(rng: np.random.Generator):
    n = rng.standard_normal
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    return {
        "matmul": (lambda a, b: T.matmul(a, b), [n((2, 3, 4)), n((4, 5))]),
        "add": (lambda a, b: T.add(a, b), [n((3, 4)), n(4)]),
        "mul": (lambda a, b: T.mul(a, b), [n((2, 3)), n((2, 3))]),
        "scale": (lambda a: T.scale(a, -1.7), [n((3, 2))]),
        "relu": (T.relu, [n((4, 5))]),
        "sigmoid": (T.sigmoid, [n((3, 3))]),
        "softmax": (T.softmax, [n((2, 3, 4))]),
        "log_softmax": (T.log_softmax, [n((3, 5))]),
        "mean": (lambda a: T.mean(a, axis=1), [n((2, 3, 4))]),
        "sum": (lambda a: T.tsum(a, axis=0), [n((3, 4))]),
        "concat": (lambda a, b: T.concat([a, b], axis=-1), [n((2, 3)), n((2, 2))]),
        "reshape": (lambda a: T.reshape(a, (3, 4)), [n((2, 6))]),
        "transpose": (T.transpose, [n((2, 3, 4))]),
        "take": (lambda a: T.take(a, np.array([[0, 1], [1, 2], [2, 2]]), axis=1),
                 [n((2, 3, 2))]),
        "sin": (T.sin, [n((3, 3))]),
        "cos": (T.cos, [n((3, 3))]),
        "exp": (T.exp, [n((3, 3))]),
        "log": (T.log, [pos(3, 3)]),
    }


def check_ops(seed: int = 0) -> list[BlockResult]:
    """One block per (op, input) pair, each fed through a random linear readout."""
    rng = rng_for(seed, "gradcheck.ops")
    results = []
    for kind, (fn, arrays) in _op_cases(rng).items():
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        probe = fn(*inputs)
        weight = Tensor(rng.standard_normal(probe.shape))

        def loss_value():
            return float(T.tsum(T.mul(fn(*inputs), weight)).data[0])

        with Tape() as tape:
            loss = T.tsum(T.mul(fn(*inputs), weight))
        grads = backward(tape, loss, inputs)
        for k, t in enumerate(inputs):
            err = block_error(grads[t], numeric_grad(loss_value, t.data))
            results.append(BlockResult(f"op:{kind}[{k}]", err))
    return results


# ---------------------------------------------------------------------------
# end-to-end model


def check_model(head: str, seed: int = 0, config: ModelConfig | None = None,
                n_sensors: int = TINY_N, length: int = TINY_L, batch: int = 4
                ) -> list[BlockResult]:
    """One block per parameter tensor of a freshly initialised model with ``head``."""
    cfg = config or ModelConfig(head=head, n_classes=3, rul_norm=head == "regression", **TINY)
    model = FCSTGNN(cfg, n_sensors, length, rng_for(seed, f"gradcheck.init.{head}"),
                    max_rul=5.0)
    rng = rng_for(seed, f"gradcheck.data.{head}")
    x = rng.standard_normal((batch, n_sensors, length))
    if head == "classification":
        y = rng.integers(0, cfg.n_classes, batch)
    else:
        y = rng.uniform(0.0, 5.0, batch)
    params = model.tensors()
    with Tape() as tape:
        loss = batch_loss(model, x, y)
    grads = backward(tape, loss, params)
    out = []
    for name, p in model.named_tensors():
        num = numeric_grad(lambda: float(batch_loss(model, x, y).data[0]), p.data)
        out.append(BlockResult(f"{head}/{name}", block_error(grads[p], num)))
    return out


def run(seed: int = 0, config: ModelConfig | None = None) -> list[BlockResult]:
    """The full suite: every op, then every parameter block under both heads."""
    results = check_ops(seed)
    for head in ("classification", "regression"):
        cfg = None
        if config is not None:
            cfg = dataclasses.replace(config, head=head,
                                      rul_norm=head == "regression" or config.rul_norm)
        results += check_model(head, seed, cfg)
    return results
