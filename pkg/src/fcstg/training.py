"""Losses, evaluation metrics and the mini-batch Adam training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .errors import TrainingDiverged
from .data import iterate_batches
from .model import FCSTGNN
from .seeding import rng_for
from .tensor import (
    AdamState, NumericFault, Tape, Tensor, adam_step, backward, log_softmax, mul, scale, sub,
    tsum,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses


def loss_mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    if pred.size < 1:
        raise ValueError("loss_mse: empty batch")
    diff = sub(pred, Tensor(target))
    return scale(tsum(mul(diff, diff)), 1.0 / pred.size)


def loss_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean negative log-probability of the true class; ``logits`` is ``(batch, K)``."""
    target = np.asarray(target)
    n, k = logits.shape
    if target.shape != (n,):
        raise ValueError(f"loss_cross_entropy: {target.shape[0] if target.ndim else 0} "
                         f"targets for {n} rows")
    if np.any(target < 0) or np.any(target >= k) or not np.all(target == np.round(target)):
        raise ValueError(f"loss_cross_entropy: class index outside [0, {k})")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), target.astype(int)] = 1.0
    return scale(tsum(mul(log_softmax(logits), Tensor(onehot))), -1.0 / n)


# ---------------------------------------------------------------------------
# metrics


def _pair(pred, target, dtype=np.float64):
    p, t = np.asarray(pred, dtype=dtype).ravel(), np.asarray(target, dtype=dtype).ravel()
    if p.shape != t.shape:
        raise ValueError(f"prediction/target length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def metric_rmse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def metric_nasa_score(pred, target) -> float:
    """Asymmetric C-MAPSS score, summed: late predictions cost ``e^(d/10) - 1``,
    early ones ``e^(-d/13) - 1``, with ``d = pred - target``."""
    p, t = _pair(pred, target)
    d = p - t
    return float(np.sum(np.where(d < 0, np.expm1(-d / 13.0), np.expm1(d / 10.0))))


def metric_accuracy(pred, target) -> float:
    p, t = _pair(pred, target, np.int64)
    return float(np.mean(p == t))


def per_class_table(pred, target) -> list[dict]:
    """Precision, recall, F1 and support for each class seen in pred or target."""
    p, t = _pair(pred, target, np.int64)
    rows = []
    for c in np.union1d(p, t):
        tp = int(np.sum((p == c) & (t == c)))
        n_pred, n_true = int(np.sum(p == c)), int(np.sum(t == c))
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_true if n_true else 0.0
        f1 = 2 * tp / (n_pred + n_true) if (n_pred + n_true) else 0.0
        rows.append({"class": int(c), "precision": prec, "recall": rec, "f1": f1,
                     "support": n_true})
    return rows


def metric_macro_f1(pred, target) -> float:
    """Unweighted mean F1 over classes present in pred or target."""
    rows = per_class_table(pred, target)
    return float(np.mean([r["f1"] for r in rows]))


@dataclass
class EvalReport:
    task: str
    n: int
    rmse: float | None = None
    nasa_score: float | None = None
    accuracy: float | None = None
    macro_f1: float | None = None
    per_class: list[dict] = field(default_factory=list)

    def metrics(self) -> dict[str, float]:
        names = ("rmse", "nasa_score") if self.task == "regression" else ("accuracy", "macro_f1")
        return {k: getattr(self, k) for k in names}

    def selection_score(self) -> float:
        """Higher is better: accuracy, or negated RMSE."""
        return self.accuracy if self.task == "classification" else -self.rmse


def predict(model: FCSTGNN, x, batch_size: int = 256) -> np.ndarray:
    """Class indices or regression values for ``x`` of shape (n, N, L)."""
    outs = []
    for lo in range(0, len(x), batch_size):
        y = model.predict(x[lo: lo + batch_size]).data
        outs.append(y.argmax(axis=-1) if model.config.head == "classification" else y)
    return np.concatenate(outs)


def evaluate(model: FCSTGNN, x, y, batch_size: int = 256) -> EvalReport:
    if len(x) == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = predict(model, x, batch_size)
    if model.config.head == "regression":
        return EvalReport("regression", len(x), rmse=metric_rmse(pred, y),
                          nasa_score=metric_nasa_score(pred, y))
    return EvalReport("classification", len(x), accuracy=metric_accuracy(pred, y),
                      macro_f1=metric_macro_f1(pred, y), per_class=per_class_table(pred, y))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: EvalReport


@dataclass
class TrainResult:
    log: list[EpochRecord]
    best_epoch: int
    best_val: EvalReport


def batch_loss(model: FCSTGNN, xb, yb) -> Tensor:
    out = model.predict(xb)
    if model.config.head == "classification":
        return loss_cross_entropy(out, yb)
    return loss_mse(out, yb)


def train(model: FCSTGNN, train_xy, val_xy, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit ``model`` in place; leave it holding the best-validation parameters.

    ``train_xy`` and ``val_xy`` are ``(x, y)`` pairs.  ``on_epoch`` is called
    with each :class:`EpochRecord` as it completes.
    """
    x, y = train_xy
    if len(x) == 0 or len(val_xy[0]) == 0:
        raise ValueError("train and validation splits must be non-empty")
    params = model.tensors()
    state = AdamState.zeros_like([p.data for p in params], lr=cfg.lr)
    shuffle = rng_for(cfg.seed, "shuffle")
    log: list[EpochRecord] = []
    best_score, best_epoch, best_arrays, best_val = -np.inf, 0, model.get_arrays(), None
    stale = 0

    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for b, (xb, yb) in enumerate(iterate_batches(x, y, cfg.batch_size, shuffle)):
            try:
                with Tape() as tape:
                    loss = batch_loss(model, xb, yb)
                grads = backward(tape, loss, params)
            except NumericFault as exc:
                raise TrainingDiverged(epoch, b, str(exc)) from None
            total += float(loss.data[0]) * len(xb)
            new, state = adam_step([p.data for p in params], [grads[p] for p in params], state)
            for p, a in zip(params, new):
                p.data = a
        val = evaluate(model, *val_xy)
        rec = EpochRecord(epoch, total / len(x), val)
        log.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        logger.debug("epoch %d loss %.6f val %s", epoch, rec.train_loss, val.metrics())
        if val.selection_score() > best_score:
            best_score, best_epoch, best_val = val.selection_score(), epoch, val
            best_arrays = model.get_arrays()
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                break
    model.set_arrays(best_arrays)
    return TrainResult(log, best_epoch, best_val)
