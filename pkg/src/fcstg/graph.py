"""Fully-connected spatial-temporal adjacency for one window of patches.

Nodes of a window are (patch offset, sensor) pairs flattened as
``offset * N + sensor``.  Edge weights are softmax-normalised dot products
of projected features, then damped by ``delta ** |t - r|`` for nodes that
sit ``|t - r|`` patches apart.  Rows are not renormalised after damping.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import NumericFault, Tensor, matmul, mul, reshape, softmax, transpose


def node_index(t: int, i: int, n_sensors: int) -> int:
    return t * n_sensors + i


def decay_matrix(M: int, N: int, delta: float) -> np.ndarray:
    """``(M*N, M*N)`` mask with entry ``delta ** |t - r|`` for patch offsets t, r."""
    if M < 1 or N < 1:
        raise ConfigError(f"decay matrix needs M >= 1 and N >= 1, got M={M}, N={N}")
    if not 0.0 < delta <= 1.0:
        raise ConfigError(f"delta must lie in (0, 1], got {delta}")
    t = np.repeat(np.arange(M), N)
    return float(delta) ** np.abs(t[:, None] - t[None, :]).astype(np.float64)


def similarity_scores(z_w: Tensor, w_s: Tensor) -> Tensor:
    """Raw scores ``(z W_s)(z' W_s)^T`` between all node pairs of each window.

    ``z_w`` has shape ``(..., M, N, d)``; the result is ``(..., M*N, M*N)``.
    """
    *lead, M, N, d = z_w.shape
    nodes = reshape(z_w, (*lead, M * N, d))
    q = matmul(nodes, w_s)
    try:
        return matmul(q, transpose(q))
    except NumericFault:
        with np.errstate(all="ignore"):
            raw = q.data @ np.swapaxes(q.data, -1, -2)
        bad = np.argwhere(~np.isfinite(raw))[0]
        row = int(bad[-2])
        raise NumericFault(f"adjacency: non-finite score in row {row} "
                           f"(patch offset {row // N}, sensor {row % N})") from None


def build_window_adjacency(z_w: Tensor, w_s: Tensor, delta: float,
                           return_pre_decay: bool = False):
    """Post-decay adjacency of each window, shape ``(..., M*N, M*N)``.

    Self-pairs stay in the softmax.  With ``return_pre_decay`` the row-stochastic
    softmax is returned alongside.
    """
    M, N = z_w.shape[-3], z_w.shape[-2]
    pre = softmax(similarity_scores(z_w, w_s))
    if delta == 1.0:
        e = pre
    else:
        e = mul(pre, Tensor(decay_matrix(M, N, delta)))
    return (e, pre) if return_pre_decay else e
