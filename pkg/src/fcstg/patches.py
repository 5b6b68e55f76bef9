"""Patch segmentation, the shared sensor-level encoder and sinusoidal positions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, add, matmul, relu, reshape


@dataclass(frozen=True)
class MtsSample:
    values: np.ndarray  # (N, L)
    label: float | int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"sample values must be N x L, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("sample values must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PatchSet:
    patches: np.ndarray  # (..., L_hat, N, f)
    patch_size: int

    @property
    def patch_count(self) -> int:
        return self.patches.shape[-3]


def segment_patches(values, f: int) -> PatchSet:
    """Cut ``values`` of shape (N, L) or (batch, N, L) into L // f patches.

    The trailing ``L % f`` timestamps are dropped.
    """
    if isinstance(values, MtsSample):
        values = values.values
    x = np.asarray(values, dtype=np.float64)
    L = x.shape[-1]
    if f <= 0 or f > L:
        raise ConfigError(f"patch_size={f} must lie in [1, {L}] for series of length {L}")
    n_patches = L // f
    x = x[..., : n_patches * f]
    lead, n = x.shape[:-2], x.shape[-2]
    p = x.reshape(lead + (n, n_patches, f))
    return PatchSet(np.swapaxes(p, -3, -2), f)


def positional_vector(t: int, d: int) -> np.ndarray:
    """Sinusoidal code of patch index ``t``: sin at even slots, cos at odd ones.

    Slot ``m`` uses frequency ``10000 ** (-2k / d)`` with ``k = m // 2``; for odd
    ``d`` the last slot is a sin.
    """
    if t < 0 or d < 1:
        raise ValueError(f"need t >= 0 and d >= 1, got t={t}, d={d}")
    m = np.arange(d)
    k = m // 2
    omega = 10000.0 ** (-2.0 * k / d)
    return np.where(m % 2 == 0, np.sin(omega * t), np.cos(omega * t))


def positional_table(n_patches: int, d: int) -> np.ndarray:
    return np.stack([positional_vector(t, d) for t in range(n_patches)])


@dataclass
class EncoderParams:
    """Two-layer per-patch MLP, f -> d -> d, shared by every (patch, sensor)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, f: int, d: int) -> "EncoderParams":
        a1, a2 = 1.0 / np.sqrt(f), 1.0 / np.sqrt(d)
        return cls(
            Tensor(rng.uniform(-a1, a1, (f, d)), requires_grad=True, name="encoder.w1"),
            Tensor(np.zeros(d), requires_grad=True, name="encoder.b1"),
            Tensor(rng.uniform(-a2, a2, (d, d)), requires_grad=True, name="encoder.w2"),
            Tensor(np.zeros(d), requires_grad=True, name="encoder.b2"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def encode_and_position(patchset: PatchSet, params: EncoderParams) -> Tensor:
    """Features of every (patch, sensor): ``MLP(patch) + positional_vector(t)``.

    Returns a tensor of shape ``(..., L_hat, N, d)`` matching the leading axes
    of ``patchset.patches``.
    """
    p = patchset.patches
    f = p.shape[-1]
    if params.w1.shape[0] != f:
        raise ConfigError(f"encoder expects patches of width {params.w1.shape[0]}, got {f}")
    d = params.w2.shape[1]
    lead = p.shape[:-1]
    flat = Tensor(p.reshape(-1, f))
    hid = relu(add(matmul(flat, params.w1), params.b1))
    out = add(matmul(hid, params.w2), params.b2)
    out = reshape(out, lead + (d,))
    n_patches, n = p.shape[-3], p.shape[-2]
    pos = np.repeat(positional_table(n_patches, d)[:, None, :], n, axis=1)
    return add(out, Tensor(pos))
