"""Moving-pooling graph convolution and the end-to-end encoder with its heads.

A forward pass runs::

    segment -> encode + position -> for each branch, for each window:
        adjacency -> propagate -> relu update -> average over the window's patches
    -> concatenate (branch, window, sensor) -> MLP -> representation -> head

All windows of all samples in a batch go through one batched product, so the
per-window loop is implicit in the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Architecture, ModelConfig, ablation_variant
from .errors import ConfigError
from .graph import build_window_adjacency
from .patches import EncoderParams, encode_and_position, segment_patches
from .tensor import (
    ShapeError, Tensor, add, concat, matmul, mean, relu, reshape, scale, sigmoid, take,
)


@dataclass(frozen=True)
class WindowPlan:
    window_size: int
    stride: int
    windows: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return len(self.windows)

    @property
    def covers_all(self) -> bool:
        return self.stride <= self.window_size

    def index_array(self) -> np.ndarray:
        return np.array([np.arange(a, b) for a, b in self.windows], dtype=np.intp)


def plan_windows(n_patches: int, M: int, s: int) -> WindowPlan:
    """Half-open windows ``[w*s, w*s + M)`` for ``w = 0 .. (n_patches - M) // s``."""
    if M < 1 or s < 1:
        raise ConfigError(f"window size and stride must be >= 1, got M={M}, s={s}")
    if M > n_patches:
        raise ConfigError(f"window size M={M} exceeds the {n_patches} available patches")
    count = (n_patches - M) // s + 1
    return WindowPlan(M, s, tuple((w * s, w * s + M) for w in range(count)))


def mpnn_propagate(z_w: Tensor, e: Tensor) -> Tensor:
    """Adjacency-weighted sum over all nodes of each window.

    ``z_w`` is ``(..., M, N, d)`` and ``e`` is ``(..., M*N, M*N)``.
    """
    *lead, M, N, d = z_w.shape
    if e.shape[-2:] != (M * N, M * N):
        raise ShapeError(f"propagate: adjacency {e.shape} does not match window {z_w.shape}")
    h = matmul(e, reshape(z_w, (*lead, M * N, d)))
    return reshape(h, (*lead, M, N, d))


def mpnn_update(h_w: Tensor, w_g: Tensor, b_g: Tensor) -> Tensor:
    return relu(add(matmul(h_w, w_g), b_g))


def temporal_pool(z_w: Tensor) -> Tensor:
    """Per-sensor mean over the window's patch axis: ``(..., M, N, d) -> (..., N, d)``."""
    return mean(z_w, axis=-3)


@dataclass
class BranchParams:
    w_s: Tensor
    w_g: Tensor
    b_g: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, tag: str) -> "BranchParams":
        a = 1.0 / np.sqrt(d)
        return cls(
            Tensor(rng.uniform(-a, a, (d, d)), requires_grad=True, name=f"{tag}.w_s"),
            Tensor(rng.uniform(-a, a, (d, d)), requires_grad=True, name=f"{tag}.w_g"),
            Tensor(rng.uniform(-a, a, d), requires_grad=True, name=f"{tag}.b_g"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w_s, self.w_g, self.b_g]


def _dense(rng, n_in, n_out, name):
    a = 1.0 / np.sqrt(n_in)
    return (Tensor(rng.uniform(-a, a, (n_in, n_out)), requires_grad=True, name=f"{name}.w"),
            Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.b"))


class FCSTGNN:
    """Encoder, ``B`` graph branches, output MLP and one task head.

    Shapes are fixed at construction from ``n_sensors`` and ``length``; every
    sample fed to the model must share them.
    """

    def __init__(self, config: ModelConfig, n_sensors: int, length: int,
                 rng: np.random.Generator | int = 0, max_rul: float = 0.0):
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        self.config = config
        self.n_sensors, self.length = n_sensors, length
        if config.head == "regression" and config.rul_norm and not max_rul > 0:
            raise ConfigError("rul_norm needs a positive max_rul from the dataset")
        self.max_rul = float(max_rul)
        if not 1 <= config.patch_size <= length:
            raise ConfigError(f"patch_size={config.patch_size} must lie in [1, {length}]")
        self.n_patches = length // config.patch_size
        self.arch: Architecture = ablation_variant(config, self.n_patches)
        self.plan = plan_windows(self.n_patches, self.arch.window, self.arch.stride)
        d = config.feature_dim

        self.encoder = EncoderParams.init(rng, config.patch_size, d)
        self.branches = [BranchParams.init(rng, d, f"branch{b}") for b in range(config.branches)]
        self.out1 = _dense(rng, self.stacked_dim, config.repr_dim, "output1")
        self.out2 = _dense(rng, config.repr_dim, config.repr_dim, "output2")
        n_out = 1 if config.head == "regression" else config.n_classes
        self.head = _dense(rng, config.repr_dim, n_out, "head")

    @property
    def per_branch_dim(self) -> int:
        n, d = self.n_sensors, self.config.feature_dim
        if self.arch.window_mean:
            return n * d
        if self.arch.pool:
            return self.plan.count * n * d
        return self.plan.count * self.arch.window * n * d

    @property
    def stacked_dim(self) -> int:
        return self.config.branches * self.per_branch_dim

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        ts = self.encoder.tensors()
        for br in self.branches:
            ts += br.tensors()
        ts += [*self.out1, *self.out2, *self.head]
        return [(t.name, t) for t in ts]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def get_arrays(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.tensors()]

    def set_arrays(self, arrays) -> None:
        for t, a in zip(self.tensors(), arrays, strict=True):
            if a.shape != t.shape:
                raise ShapeError(f"{t.name}: expected {t.shape}, got {a.shape}")
            t.data = np.array(a, dtype=np.float64)

    # -- forward --------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.n_sensors, self.length):
            raise ShapeError(f"model expects (batch, {self.n_sensors}, {self.length}) input, "
                             f"got {x.shape}")
        return x

    def node_features(self, x) -> Tensor:
        """Encoded, position-tagged features ``(batch, L_hat, N, d)``."""
        x = self._check_input(x)
        return encode_and_position(segment_patches(x, self.config.patch_size), self.encoder)

    def windows(self, z: Tensor) -> Tensor:
        """Gather ``(batch, W, M, N, d)`` window features from ``(batch, L_hat, N, d)``."""
        return take(z, self.plan.index_array(), axis=1)

    def adjacency(self, x, branch: int, return_pre_decay: bool = False):
        """Post-decay adjacency of every window for ``branch``: ``(batch, W, M*N, M*N)``."""
        zw = self.windows(self.node_features(x))
        return build_window_adjacency(zw, self.branches[branch].w_s, self.arch.delta,
                                      return_pre_decay=return_pre_decay)

    def _branch(self, zw: Tensor, br: BranchParams) -> Tensor:
        batch = zw.shape[0]
        e = build_window_adjacency(zw, br.w_s, self.arch.delta)
        u = mpnn_update(mpnn_propagate(zw, e), br.w_g, br.b_g)
        if self.arch.pool:
            u = temporal_pool(u)
            if self.arch.window_mean:
                u = mean(u, axis=1)
        return reshape(u, (batch, self.per_branch_dim))

    def stacked(self, x) -> Tensor:
        zw = self.windows(self.node_features(x))
        parts = [self._branch(zw, br) for br in self.branches]
        return parts[0] if len(parts) == 1 else concat(parts, axis=-1)

    def representation(self, x) -> Tensor:
        """``(batch, D)`` representation of ``x`` (``(N, L)`` or ``(batch, N, L)``)."""
        s = self.stacked(x)
        hid = relu(add(matmul(s, self.out1[0]), self.out1[1]))
        return add(matmul(hid, self.out2[0]), self.out2[1])

    def predict(self, x) -> Tensor:
        """Head output: ``(batch,)`` regression values or ``(batch, K)`` logits."""
        h = self.representation(x)
        y = add(matmul(h, self.head[0]), self.head[1])
        if self.config.head == "classification":
            return y
        y = reshape(y, (y.shape[0],))
        if self.config.rul_norm:
            y = scale(sigmoid(y), self.max_rul)
        return y


def forward(x, model: FCSTGNN) -> Tensor:
    return model.representation(x)
