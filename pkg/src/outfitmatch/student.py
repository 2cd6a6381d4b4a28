"""Dual-path sigmoid MLP encoders and the pairwise-ranking loss.

Tops and bottoms run through separate parameter stacks over the
concatenated [visual; contextual] input. Compatibility is the inner
product of the two latent codes, so it always lands in (0, D_l).
Forward/backward come in a batched form (used by the trainer) and a
single-triplet form (the tested contract); the latter wraps the former.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, Triplet
from .errors import ConsistencyError, InputError
from .linalg import sigmoid


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class EncoderParams:
    """Per-path layer stacks; `top` and `bottom` never share weights."""

    top: list[DenseLayer]
    bottom: list[DenseLayer]

    def leaves(self):
        """Yield (name, array, l2_applies) for every trainable tensor."""
        for path_name, layers in (("top", self.top), ("bottom", self.bottom)):
            for idx, layer in enumerate(layers):
                yield f"student.{path_name}.{idx}.weight", layer.weight, True
                yield f"student.{path_name}.{idx}.bias", layer.bias, False

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            top=[DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.top],
            bottom=[DenseLayer(l.weight.copy(), l.bias.copy()) for l in self.bottom],
        )

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(
            top=[DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in self.top],
            bottom=[
                DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias))
                for l in self.bottom
            ],
        )

    @property
    def d_latent(self) -> int:
        return self.top[-1].weight.shape[0]


@dataclass(frozen=True)
class StudentConfig:
    """Architecture and regularization knobs for the encoders."""

    hidden_sizes: tuple[int, ...] = (24,)
    lambda_reg: float = 1e-3

    def __post_init__(self):
        if len(self.hidden_sizes) < 1 or any(h < 1 for h in self.hidden_sizes):
            raise InputError(f"hidden_sizes must be >= 1, got {self.hidden_sizes}")
        if self.lambda_reg < 0:
            raise InputError("lambda_reg must be non-negative")

    @property
    def k(self) -> int:
        return len(self.hidden_sizes)

    @property
    def d_latent(self) -> int:
        return self.hidden_sizes[-1]


def init_student(
    cfg: StudentConfig, d_v: int, d_c: int, rng: np.random.Generator
) -> EncoderParams:
    """Glorot-uniform weights, zero biases; top path drawn first."""

    def make_path():
        layers = []
        fan_in = d_v + d_c
        for width in cfg.hidden_sizes:
            r = np.sqrt(6.0 / (fan_in + width))
            layers.append(
                DenseLayer(
                    weight=rng.uniform(-r, r, size=(width, fan_in)),
                    bias=np.zeros(width),
                )
            )
            fan_in = width
        return layers

    return EncoderParams(top=make_path(), bottom=make_path())


def forward_path(layers: list[DenseLayer], x: np.ndarray) -> list[np.ndarray]:
    """Run a (B, D_in) batch through the stack; returns all activations.

    acts[0] is the input, acts[-1] the latent code, every layer sigmoid.
    """
    acts = [x]
    for layer in layers:
        x = sigmoid(x @ layer.weight.T + layer.bias)
        acts.append(x)
    return acts


def backward_path(
    layers: list[DenseLayer], acts: list[np.ndarray], d_out: np.ndarray
) -> list[DenseLayer]:
    """Gradients of sum(d_out * acts[-1]) w.r.t. the stack's parameters."""
    grads = [DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
    dz = d_out
    for idx in range(len(layers) - 1, -1, -1):
        z = acts[idx + 1]
        delta = dz * z * (1.0 - z)  # sigmoid'(u) = z(1-z)
        grads[idx].weight += delta.T @ acts[idx]
        grads[idx].bias += delta.sum(axis=0)
        if idx > 0:
            dz = delta @ layers[idx].weight
    return grads


def encode(
    params: EncoderParams, side: str, visual: np.ndarray, contextual: np.ndarray
) -> np.ndarray:
    """Latent code for one item; every component lies in (0, 1)."""
    if side == "top":
        layers = params.top
    elif side == "bottom":
        layers = params.bottom
    else:
        raise InputError(f"side must be 'top' or 'bottom', got {side!r}")
    x = np.concatenate([np.asarray(visual, float), np.asarray(contextual, float)])
    if x.size != layers[0].weight.shape[1]:
        raise InputError(
            f"encoder expects input width {layers[0].weight.shape[1]}, got {x.size}"
        )
    return forward_path(layers, x[None, :])[-1][0]


def compatibility(z_top: np.ndarray, z_bottom: np.ndarray) -> float:
    """Inner product of latent codes."""
    if z_top.shape != z_bottom.shape:
        raise InputError(
            f"latent length mismatch: {z_top.shape} vs {z_bottom.shape}"
        )
    return float(z_top @ z_bottom)


def bpr_loss(m_ij: float, m_ik: float) -> float:
    """-ln sigmoid(m_ij - m_ik), saturation-safe (regularizer lives in the
    trainer)."""
    return float(np.logaddexp(0.0, -(m_ij - m_ik)))


@dataclass
class BatchCache:
    """Activations from one batched forward pass, kept for backprop."""

    top_acts: list[np.ndarray]
    j_acts: list[np.ndarray]
    k_acts: list[np.ndarray]
    n_layers: int


def batch_forward(
    params: EncoderParams,
    x_top: np.ndarray,
    x_j: np.ndarray,
    x_k: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, BatchCache]:
    """Scores for a batch of triplets; the top encoding is computed once
    and shared by both pairs."""
    top_acts = forward_path(params.top, x_top)
    j_acts = forward_path(params.bottom, x_j)
    k_acts = forward_path(params.bottom, x_k)
    z_t, z_j, z_k = top_acts[-1], j_acts[-1], k_acts[-1]
    m_ij = np.einsum("bd,bd->b", z_t, z_j)
    m_ik = np.einsum("bd,bd->b", z_t, z_k)
    return m_ij, m_ik, BatchCache(top_acts, j_acts, k_acts, len(params.top))


def batch_backward(
    params: EncoderParams,
    cache: BatchCache,
    d_m_ij: np.ndarray,
    d_m_ik: np.ndarray,
) -> EncoderParams:
    """Gradient of sum_b (d_m_ij[b]*m_ij[b] + d_m_ik[b]*m_ik[b]) w.r.t.
    all encoder parameters."""
    if len(cache.top_acts) != cache.n_layers + 1 or cache.n_layers != len(params.top):
        raise ConsistencyError("forward cache does not match parameter stack")
    z_t = cache.top_acts[-1]
    z_j = cache.j_acts[-1]
    z_k = cache.k_acts[-1]
    d_ij = d_m_ij[:, None]
    d_ik = d_m_ik[:, None]
    top_grads = backward_path(params.top, cache.top_acts, d_ij * z_j + d_ik * z_k)
    # Bottom path sees the j and k rows as one stacked batch.
    stacked_acts = [
        np.concatenate([a_j, a_k], axis=0)
        for a_j, a_k in zip(cache.j_acts, cache.k_acts)
    ]
    bottom_grads = backward_path(
        params.bottom, stacked_acts, np.concatenate([d_ij * z_t, d_ik * z_t], axis=0)
    )
    return EncoderParams(top=top_grads, bottom=bottom_grads)


def student_forward(params: EncoderParams, catalog: Catalog, t: Triplet):
    """Triplet scores (m_ij, m_ik) plus the activation cache for backprop."""
    x_top = catalog.top_input_matrix()[[t.i]]
    x_j = catalog.bottom_input_matrix()[[t.j]]
    x_k = catalog.bottom_input_matrix()[[t.k]]
    m_ij, m_ik, cache = batch_forward(params, x_top, x_j, x_k)
    return float(m_ij[0]), float(m_ik[0]), cache


def student_backward(
    params: EncoderParams, cache: BatchCache, d_m_ij: float, d_m_ik: float
) -> EncoderParams:
    """Exact gradient of d_m_ij*m_ij + d_m_ik*m_ik for a cached triplet."""
    if cache.top_acts[0].shape[0] != 1:
        raise ConsistencyError("cache holds a batch, not a single triplet")
    return batch_backward(
        params, cache, np.array([d_m_ij], float), np.array([d_m_ik], float)
    )
