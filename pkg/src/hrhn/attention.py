"""Hierarchical attention over encoder depth layers, decoder-input fusion and output projection.

Attention parameters are stored stacked over the attended depths:
``v`` is ``[K', l]``, ``T`` is ``[K', l, p]`` and ``U`` is ``[K', l, l]``.
K' is K for hierarchical attention and 1 for single-layer attention.
No bias terms in the alignment model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Parameter, ShapeError, Tensor


@dataclass
class AttentionParams:
    depths: tuple[int, ...]  # 1-based encoder depths attended, in concatenation order
    v: Parameter
    T: Parameter
    U: Parameter

    def __post_init__(self):
        k = len(self.depths)
        l = self.v.shape[-1]
        if self.v.shape != (k, l) or self.T.ndim != 3 or self.T.shape[:2] != (k, l) or self.U.shape != (k, l, l):
            raise ShapeError(
                f"attention shapes v{self.v.shape} T{self.T.shape} U{self.U.shape} inconsistent with {k} depths"
            )

    @property
    def encoder_hidden(self) -> int:
        return self.v.shape[1]

    @property
    def decoder_hidden(self) -> int:
        return self.T.shape[2]

    @property
    def context_size(self) -> int:
        return len(self.depths) * self.encoder_hidden

    def parameters(self) -> list[Parameter]:
        return [self.v, self.T, self.U]


@dataclass
class FusionParams:
    W: Parameter  # [d, d]
    V: Parameter  # [d, K'l]
    b: Parameter  # [d]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.V, self.b]


@dataclass
class OutputParams:
    W: Parameter  # [d, p]
    V: Parameter  # [d, K'l]
    b: Parameter  # [d]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.V, self.b]


@dataclass
class ContextSet:
    sub_contexts: Tensor  # [..., K', l]
    context: Tensor  # [..., K'l], depth order
    weights: Tensor  # [..., K', T-1]


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_attention(rng, depths, l: int, p: int, dtype=np.float32) -> AttentionParams:
    k = len(depths)
    return AttentionParams(
        tuple(depths),
        Parameter("attention.v", _uniform(rng, l, (k, l), dtype)),
        Parameter("attention.T", _uniform(rng, p, (k, l, p), dtype)),
        Parameter("attention.U", _uniform(rng, l, (k, l, l), dtype)),
    )


def init_fusion(rng, d: int, context: int, dtype=np.float32) -> FusionParams:
    return FusionParams(
        Parameter("fusion.W", _uniform(rng, d, (d, d), dtype)),
        Parameter("fusion.V", _uniform(rng, context, (d, context), dtype)),
        Parameter("fusion.b", np.zeros(d, dtype=dtype)),
    )


def init_output(rng, d: int, p: int, context: int, dtype=np.float32) -> OutputParams:
    return OutputParams(
        Parameter("output.W", _uniform(rng, p, (d, p), dtype)),
        Parameter("output.V", _uniform(rng, context, (d, context), dtype)),
        Parameter("output.b", np.zeros(d, dtype=dtype)),
    )


def attention_keys(states: Tensor, params: AttentionParams) -> Tensor:
    """U_k h_i^[k] for all i and attended k. These do not depend on the decoder step."""
    if states.shape[-3] != len(params.depths) or states.shape[-1] != params.encoder_hidden:
        raise ShapeError(f"states {states.shape} do not match attention over {len(params.depths)} depths")
    return nx.matmul(states, nx.swapaxes(params.U, -1, -2))


def align_scores(prev_top: Tensor, states: Tensor, params: AttentionParams, keys: Tensor | None = None) -> Tensor:
    """e_{t,i}^[k] = v_k . tanh(T_k s_{t-1} + U_k h_i^[k]), shape ``[..., K', T-1]``.

    ``states`` is ``[..., K', T-1, l]`` (see :meth:`HiddenStateGrid.layers`).
    """
    if prev_top.shape[-1] != params.decoder_hidden:
        raise ShapeError(f"decoder state length {prev_top.shape[-1]} != {params.decoder_hidden}")
    if keys is None:
        keys = attention_keys(states, params)
    lead = prev_top.shape[:-1]
    kk, l = len(params.depths), params.encoder_hidden
    s = nx.reshape(prev_top, lead + (1, params.decoder_hidden, 1))
    query = nx.reshape(nx.matmul(params.T, s), lead + (kk, 1, l))
    hidden = nx.tanh(keys + query)
    scores = nx.matmul(hidden, nx.reshape(params.v, (kk, l, 1)))
    return nx.reshape(scores, scores.shape[:-1])


def attention_weights(scores: Tensor) -> Tensor:
    """Softmax over encoder positions, independently for each depth."""
    return nx.softmax(scores, axis=-1)


def build_context(states: Tensor, weights: Tensor) -> ContextSet:
    """d_t^[k] = sum_i alpha_i^[k] h_i^[k], concatenated over depths in order."""
    if states.shape[:-1] != weights.shape:
        raise ShapeError(f"weights {weights.shape} do not match states {states.shape}")
    if np.abs(weights.data.sum(axis=-1) - 1.0).max() > 1e-4:
        raise ValueError("attention weight rows are not normalized")
    lead = weights.shape[:-1]
    sub = nx.matmul(nx.reshape(weights, lead + (1, weights.shape[-1])), states)
    sub = nx.reshape(sub, lead + (states.shape[-1],))
    context = nx.reshape(sub, lead[:-1] + (lead[-1] * states.shape[-1],))
    return ContextSet(sub, context, weights)


def hierarchical_context(prev_top: Tensor, states: Tensor, params: AttentionParams, keys=None) -> ContextSet:
    scores = align_scores(prev_top, states, params, keys)
    return build_context(states, attention_weights(scores))


def soft_attention(prev_top: Tensor, layer_states: Tensor, keys: Tensor, v: Tensor, T: Tensor):
    """Classical single-level attention over one layer ``[..., T-1, l]``.

    Returns ``(context [..., l], weights [..., T-1])``.
    """
    query = nx.linear(prev_top, T)
    hidden = nx.tanh(keys + nx.reshape(query, query.shape[:-1] + (1, query.shape[-1])))
    scores = nx.matmul(hidden, nx.reshape(v, (-1, 1)))
    alpha = nx.softmax(nx.reshape(scores, scores.shape[:-1]), axis=-1)
    ctx = nx.matmul(nx.reshape(alpha, alpha.shape[:-1] + (1, alpha.shape[-1])), layer_states)
    return nx.reshape(ctx, ctx.shape[:-2] + (ctx.shape[-1],)), alpha


def fuse_decoder_input(y_t: Tensor, context: Tensor, params: FusionParams) -> Tensor:
    """y~_t = W~ y_t + V~ d_t + b~."""
    if y_t.shape[-1] != params.W.shape[1] or context.shape[-1] != params.V.shape[1]:
        raise ShapeError(
            f"fusion inputs y{y_t.shape}, d{context.shape} vs W{params.W.shape}, V{params.V.shape}"
        )
    return nx.linear(y_t, params.W, params.b) + nx.linear(context, params.V)


def project_output(decoder_top: Tensor, context: Tensor, params: OutputParams) -> Tensor:
    """y^_T = W s_{T-1}^[K] + V d_T + b."""
    if decoder_top.shape[-1] != params.W.shape[1] or context.shape[-1] != params.V.shape[1]:
        raise ShapeError(
            f"output inputs s{decoder_top.shape}, d{context.shape} vs W{params.W.shape}, V{params.V.shape}"
        )
    return nx.linear(decoder_top, params.W, params.b) + nx.linear(context, params.V)
