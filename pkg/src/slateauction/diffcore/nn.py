"""Network building blocks on top of the tensor tape.

All modules expose ``parameters(prefix)`` returning an ordered
``{name: Tensor}`` map; those names are also the checkpoint keys. Weights are
initialised uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a caller
supplied numpy Generator, so a model is fully determined by its config seed.

Inputs may carry arbitrary leading batch dimensions; the last two axes are
(sequence, feature).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear:
    def __init__(self, rng, d_in, d_out):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in)

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias

    def parameters(self, prefix):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class LayerNorm:
    """Normalisation over the last axis with learnable scale and shift."""

    EPS = 1e-5

    def __init__(self, d):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x):
        mu = T.tmean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = T.tmean(centered * centered, axis=-1, keepdims=True)
        inv = T.power(var + self.EPS, -0.5)
        return centered * inv * self.gamma + self.beta

    def parameters(self, prefix):
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


def scaled_dot_attention(q, k, v, scale, force_uniform=False):
    """Attention core: returns (output, weights).

    ``q``: (..., Lq, dh), ``k``/``v``: (..., Lk, dh). With ``force_uniform``
    the weights are replaced by the constant 1/Lk matrix (a test hook; the
    constant does not join the gradient tape).
    """
    n_keys = k.shape[-2]
    if force_uniform:
        shape = q.shape[:-1] + (n_keys,)
        weights = Tensor(np.full(shape, 1.0 / n_keys))
    else:
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * scale
        weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


class MultiHeadAttention:
    """Multi-head scaled dot-product attention with an output projection.

    Self-attention is the call with ``kv is q``. Keys/values carry no
    positional signal here, so attention output is invariant to permutations
    of the key/value rows.
    """

    def __init__(self, rng, d_model, n_heads):
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.scale = 1.0 / np.sqrt(self.d_head)
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def _split(self, x, length):
        # (..., L, d) -> (..., H, L, dh)
        parts = x.shape[:-2] + (length, self.n_heads, self.d_head)
        return T.swapaxes(T.reshape(x, parts), -3, -2)

    def __call__(self, query, kv, force_uniform=False, return_weights=False):
        if query.shape[-1] != self.d_model or kv.shape[-1] != self.d_model:
            raise ValueError(
                f"attention width mismatch: query {query.shape}, kv {kv.shape}, "
                f"d_model {self.d_model}"
            )
        lq, lk = query.shape[-2], kv.shape[-2]
        q = self._split(self.wq(query), lq)
        k = self._split(self.wk(kv), lk)
        v = self._split(self.wv(kv), lk)
        ctx, weights = scaled_dot_attention(q, k, v, self.scale, force_uniform)
        merged = T.reshape(T.swapaxes(ctx, -3, -2), query.shape[:-1] + (self.d_model,))
        out = self.wo(merged)
        if return_weights:
            return out, weights
        return out

    def parameters(self, prefix):
        params = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            params.update(lin.parameters(f"{prefix}.{name}"))
        return params


class FeedForward:
    def __init__(self, rng, d_model, d_hidden):
        self.lin1 = Linear(rng, d_model, d_hidden)
        self.lin2 = Linear(rng, d_hidden, d_model)

    def __call__(self, x):
        return self.lin2(T.relu(self.lin1(x)))

    def parameters(self, prefix):
        return {
            **self.lin1.parameters(f"{prefix}.lin1"),
            **self.lin2.parameters(f"{prefix}.lin2"),
        }


class TransformerBlock:
    """Self-attention (+ optional cross-attention) + feed-forward, post-LN.

    residual/LayerNorm wrap each sublayer:
        h = LN(x + SelfAttn(x));  h = LN(h + CrossAttn(h, kv));  LN(h + FFN(h))
    """

    def __init__(self, rng, d_model, n_heads, d_hidden, cross=False):
        self.self_attn = MultiHeadAttention(rng, d_model, n_heads)
        self.ln_self = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(rng, d_model, n_heads) if cross else None
        self.ln_cross = LayerNorm(d_model) if cross else None
        self.ffn = FeedForward(rng, d_model, d_hidden)
        self.ln_ffn = LayerNorm(d_model)

    def __call__(self, x, kv=None, uniform_cross=False):
        if (kv is not None) != (self.cross_attn is not None):
            raise ValueError("cross-attention input does not match block configuration")
        h = self.ln_self(x + self.self_attn(x, x))
        if self.cross_attn is not None:
            h = self.ln_cross(h + self.cross_attn(h, kv, force_uniform=uniform_cross))
        return self.ln_ffn(h + self.ffn(h))

    def parameters(self, prefix):
        params = self.self_attn.parameters(f"{prefix}.self_attn")
        params.update(self.ln_self.parameters(f"{prefix}.ln_self"))
        if self.cross_attn is not None:
            params.update(self.cross_attn.parameters(f"{prefix}.cross_attn"))
            params.update(self.ln_cross.parameters(f"{prefix}.ln_cross"))
        params.update(self.ffn.parameters(f"{prefix}.ffn"))
        params.update(self.ln_ffn.parameters(f"{prefix}.ln_ffn"))
        return params


class SigmoidMLP:
    """Two-layer MLP ending in a sigmoid; outputs live strictly in (0, 1)."""

    def __init__(self, rng, d_in, d_hidden):
        self.lin1 = Linear(rng, d_in, d_hidden)
        self.lin2 = Linear(rng, d_hidden, 1)

    def __call__(self, x):
        return T.sigmoid(self.lin2(T.relu(self.lin1(x))))

    def parameters(self, prefix):
        return {
            **self.lin1.parameters(f"{prefix}.lin1"),
            **self.lin2.parameters(f"{prefix}.lin2"),
        }
