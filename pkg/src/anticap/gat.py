"""Trainable graph attention stack that enriches concept-node embeddings.

Each layer updates node ``i`` from itself and its graph neighbors::

    logit_ji = (e_i Wq) . (e_j Wk)          for j in N(i) + {i}
    a_ji     = softmax_j(logit_ji / sqrt(D))
    h_i      = sum_j a_ji (e_j Wv)
    e_i'     = layernorm(e_i + h_i Wo)

Two such layers run at width ``D = 2d`` (concept embedding concatenated with
the image context), then two affine layers taper back to width ``d``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .concepts import EmbeddingProvider, embed_many
from .kg import KnowledgeGraph
from .numerics import (
    ParamStore,
    ShapeError,
    gelu,
    gelu_grad,
    layer_norm,
    layer_norm_backward,
    softmax_backward,
    softmax_rows,
    xavier_uniform,
)

LAYER_KEYS = ("wq", "wk", "wv", "wo", "ln_g", "ln_b")


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class GatLayer:
    params: ParamStore
    prefix: str

    def __getattr__(self, key):
        if key in LAYER_KEYS:
            return self.params[f"{self.prefix}.{key}"]
        raise AttributeError(key)

    @property
    def D(self) -> int:
        return self.params[f"{self.prefix}.wq"].shape[0]


class GatStack:
    def __init__(self, d: int, seed: int = 0, n_layers: int = 2, d_mid: int | None = None, dropout: float = 0.0):
        self.d = d
        self.D = 2 * d
        self.d_mid = d_mid or self.D // 2
        self.n_layers = n_layers
        self.dropout = dropout
        self.training = False
        self._rng = np.random.default_rng(seed + 1)
        self._cache = None
        rng = np.random.default_rng(seed)
        p = ParamStore()
        D = self.D
        for l in range(n_layers):
            for key in ("wq", "wk", "wv", "wo"):
                p.add(f"gat.l{l}.{key}", xavier_uniform(rng, D, D))
            p.add(f"gat.l{l}.ln_g", np.ones(D))
            p.add(f"gat.l{l}.ln_b", np.zeros(D))
        p.add("gat.r1_w", xavier_uniform(rng, D, self.d_mid))
        p.add("gat.r1_b", np.zeros(self.d_mid))
        p.add("gat.r2_w", xavier_uniform(rng, self.d_mid, d))
        p.add("gat.r2_b", np.zeros(d))
        self.params = p

    @property
    def layers(self) -> list[GatLayer]:
        return [GatLayer(self.params, f"gat.l{l}") for l in range(self.n_layers)]

    def _cache_key(self, g: KnowledgeGraph):
        return (id(g), g.n_nodes, len(g.edges), self.params.step_count)


def init_node_inputs(g: KnowledgeGraph, provider: EmbeddingProvider, context) -> np.ndarray:
    """Row i is ``[embedding(concept_i); context]``."""
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (provider.dim,):
        raise ShapeError(f"context width {context.shape} does not match embedding dim {provider.dim}")
    E = embed_many(provider, g.concepts)
    return np.concatenate([E, np.broadcast_to(context, (g.n_nodes, provider.dim))], axis=1)


def gat_layer_forward(layer: GatLayer, H: np.ndarray, g_or_mask, return_cache: bool = False):
    mask = g_or_mask.attention_mask() if isinstance(g_or_mask, KnowledgeGraph) else g_or_mask
    if mask.shape != (H.shape[0], H.shape[0]):
        raise ShapeError(f"{H.shape[0]} node rows but mask {mask.shape}")
    D = H.shape[1]
    Q = H @ layer.wq
    K = H @ layer.wk
    V = H @ layer.wv
    # row i holds the logits of node i over candidate sources j
    alpha = softmax_rows(Q @ K.T, scale=math.sqrt(D), mask=mask)
    agg = alpha @ V
    Z = H + agg @ layer.wo
    out, ln_cache = layer_norm(Z, layer.ln_g, layer.ln_b)
    if return_cache:
        return out, (H, Q, K, V, alpha, agg, ln_cache)
    return out


def gat_layer_backward(layer: GatLayer, cache, dout: np.ndarray):
    """Returns ``(dH, grads)`` with grads keyed by the layer's parameter names."""
    H, Q, K, V, alpha, agg, ln_cache = cache
    D = H.shape[1]
    dZ, dg, db = layer_norm_backward(dout, ln_cache)
    dH = dZ.copy()
    dWo = agg.T @ dZ
    dagg = dZ @ layer.wo.T
    dalpha = dagg @ V.T
    dV = alpha.T @ dagg
    dlogits = softmax_backward(alpha, dalpha) / math.sqrt(D)
    dQ = dlogits @ K
    dK = dlogits.T @ Q
    dH += dQ @ layer.wq.T + dK @ layer.wk.T + dV @ layer.wv.T
    pre = layer.prefix
    grads = {
        f"{pre}.wq": H.T @ dQ,
        f"{pre}.wk": H.T @ dK,
        f"{pre}.wv": H.T @ dV,
        f"{pre}.wo": dWo,
        f"{pre}.ln_g": dg,
        f"{pre}.ln_b": db,
    }
    return dH, grads


def gnn_forward(stack: GatStack, g: KnowledgeGraph, provider: EmbeddingProvider, context) -> np.ndarray:
    """Enriched node embeddings of width ``d``; intermediates are kept for backward."""
    if provider.dim != stack.d:
        raise ShapeError(f"provider dim {provider.dim} != stack width {stack.d}")
    H0 = init_node_inputs(g, provider, context)
    mask = g.attention_mask()
    H = H0
    layer_caches = []
    for layer in stack.layers:
        H, c = gat_layer_forward(layer, H, mask, return_cache=True)
        layer_caches.append(c)
    p = stack.params
    U = H @ p["gat.r1_w"] + p["gat.r1_b"]
    G = gelu(U)
    drop = None
    if stack.training and stack.dropout > 0:
        keep = 1.0 - stack.dropout
        drop = (stack._rng.random(G.shape) < keep) / keep
        G = G * drop
    out = G @ p["gat.r2_w"] + p["gat.r2_b"]
    stack._cache = (stack._cache_key(g), layer_caches, H, U, G, drop)
    return out


def gnn_backward(stack: GatStack, g: KnowledgeGraph, upstream_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of all trainable stack parameters given d(loss)/d(output)."""
    if stack._cache is None or stack._cache[0] != stack._cache_key(g):
        raise StaleCacheError("gnn_backward needs a fresh gnn_forward on the same graph and weights")
    _, layer_caches, H, U, G, drop = stack._cache
    p = stack.params
    dY = np.asarray(upstream_grad, dtype=np.float64)
    if dY.shape != (g.n_nodes, stack.d):
        raise ShapeError(f"upstream grad {dY.shape}, expected {(g.n_nodes, stack.d)}")
    grads = {"gat.r2_w": G.T @ dY, "gat.r2_b": dY.sum(axis=0)}
    dG = dY @ p["gat.r2_w"].T
    if drop is not None:
        dG = dG * drop
    dU = dG * gelu_grad(U)
    grads["gat.r1_w"] = H.T @ dU
    grads["gat.r1_b"] = dU.sum(axis=0)
    dH = dU @ p["gat.r1_w"].T
    for layer, c in zip(reversed(stack.layers), reversed(layer_caches)):
        dH, lg = gat_layer_backward(layer, c, dH)
        grads.update(lg)
    return grads
