import math

import numpy as np
import pytest

from anticap.concepts import EmbeddingProvider
from anticap.gat import (
    GatStack,
    StaleCacheError,
    gat_layer_backward,
    gat_layer_forward,
    gnn_backward,
    gnn_forward,
    init_node_inputs,
)
from anticap.kg import FORECASTED, KnowledgeGraph
from anticap.numerics import ShapeError, grad_check


def random_graph(rng, n, p=0.3):
    edges = {(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p}
    images = [int(i) if i < n - 2 else FORECASTED for i in range(n)]
    return KnowledgeGraph([f"c{i}" for i in range(n)], images, edges)


def loop_oracle(H, wq, wk, wv, wo, gain, bias, nbrs, eps=1e-5):
    """Node-by-node evaluation of one attention layer with plain Python loops."""
    n, D = H.shape
    out = np.zeros_like(H)
    for i in range(n):
        sources = sorted(set(nbrs[i]) | {i})
        q = H[i] @ wq
        logits = [float(q @ (H[j] @ wk)) / math.sqrt(D) for j in sources]
        top = max(logits)
        weights = [math.exp(x - top) for x in logits]
        total = sum(weights)
        h = sum((w / total) * (H[j] @ wv) for w, j in zip(weights, sources))
        z = H[i] + h @ wo
        mu = sum(z) / D
        var = sum((x - mu) ** 2 for x in z) / D
        out[i] = [(x - mu) / math.sqrt(var + eps) * g + b for x, g, b in zip(z, gain, bias)]
    return out


@pytest.mark.parametrize("seed", range(50))
def test_layer_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    d = int(rng.integers(2, 6))
    stack = GatStack(d, seed=seed)
    layer = stack.layers[0]
    for key in ("ln_g", "ln_b"):
        stack.params[f"gat.l0.{key}"][:] = rng.standard_normal(2 * d)
    g = random_graph(rng, n)
    H = rng.standard_normal((n, 2 * d))
    got = gat_layer_forward(layer, H, g)
    want = loop_oracle(H, layer.wq, layer.wk, layer.wv, layer.wo, layer.ln_g, layer.ln_b, g.neighbor_lists())
    assert np.max(np.abs(got - want)) < 1e-10


def test_isolated_node_attends_to_itself(rng):
    stack = GatStack(3, seed=0)
    layer = stack.layers[0]
    H = rng.standard_normal((2, 6))
    _, cache = gat_layer_forward(layer, H, KnowledgeGraph(["a", "b"], [0, 0], set()), return_cache=True)
    np.testing.assert_allclose(cache[4], np.eye(2))


def test_mask_shape_checked(rng):
    layer = GatStack(3).layers[0]
    with pytest.raises(ShapeError):
        gat_layer_forward(layer, rng.standard_normal((3, 6)), np.eye(2, dtype=bool))


def test_init_inputs_concatenate_context():
    p = EmbeddingProvider(4, seed=0)
    g = KnowledgeGraph(["a", "b"], [0, FORECASTED])
    ctx = np.arange(4.0)
    H = init_node_inputs(g, p, ctx)
    assert H.shape == (2, 8)
    np.testing.assert_array_equal(H[:, 4:], [ctx, ctx])
    np.testing.assert_array_equal(H[1, :4], p("b"))
    with pytest.raises(ShapeError):
        init_node_inputs(g, p, np.zeros(3))


def test_output_width_and_permutation_equivariance(rng):
    d = 4
    p = EmbeddingProvider(d, seed=2)
    stack = GatStack(d, seed=1)
    g = random_graph(rng, 7, 0.4)
    ctx = rng.standard_normal(d)
    out = gnn_forward(stack, g, p, ctx)
    assert out.shape == (7, d)
    perm = rng.permutation(7)
    out_p = gnn_forward(stack, g.permuted(perm), p, ctx)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_layer_backward_grad_check(rng):
    d = 3
    stack = GatStack(d, seed=4)
    layer = stack.layers[0]
    g = random_graph(rng, 5, 0.5)
    H = rng.standard_normal((5, 2 * d))
    W = rng.standard_normal((5, 2 * d))
    out, cache = gat_layer_forward(layer, H, g, return_cache=True)
    _, grads = gat_layer_backward(layer, cache, W)
    names = [f"gat.l0.{k}" for k in ("wq", "wk", "wv", "wo", "ln_g", "ln_b")]
    report = grad_check(lambda s: np.sum(gat_layer_forward(layer, H, g) * W), stack.params,
                        analytic=grads, names=names)
    assert report.max_error < 1e-4, str(report)


def test_stack_backward_grad_check(rng):
    d = 3
    p = EmbeddingProvider(d, seed=0)
    stack = GatStack(d, seed=2)
    g = random_graph(rng, 5, 0.5)
    ctx = rng.standard_normal(d)
    W = rng.standard_normal((5, d))
    gnn_forward(stack, g, p, ctx)
    grads = gnn_backward(stack, g, W)
    report = grad_check(lambda s: np.sum(gnn_forward(stack, g, p, ctx) * W), stack.params, analytic=grads)
    assert set(report.errors) == set(stack.params.names())
    assert report.max_error < 1e-4, str(report)


def test_stale_cache_detected(rng):
    d = 3
    p = EmbeddingProvider(d)
    stack = GatStack(d)
    g1, g2 = random_graph(rng, 4), random_graph(rng, 4)
    with pytest.raises(StaleCacheError):
        gnn_backward(stack, g1, np.zeros((4, d)))
    gnn_forward(stack, g1, p, np.zeros(d))
    with pytest.raises(StaleCacheError):
        gnn_backward(stack, g2, np.zeros((4, d)))
    with pytest.raises(ShapeError):
        gnn_backward(stack, g1, np.zeros((3, d)))


def test_dropout_only_in_training(rng):
    d = 4
    p = EmbeddingProvider(d)
    stack = GatStack(d, dropout=0.5)
    g = random_graph(rng, 4)
    a = gnn_forward(stack, g, p, np.ones(d))
    b = gnn_forward(stack, g, p, np.ones(d))
    np.testing.assert_array_equal(a, b)
    stack.training = True
    c = gnn_forward(stack, g, p, np.ones(d))
    assert not np.allclose(a, c)
