# %% [markdown]
# # Graph attention with hand-written gradients
#
# The attention stack runs on plain numpy arrays. Every backward pass is
# written out by hand, so we check it against central differences.

# %%
import numpy as np

from anticap.concepts import EmbeddingProvider
from anticap.gat import GatStack, gnn_backward, gnn_forward
from anticap.kg import FORECASTED, KnowledgeGraph
from anticap.numerics import grad_check

rng = np.random.default_rng(0)
provider = EmbeddingProvider(dim=6, seed=0)
g = KnowledgeGraph(
    ["dog", "ball", "grass", "park", "fetch"],
    [0, 0, 1, 1, FORECASTED],
    {(0, 1), (1, 2), (2, 3), (1, 4)},
)
stack = GatStack(6, seed=1)
context = rng.standard_normal(6)

out = gnn_forward(stack, g, provider, context)
print("enriched rows:", out.shape)

# %% [markdown]
# Attention only mixes a node with its neighbours and itself. The mask is the
# adjacency matrix with ones on the diagonal.

# %%
print(g.attention_mask().astype(int))

# %% [markdown]
# Gradient check of a random linear readout through the whole stack.

# %%
W = rng.standard_normal(out.shape)
gnn_forward(stack, g, provider, context)
grads = gnn_backward(stack, g, W)
report = grad_check(lambda _: float(np.sum(gnn_forward(stack, g, provider, context) * W)), stack.params,
                    analytic=grads)
print(report)
