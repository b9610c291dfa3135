# %% [markdown]
# # From detected concepts to a concept graph
#
# A small synthetic corpus is generated in a scratch directory. For one sample
# we expand the detected concepts two hops through the edge dump, keep the
# most relevant candidates, and build the undirected graph that the attention
# stack will read.

# %%
import tempfile
from pathlib import Path

from anticap import pipeline as P
from anticap.config import PipelineConfig
from anticap.kg import candidate_pool, export_dot
from anticap.synthetic import make_synthetic_corpus

root = Path(tempfile.mkdtemp(prefix="anticap-demo-"))
cfg = PipelineConfig(base_dir=root, corpus_size=8, test_size=4, pretrain_size=8)
manifest = make_synthetic_corpus(cfg)
print("splits:", manifest["sizes"])

# %% [markdown]
# Each sample holds `k` images with ten detected concepts apiece. The caption
# names something no image shows.

# %%
ws = P.open_workspace(cfg)
sample = P.load_split(cfg, "train", ws.manifest)[0]
for i, concepts in enumerate(sample.detected):
    print(f"image {i}:", ", ".join(concepts))
print("caption:", sample.caption)

# %% [markdown]
# The candidate pool is everything within two hops of a detected concept that
# is not itself detected. Relevance against the mean ROI feature picks `M`.

# %%
pool = candidate_pool(sample, ws.index)
print(len(pool), "candidates:", sorted(pool))
g = P.graph_for(ws, sample)
print("forecasted:", g.forecasted)
print(f"nodes={g.n_nodes} (detected {g.n_detected}), edges={len(g.edges)}")

# %%
print(export_dot(g, name=sample.id)[:600])
