"""Forecasted-concept selection and knowledge-graph assembly."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conceptnet import ConceptNetIndex, normalize_concept
from .concepts import EmbeddingProvider, Sample, embed_concept
from .numerics import ShapeError, softmax_rows, xavier_uniform

log = logging.getLogger(__name__)

FORECASTED = -1


@dataclass
class KnowledgeGraph:
    """Detected nodes (grouped by image, in temporal order) followed by forecasted nodes.

    ``images[i]`` is the source image of node ``i`` or ``FORECASTED``.
    ``edges`` holds unordered pairs stored as ``(i, j)`` with ``i < j``.
    """

    concepts: list[str]
    images: list[int]
    edges: set[tuple[int, int]] = field(default_factory=set)

    @property
    def n_nodes(self) -> int:
        return len(self.concepts)

    @property
    def n_detected(self) -> int:
        return sum(1 for i in self.images if i != FORECASTED)

    @property
    def forecasted(self) -> list[str]:
        return [c for c, i in zip(self.concepts, self.images) if i == FORECASTED]

    def is_forecasted(self, i: int) -> bool:
        return self.images[i] == FORECASTED

    def neighbor_lists(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n_nodes)]
        for i, j in sorted(self.edges):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def attention_mask(self) -> np.ndarray:
        """Boolean n x n matrix: row i admits its neighbors and itself."""
        m = np.eye(self.n_nodes, dtype=bool)
        for i, j in self.edges:
            m[i, j] = m[j, i] = True
        return m

    def permuted(self, perm) -> "KnowledgeGraph":
        """Graph whose new node ``a`` is old node ``perm[a]``."""
        inv = {old: new for new, old in enumerate(perm)}
        edges = {tuple(sorted((inv[i], inv[j]))) for i, j in self.edges}
        return KnowledgeGraph(
            [self.concepts[p] for p in perm], [self.images[p] for p in perm], edges
        )


@dataclass
class RelevanceScorer:
    """Scores how related a concept is to the image context, in [0, 1].

    ``cosine`` rescales cosine similarity; ``linear-head`` runs a frozen
    tanh encoder over ``[context; concept]`` and a 2-way softmax head.
    """

    mode: str = "cosine"
    enc: np.ndarray | None = None
    head: np.ndarray | None = None

    @classmethod
    def linear_head(cls, dim: int, seed: int = 0, hidden: int | None = None) -> "RelevanceScorer":
        rng = np.random.default_rng(seed)
        hidden = hidden or dim
        return cls("linear-head", xavier_uniform(rng, 2 * dim, hidden), xavier_uniform(rng, hidden, 2))

    def probabilities(self, context, concept_emb) -> np.ndarray:
        if self.enc is None or self.head is None:
            raise ValueError("linear-head scorer has no weights")
        x = np.concatenate([context, concept_emb])
        logits = np.tanh(x @ self.enc) @ self.head
        return softmax_rows(logits[None, :])[0]


def relevance_score(s: RelevanceScorer, context, concept_emb) -> float:
    context = np.asarray(context, dtype=np.float64)
    concept_emb = np.asarray(concept_emb, dtype=np.float64)
    if context.shape != concept_emb.shape:
        raise ShapeError(f"context {context.shape} vs concept {concept_emb.shape}")
    if s.mode == "cosine":
        na, nb = np.linalg.norm(context), np.linalg.norm(concept_emb)
        if na == 0 or nb == 0:
            log.warning("zero-norm vector in cosine relevance; returning neutral 0.5")
            return 0.5
        cos = float(np.dot(context, concept_emb) / (na * nb))
        return min(1.0, max(0.0, 0.5 * (1.0 + cos)))
    if s.mode == "linear-head":
        return float(s.probabilities(context, concept_emb)[1])
    raise ValueError(f"unknown scorer mode {s.mode!r}")


def candidate_pool(sample: Sample, index: ConceptNetIndex) -> list[str]:
    """Union of 2-hop neighborhoods of all detected concepts, minus detected strings."""
    detected = {normalize_concept(c) for imgs in sample.detected for c in imgs}
    pool = set()
    for c in detected:
        pool |= index.two_hop(c)
    return sorted(pool - detected)


def select_forecasted(candidates, s: RelevanceScorer, context, provider: EmbeddingProvider, M: int) -> list[str]:
    """Top-``M`` candidates by relevance; ties go to the lexicographically smaller concept."""
    if M < 0:
        raise ValueError("M must be non-negative")
    cands = sorted({normalize_concept(c) for c in candidates})
    if M == 0:
        return []
    if len(cands) < M:
        log.warning("only %d forecasted candidates for M=%d; graph will shrink", len(cands), M)
    scored = [(-relevance_score(s, context, embed_concept(provider, c)), c) for c in cands]
    scored.sort()
    return [c for _, c in scored[:M]]


def build_graph(sample: Sample, forecasted, index: ConceptNetIndex) -> KnowledgeGraph:
    """Assemble nodes and relatedness edges.

    Detected-detected pairs are linked only within the same or adjacent images;
    copies of one concept in adjacent images are linked to each other.
    Pairs involving a forecasted node are linked whenever related.
    """
    concepts, images = [], []
    for i, cs in enumerate(sample.detected):
        for c in cs:
            concepts.append(normalize_concept(c))
            images.append(i)
    detected = set(concepts)
    for c in forecasted:
        c = normalize_concept(c)
        if c in detected:
            raise ValueError(f"forecasted concept {c!r} is also detected")
        concepts.append(c)
        images.append(FORECASTED)

    edges = set()
    n = len(concepts)
    for a in range(n):
        for b in range(a + 1, n):
            ia, ib = images[a], images[b]
            both_detected = ia != FORECASTED and ib != FORECASTED
            if both_detected and abs(ia - ib) > 1:
                continue
            if index.related(concepts[a], concepts[b]) or (both_detected and concepts[a] == concepts[b]):
                edges.add((a, b))
    return KnowledgeGraph(concepts, images, edges)


def export_dot(g: KnowledgeGraph, name: str = "kg") -> str:
    """Graphviz text; detected nodes are blue boxes, forecasted nodes brown ellipses."""
    lines = [f'graph "{name}" {{']
    for i, (c, img) in enumerate(zip(g.concepts, g.images)):
        if img == FORECASTED:
            attrs = f'label="{c}", kind="forecasted", shape=ellipse, style=filled, fillcolor="#a0522d"'
        else:
            attrs = f'label="{c}", kind="detected", image={img}, shape=box, style=filled, fillcolor="#6495ed"'
        lines.append(f"  n{i} [{attrs}];")
    for i, j in sorted(g.edges):
        lines.append(f"  n{i} -- n{j};")
    lines.append("}")
    return "\n".join(lines) + "\n"
