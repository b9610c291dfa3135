"""End-to-end stages shared by the command line and the acceptance tests."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .captioner import FrozenDecoder, Vocab, generate, pretrain_decoder, sample_loss, train_step
from .checkpoint import load_checkpoint, save_checkpoint
from .conceptnet import ConceptNetIndex, load_edges
from .concepts import EmbeddingProvider, Sample, bag_of_words_vector, context_feature, cosine, embed_many, read_jsonl
from .config import PipelineConfig
from .eval import STOPWORDS, Entry, cider, corpus_bleu, self_retrieval
from .gat import GatStack
from .kg import KnowledgeGraph, RelevanceScorer, build_graph, candidate_pool, select_forecasted

log = logging.getLogger(__name__)

METRIC_FIELDS = ("b1", "b4", "cider", "r@1", "r@5", "r@10", "exact")


class MissingInputError(RuntimeError):
    """A command's prerequisite file is absent."""


@dataclass
class Workspace:
    """Everything that stays fixed across train, caption and evaluate for one config."""

    cfg: PipelineConfig
    manifest: dict
    decoder: FrozenDecoder
    provider: EmbeddingProvider
    scorer: RelevanceScorer
    index: ConceptNetIndex

    @property
    def retrieval_provider(self) -> EmbeddingProvider:
        return EmbeddingProvider(self.cfg.d, seed=self.manifest.get("retrieval_seed", self.cfg.corpus_seed + 7919))


def _require(path, hint: str):
    if not path.exists():
        raise MissingInputError(f"{path} not found; {hint}")
    return path


def load_manifest(cfg: PipelineConfig) -> dict:
    path = _require(cfg.path("corpus") / "manifest.json", "run `anticap make-corpus` first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_split(cfg: PipelineConfig, split: str, manifest: dict | None = None) -> list[Sample]:
    manifest = manifest or load_manifest(cfg)
    if split not in manifest["splits"]:
        raise MissingInputError(f"corpus has no split {split!r}")
    path = _require(cfg.path("corpus") / manifest["splits"][split], "the corpus directory is incomplete")
    return read_jsonl(path, cfg.concepts_per_image)


def make_decoder(cfg: PipelineConfig, manifest: dict) -> FrozenDecoder:
    return FrozenDecoder(
        Vocab(manifest["vocab"]),
        d=cfg.d,
        feature_dim=cfg.feature_dim,
        L=cfg.L,
        n_blocks=cfg.decoder_blocks,
        n_heads=cfg.decoder_heads,
        max_positions=cfg.max_positions,
        seed=cfg.decoder_seed,
        head_scale=cfg.decoder_head_scale,
    )


def make_scorer(cfg: PipelineConfig) -> RelevanceScorer:
    if cfg.scorer_mode == "linear-head":
        return RelevanceScorer.linear_head(cfg.d, seed=cfg.init_seed)
    return RelevanceScorer("cosine")


def open_workspace(cfg: PipelineConfig, decoder: FrozenDecoder | None = None) -> Workspace:
    manifest = load_manifest(cfg)
    edge_path = _require(cfg.path("edge_dump"), "the edge dump is written by `anticap make-corpus`")
    index = load_edges(edge_path, cfg.two_hop_mode)
    return Workspace(
        cfg,
        manifest,
        decoder or make_decoder(cfg, manifest),
        EmbeddingProvider(cfg.d, seed=cfg.embed_seed),
        make_scorer(cfg),
        index,
    )


def graph_for(ws: Workspace, sample: Sample, M: int | None = None) -> KnowledgeGraph:
    M = ws.cfg.M if M is None else M
    ctx = context_feature(ws.decoder.project(sample))
    forecasted = select_forecasted(candidate_pool(sample, ws.index), ws.scorer, ctx, ws.provider, M)
    return build_graph(sample, forecasted, ws.index)


def graphs_for(ws: Workspace, samples, M: int | None = None) -> list[KnowledgeGraph]:
    return [graph_for(ws, s, M) for s in samples]


def pretrain_backbone(ws: Workspace, samples, progress=None) -> list[float]:
    """Fit the decoder on the pretraining split, then freeze it.

    The concept segment holds raw embeddings of every node of a graph built
    with ``pretrain_m`` forecasted concepts, so the backbone learns to pick
    the useful forecasted node out of the distractors. Nothing here depends
    on ``M``, which keeps one backbone valid for a whole M sweep.
    """
    cfg = ws.cfg
    examples = [(s, graph_for(ws, s, cfg.pretrain_m).concepts) for s in samples]

    def concept_rows(dec, sample, names):
        return embed_many(ws.provider, names)

    return pretrain_decoder(ws.decoder, examples, concept_rows, cfg.pretrain_epochs, cfg.pretrain_lr,
                            cfg.batch, seed=cfg.decoder_seed + 17, progress=progress)


def train_model(ws: Workspace, pairs, epochs: int | None = None, progress=None):
    """Train a fresh graph stack on ``(sample, graph)`` pairs.

    Returns ``(stack, epoch_losses)``. Batches are drawn from a seeded shuffle;
    training stops early once an epoch's mean loss drops below ``target_loss``.
    """
    cfg = ws.cfg
    epochs = cfg.epochs if epochs is None else epochs
    stack = GatStack(cfg.d, seed=cfg.init_seed, dropout=cfg.gat_dropout)
    rng = np.random.default_rng(cfg.init_seed + 1009)
    losses = []
    n = len(pairs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            batch = [pairs[i] for i in order[start:start + cfg.batch]]
            total += train_step(ws.decoder, stack, batch, cfg.lr, ws.provider, cfg.optimizer) * len(batch)
        losses.append(total / n)
        if progress:
            progress(epoch, losses[-1])
        if cfg.target_loss > 0 and losses[-1] < cfg.target_loss:
            break
    return stack, losses


def mean_loss(ws: Workspace, stack: GatStack, pairs) -> float:
    return float(np.mean([sample_loss(ws.decoder, stack, s, g, ws.provider, backward=False)[0] for s, g in pairs]))


def caption_all(ws: Workspace, stack: GatStack, pairs) -> list[tuple[str, str]]:
    return [(s.id, generate(ws.decoder, stack, s, g, ws.provider, mode=ws.cfg.decode_mode)) for s, g in pairs]


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def score_captions(ws: Workspace, samples, captions) -> dict[str, float]:
    """Metric values keyed by :data:`METRIC_FIELDS`."""
    by_id = dict(captions)
    entries = [Entry(s.id, by_id.get(s.id, ""), [s.caption], s.target) for s in samples]
    cands = [e.candidate for e in entries]
    refs = [e.references for e in entries]
    rp = ws.retrieval_provider

    def scorer(candidate, target):
        words = [w for w in candidate.lower().split() if w not in STOPWORDS]
        return cosine(bag_of_words_vector(rp, words), target)

    recalls = self_retrieval(entries, scorer, (1, 5, 10))
    return {
        "b1": corpus_bleu(cands, refs, 1),
        "b4": corpus_bleu(cands, refs, 4),
        "cider": cider(entries) if len(entries) >= 2 else 0.0,
        "r@1": recalls[1],
        "r@5": recalls[5],
        "r@10": recalls[10],
        "exact": float(np.mean([_normalize(c) == _normalize(s.caption) for c, s in zip(cands, samples)])),
    }


def save_model(path, ws: Workspace, stack: GatStack, extra: dict | None = None) -> None:
    config = {"pipeline": ws.cfg.as_dict(), "decoder": ws.decoder.config()}
    if extra:
        config.update(extra)
    save_checkpoint(path, {"decoder": ws.decoder.params, "gat": stack.params}, config)


def load_model(path, cfg: PipelineConfig):
    """Returns ``(workspace, stack, header)`` rebuilt from a checkpoint."""
    _require(path, "run `anticap train` first")
    stores, header = load_checkpoint(path)
    dec = FrozenDecoder.from_params(stores["decoder"], header["config"]["decoder"])
    ws = open_workspace(cfg, decoder=dec)
    stack = GatStack(cfg.d, seed=cfg.init_seed, dropout=cfg.gat_dropout)
    for name in stack.params.names():
        stack.params.entries[name].value = stores["gat"][name].copy()
    return ws, stack, header
