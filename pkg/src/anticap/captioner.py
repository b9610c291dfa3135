"""Frozen transformer decoder driven by a learned concept prompt.

Prompt layout (one row per position)::

    words(L) | [SEP] | enriched concepts | [SEP] | projected ROIs

Word slot ``t`` attends causally to word slots ``<= t`` and to every prompt
position; prompt positions attend only among themselves. Slot 0 always holds
``[MASK]`` and slot ``t > 0`` holds caption token ``t - 1``, so the logits at
slot ``t`` predict token ``t`` without seeing it.

Only the graph stack trains. The decoder's parameters are frozen and their
digest is checked after every optimizer step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import params_digest
from .concepts import EmbeddingProvider, Sample, context_feature, project_rois
from .gat import GatStack, gnn_backward, gnn_forward
from .kg import KnowledgeGraph
from .numerics import (
    ParamStore,
    ShapeError,
    as_tensor,
    cross_entropy_loss,
    gelu,
    gelu_grad,
    layer_norm,
    layer_norm_backward,
    optimizer_step,
    softmax_backward,
    softmax_rows,
    xavier_uniform,
)

log = logging.getLogger(__name__)

SPECIALS = ("[PAD]", "[MASK]", "[SEP]", "[STOP]", "[UNK]")
PAD, MASK, SEP, STOP, UNK = range(len(SPECIALS))
SEG_WORD, SEG_SEP, SEG_CONCEPT, SEG_ROI = range(4)


class Vocab:
    def __init__(self, words=()):
        self.tokens = list(SPECIALS)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        for w in words:
            self.add(w)

    @classmethod
    def build(cls, texts) -> "Vocab":
        words = sorted({w for t in texts for w in tokenize(t)})
        return cls(words)

    def add(self, word: str) -> int:
        if word not in self.index:
            self.index[word] = len(self.tokens)
            self.tokens.append(word)
        return self.index[word]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w, UNK) for w in tokenize(text)]

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            if i == STOP:
                break
            if i >= len(SPECIALS):
                out.append(self.tokens[i])
        return " ".join(out)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class FrozenDecoder:
    """Small post-norm transformer standing in for a pretrained captioner.

    Weights are drawn from ``seed`` and flagged frozen. ``head_scale``
    stretches the output projection so a well-steered hidden state can reach
    confident predictions.
    """

    def __init__(
        self,
        vocab: Vocab,
        d: int = 32,
        feature_dim: int = 64,
        L: int = 12,
        n_blocks: int = 2,
        n_heads: int = 4,
        d_ff: int | None = None,
        max_positions: int = 256,
        seed: int = 0,
        head_scale: float = 4.0,
    ):
        if d % n_heads:
            raise ValueError("d must be divisible by n_heads")
        self.vocab = vocab
        self.d, self.feature_dim, self.L = d, feature_dim, L
        self.n_blocks, self.n_heads = n_blocks, n_heads
        self.d_ff = d_ff or 2 * d
        self.max_positions = max_positions
        self.seed, self.head_scale = seed, head_scale
        rng = np.random.default_rng(seed)
        p = ParamStore()
        V = len(vocab)
        p.add("dec.tok_emb", rng.standard_normal((V, d)))
        p.add("dec.pos_emb", rng.standard_normal((max_positions, d)))
        p.add("dec.seg_emb", rng.standard_normal((4, d)))
        p.add("dec.emb_ln_g", np.ones(d))
        p.add("dec.emb_ln_b", np.zeros(d))
        p.add("dec.roi_proj", xavier_uniform(rng, feature_dim, d))
        p.add("dec.roi_bias", np.zeros(d))
        for b in range(n_blocks):
            for key in ("wq", "wk", "wv", "wo"):
                p.add(f"dec.b{b}.{key}", xavier_uniform(rng, d, d))
                p.add(f"dec.b{b}.b{key[1]}", np.zeros(d))
            p.add(f"dec.b{b}.ln1_g", np.ones(d))
            p.add(f"dec.b{b}.ln1_b", np.zeros(d))
            p.add(f"dec.b{b}.w1", xavier_uniform(rng, d, self.d_ff))
            p.add(f"dec.b{b}.b1", np.zeros(self.d_ff))
            p.add(f"dec.b{b}.w2", xavier_uniform(rng, self.d_ff, d))
            p.add(f"dec.b{b}.b2", np.zeros(d))
            p.add(f"dec.b{b}.ln2_g", np.ones(d))
            p.add(f"dec.b{b}.ln2_b", np.zeros(d))
        p.add("dec.head_w", head_scale * xavier_uniform(rng, d, V))
        p.add("dec.head_b", np.zeros(V))
        p.freeze()
        self.params = p

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[f"dec.{name}"]

    def digest(self) -> str:
        return params_digest(self.params)

    def config(self) -> dict:
        return {
            "d": self.d,
            "feature_dim": self.feature_dim,
            "L": self.L,
            "n_blocks": self.n_blocks,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "max_positions": self.max_positions,
            "seed": self.seed,
            "head_scale": self.head_scale,
            "vocab": self.vocab.tokens[len(SPECIALS):],
        }

    @classmethod
    def from_params(cls, params: ParamStore, config: dict) -> "FrozenDecoder":
        cfg = dict(config)
        vocab = Vocab(cfg.pop("vocab"))
        dec = cls(vocab, **cfg)
        for name in dec.params.names():
            if params[name].shape != dec.params[name].shape:
                raise ShapeError(f"checkpoint entry {name} has shape {params[name].shape}")
            dec.params.entries[name].value = params[name].copy()
        dec.params.freeze()
        return dec

    def project(self, sample: Sample) -> np.ndarray:
        return project_rois(sample, self["roi_proj"], self["roi_bias"])


@dataclass
class PromptSequence:
    token_embeddings: np.ndarray
    token_ids: np.ndarray
    segment_ids: np.ndarray
    positions: np.ndarray
    attention_mask: np.ndarray
    word_positions: np.ndarray
    concept_slice: slice
    roi_slice: slice

    def __len__(self) -> int:
        return self.token_embeddings.shape[0]


def layout_mask(L: int, n_concepts: int, n_rois: int) -> np.ndarray:
    S = L + 2 + n_concepts + n_rois
    mask = np.zeros((S, S), dtype=bool)
    mask[:L, :L] = np.tril(np.ones((L, L), dtype=bool))
    mask[:, L:] = True
    return mask


def assemble_prompt(word_ids, enriched, rois, dec: FrozenDecoder, positions=None) -> PromptSequence:
    word_ids = np.asarray(word_ids, dtype=np.int64)
    L = len(word_ids)
    if L != dec.L:
        raise ShapeError(f"expected {dec.L} word slots, got {L}")
    enriched = as_tensor(enriched).reshape(-1, dec.d)
    rois = as_tensor(rois)
    if rois.ndim != 2 or rois.shape[1] != dec.d:
        raise ShapeError(f"ROI rows {rois.shape} do not match decoder width {dec.d}")
    n_c, n_r = enriched.shape[0], rois.shape[0]
    S = L + 2 + n_c + n_r
    if positions is None:
        positions = np.arange(S)
    positions = np.asarray(positions, dtype=np.int64)
    if S > dec.max_positions or positions.shape != (S,):
        raise ShapeError(f"prompt of length {S} exceeds decoder capacity {dec.max_positions}")
    c0, r0 = L + 1, L + 2 + n_c
    ids = np.full(S, -1, dtype=np.int64)
    ids[:L] = word_ids
    ids[L] = ids[r0 - 1] = SEP
    seg = np.empty(S, dtype=np.int64)
    seg[:L] = SEG_WORD
    seg[L] = seg[r0 - 1] = SEG_SEP
    seg[c0:r0 - 1] = SEG_CONCEPT
    seg[r0:] = SEG_ROI
    rows = np.empty((S, dec.d), dtype=np.result_type(enriched, rois))
    tok = dec["tok_emb"]
    rows[:L] = tok[word_ids]
    rows[L] = rows[r0 - 1] = tok[SEP]
    rows[c0:r0 - 1] = enriched
    rows[r0:] = rois
    emb = rows + dec["pos_emb"][positions] + dec["seg_emb"][seg]
    return PromptSequence(
        token_embeddings=emb,
        token_ids=ids,
        segment_ids=seg,
        positions=positions,
        attention_mask=layout_mask(L, n_c, n_r),
        word_positions=np.arange(L),
        concept_slice=slice(c0, r0 - 1),
        roi_slice=slice(r0, S),
    )


def _split_heads(X: np.ndarray, h: int) -> np.ndarray:
    S, d = X.shape
    return X.reshape(S, h, d // h).transpose(1, 0, 2)


def _merge_heads(X: np.ndarray) -> np.ndarray:
    h, S, dh = X.shape
    return X.transpose(1, 0, 2).reshape(S, h * dh)


def decoder_forward(dec: FrozenDecoder, p: PromptSequence, return_cache: bool = False):
    """Logits (L x V) at the word slots."""
    h = dec.n_heads
    scale = math.sqrt(dec.d // h)
    X, emb_cache = layer_norm(p.token_embeddings, dec["emb_ln_g"], dec["emb_ln_b"])
    blocks = []
    for b in range(dec.n_blocks):
        w = lambda k: dec[f"b{b}.{k}"]  # noqa: E731
        Q = _split_heads(X @ w("wq") + w("bq"), h)
        K = _split_heads(X @ w("wk") + w("bk"), h)
        Vh = _split_heads(X @ w("wv") + w("bv"), h)
        P = softmax_rows(Q @ K.transpose(0, 2, 1), scale=scale, mask=p.attention_mask)
        O = _merge_heads(P @ Vh)
        Y, ln1 = layer_norm(X + O @ w("wo") + w("bo"), w("ln1_g"), w("ln1_b"))
        U = Y @ w("w1") + w("b1")
        G = gelu(U)
        Xn, ln2 = layer_norm(Y + G @ w("w2") + w("b2"), w("ln2_g"), w("ln2_b"))
        blocks.append((X, Q, K, Vh, P, O, Y, ln1, U, G, ln2))
        X = Xn
    Hw = X[p.word_positions]
    logits = Hw @ dec["head_w"] + dec["head_b"]
    if return_cache:
        return logits, (p, emb_cache, blocks, Hw)
    return logits


def decoder_backward(dec: FrozenDecoder, cache, dlogits, param_grads: bool = False):
    """Gradient w.r.t. the prompt rows and, optionally, every decoder parameter."""
    p, emb_cache, blocks, Hw = cache
    h = dec.n_heads
    scale = math.sqrt(dec.d // h)
    grads = {}
    if param_grads:
        grads["dec.head_w"] = Hw.T @ dlogits
        grads["dec.head_b"] = dlogits.sum(axis=0)
    dX = np.zeros_like(p.token_embeddings)
    dX[p.word_positions] = dlogits @ dec["head_w"].T
    for b in reversed(range(dec.n_blocks)):
        X, Q, K, Vh, P, O, Y, ln1, U, G, ln2 = blocks[b]
        w = lambda k: dec[f"b{b}.{k}"]  # noqa: E731
        dS2, g2g, g2b = layer_norm_backward(dX, ln2)
        dU = (dS2 @ w("w2").T) * gelu_grad(U)
        dY = dS2 + dU @ w("w1").T
        dS1, g1g, g1b = layer_norm_backward(dY, ln1)
        dOh = _split_heads(dS1 @ w("wo").T, h)
        dP = dOh @ Vh.transpose(0, 2, 1)
        dVh = P.transpose(0, 2, 1) @ dOh
        dsc = softmax_backward(P, dP) / scale
        dQ = _merge_heads(dsc @ K)
        dK = _merge_heads(dsc.transpose(0, 2, 1) @ Q)
        dV = _merge_heads(dVh)
        dX = dS1 + dQ @ w("wq").T + dK @ w("wk").T + dV @ w("wv").T
        if param_grads:
            pre = f"dec.b{b}."
            grads.update({
                pre + "ln2_g": g2g, pre + "ln2_b": g2b,
                pre + "w2": G.T @ dS2, pre + "b2": dS2.sum(axis=0),
                pre + "w1": Y.T @ dU, pre + "b1": dU.sum(axis=0),
                pre + "ln1_g": g1g, pre + "ln1_b": g1b,
                pre + "wo": O.T @ dS1, pre + "bo": dS1.sum(axis=0),
                pre + "wq": X.T @ dQ, pre + "bq": dQ.sum(axis=0),
                pre + "wk": X.T @ dK, pre + "bk": dK.sum(axis=0),
                pre + "wv": X.T @ dV, pre + "bv": dV.sum(axis=0),
            })
    dE, geg, geb = layer_norm_backward(dX, emb_cache)
    if param_grads:
        grads["dec.emb_ln_g"], grads["dec.emb_ln_b"] = geg, geb
        pos = np.zeros_like(dec["pos_emb"])
        np.add.at(pos, p.positions, dE)
        seg = np.zeros_like(dec["seg_emb"])
        np.add.at(seg, p.segment_ids, dE)
        tok = np.zeros_like(dec["tok_emb"])
        has_id = p.token_ids >= 0
        np.add.at(tok, p.token_ids[has_id], dE[has_id])
        grads.update({"dec.pos_emb": pos, "dec.seg_emb": seg, "dec.tok_emb": tok})
    return dE, grads


def teacher_forcing(vocab: Vocab, caption: str, L: int):
    """``(input_ids, target_ids, loss_mask)`` for one caption."""
    tokens = vocab.encode(caption)
    if len(tokens) > L - 1:
        log.warning("caption truncated to %d tokens: %r", L - 1, caption)
        tokens = tokens[: L - 1]
    tokens = tokens + [STOP]
    targets = np.full(L, PAD, dtype=np.int64)
    targets[: len(tokens)] = tokens
    inputs = np.full(L, PAD, dtype=np.int64)
    inputs[0] = MASK
    inputs[1:] = targets[:-1]
    inputs[len(tokens):] = PAD
    return inputs, targets, targets != PAD


def prompt_rows(dec: FrozenDecoder, stack: GatStack, sample: Sample, g: KnowledgeGraph, provider: EmbeddingProvider):
    """Projected ROIs and the enriched concept rows for one sample."""
    rois = dec.project(sample)
    enriched = gnn_forward(stack, g, provider, context_feature(rois))
    return enriched, rois


def sample_loss(dec, stack, sample, g, provider, backward: bool = True):
    """Cross-entropy of one captioned sample, with GAT gradients when ``backward``."""
    if sample.caption is None:
        raise ValueError(f"sample {sample.id} has no caption to train on")
    enriched, rois = prompt_rows(dec, stack, sample, g, provider)
    inputs, targets, mask = teacher_forcing(dec.vocab, sample.caption, dec.L)
    prompt = assemble_prompt(inputs, enriched, rois, dec)
    logits, cache = decoder_forward(dec, prompt, return_cache=True)
    loss, dlogits = cross_entropy_loss(logits, targets, mask)
    if not backward:
        return loss, None
    dE, _ = decoder_backward(dec, cache, dlogits)
    return loss, gnn_backward(stack, g, dE[prompt.concept_slice])


def train_step(dec, stack, batch, lr, provider, optimizer: str = "adam") -> float:
    """One optimizer step on the graph stack over ``batch`` of ``(sample, graph)``."""
    before = dec.digest()
    stack.params.zero_grad()
    stack.training = True
    total = 0.0
    try:
        for sample, g in batch:
            loss, grads = sample_loss(dec, stack, sample, g, provider)
            stack.params.accumulate(grads, 1.0 / len(batch))
            total += loss
    finally:
        stack.training = False
    optimizer_step(stack.params, lr, mode=optimizer)
    if dec.digest() != before:
        raise AssertionError("frozen decoder parameters changed during a training step")
    return total / len(batch)


_NOT_EMITTED = np.array([PAD, MASK, SEP, UNK])


def _pick(logits_row: np.ndarray) -> int:
    row = logits_row.copy()
    row[_NOT_EMITTED] = -np.inf
    return int(np.argmax(row))


def generate(dec, stack, sample, g, provider, L: int | None = None, mode: str = "iterative") -> str:
    """Greedy caption from ``L`` masked word slots.

    ``iterative`` decodes one slot per pass, feeding each choice forward;
    ``one-shot`` fills every slot from a single all-mask pass.
    """
    L = L or dec.L
    if L != dec.L:
        raise ShapeError(f"decoder was built for L={dec.L}")
    enriched, rois = prompt_rows(dec, stack, sample, g, provider)
    ids = np.full(L, MASK, dtype=np.int64)
    out: list[int] = []
    if mode == "one-shot":
        logits = decoder_forward(dec, assemble_prompt(ids, enriched, rois, dec))
        for t in range(L):
            tok = _pick(logits[t])
            if tok == STOP:
                break
            out.append(tok)
    elif mode == "iterative":
        for t in range(L):
            logits = decoder_forward(dec, assemble_prompt(ids, enriched, rois, dec))
            tok = _pick(logits[t])
            if tok == STOP:
                break
            out.append(tok)
            if t + 1 < L:
                ids[t + 1] = tok
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    text = dec.vocab.decode(out)
    if not text:
        log.warning("empty caption generated for sample %s", sample.id)
    return text


_FIXED_IN_PRETRAINING = ("dec.roi_proj", "dec.roi_bias")


def pretrain_decoder(dec: FrozenDecoder, examples, concept_rows, epochs: int,
                     lr: float = 1e-3, batch: int = 8, seed: int = 0, progress=None) -> list[float]:
    """Fit every decoder weight on ``(sample, tags)`` pairs, then freeze.

    ``concept_rows(dec, sample, tags)`` supplies the concept segment; it is
    treated as a constant input. This stands in for a captioner pretrained
    elsewhere; afterwards the weights never change.
    """
    store = dec.params
    # the ROI projection stays at its seeded value so graph construction never depends on pretraining
    for name, p in store.entries.items():
        p.trainable = name not in _FIXED_IN_PRETRAINING
    store.zero_grad()
    rng = np.random.default_rng(seed)
    losses = []
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(examples))
            total = 0.0
            for start in range(0, len(examples), batch):
                chunk = [examples[i] for i in order[start:start + batch]]
                store.zero_grad()
                for sample, tags in chunk:
                    rois = dec.project(sample)
                    inputs, targets, mask = teacher_forcing(dec.vocab, sample.caption, dec.L)
                    prompt = assemble_prompt(inputs, concept_rows(dec, sample, tags), rois, dec)
                    logits, cache = decoder_forward(dec, prompt, return_cache=True)
                    loss, dlogits = cross_entropy_loss(logits, targets, mask)
                    _, grads = decoder_backward(dec, cache, dlogits, param_grads=True)
                    store.accumulate(grads, 1.0 / len(chunk))
                    total += float(loss)
                optimizer_step(store, lr)
            losses.append(total / len(examples))
            if progress:
                progress(epoch, losses[-1])
    finally:
        store.freeze()
        store._m.clear()
        store._v.clear()
        store.step_count = 0
    return losses
