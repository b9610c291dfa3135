"""Seeded synthetic corpus and matching edge dump.

Each sample follows one subject through a scene. Later images show a cue
object; the edge dump links that cue to a future concept only through a
private bridge concept, so the future word in the caption is absent from
every detected list and reachable only by the 2-hop expansion. Test samples
use cue words held out of training, so a model can name the future only by
reading the forecasted concepts.

Captions read ``the <subject> <verb> <future> at the <scene>``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .concepts import EmbeddingProvider, Sample, bag_of_words_vector, write_jsonl
from .conceptnet import ConceptNetIndex
from .config import PipelineConfig

SUBJECTS = ["man", "woman", "boy", "girl", "dog", "family", "friends", "couple"]

SCENES = {
    "park": ["tree", "grass", "bench", "path", "flower", "bird", "sky", "sun", "fence"],
    "beach": ["sand", "wave", "shell", "ocean", "towel", "umbrella", "seagull", "rock", "horizon"],
    "city": ["building", "street", "car", "sign", "window", "bus", "crowd", "light", "tower"],
    "kitchen": ["table", "plate", "cup", "oven", "spoon", "bowl", "counter", "fridge", "chair"],
    "mountain": ["trail", "cliff", "snow", "pine", "stone", "cloud", "peak", "lake", "valley"],
}

# future concept -> (verb, cue words); the last cue of each list is held out for the test split
FUTURES = {
    "cake": ("ate", ["candles", "balloons", "frosting", "ribbon"]),
    "fireworks": ("watched", ["festival", "rocket", "lantern", "bonfire"]),
    "dinner": ("cooked", ["groceries", "recipe", "apron", "pan"]),
    "fish": ("caught", ["rod", "bait", "net", "hook"]),
    "presents": ("opened", ["wrapping", "boxes", "bows", "card"]),
    "trophy": ("won", ["race", "medal", "referee", "scoreboard"]),
    "kite": ("flew", ["wind", "string", "tail", "spool"]),
    "campfire": ("lit", ["firewood", "matches", "tent", "logs"]),
}

# cue words seen only by the backbone pretraining split; about one per sample,
# so the backbone cannot get by on remembering which cue goes with which future
MIN_HINTS_PER_FUTURE = 6


def hints_per_future(cfg: PipelineConfig) -> int:
    return max(MIN_HINTS_PER_FUTURE, cfg.pretrain_size // len(FUTURES))


def hint_cues(future: str, n: int) -> list[str]:
    return [f"{future}_hint{j}" for j in range(n)]


def train_cues_per_future(cfg: PipelineConfig) -> int:
    return max(0, cfg.corpus_size // len(FUTURES))


def train_cues(future: str, n: int) -> list[str]:
    return [f"{future}_sign{j}" for j in range(n)]


EXTRA_NOUNS = [
    "noise", "weather", "shadow", "visitor", "smell", "memory", "color", "season", "echo", "breeze",
    "dust", "map", "photo", "ticket", "coin", "bottle", "hat", "bag", "clock", "key",
]


@dataclass
class SyntheticWorld:
    """Names and edges shared by every sample of one generated corpus."""

    extras_per_scene: int
    rois_per_image: list[int]
    scene_means: dict[str, np.ndarray]

    @staticmethod
    def appearance(concept: str, dim: int) -> np.ndarray:
        """Fixed visual signature of a concept."""
        return EmbeddingProvider(dim, seed=104729)(concept)

    @staticmethod
    def bridge(cue: str) -> str:
        return f"{cue}_context"

    def extras(self, scene: str) -> list[str]:
        out = []
        for j in range(self.extras_per_scene):
            noun = EXTRA_NOUNS[j % len(EXTRA_NOUNS)]
            suffix = "" if j < len(EXTRA_NOUNS) else f"_{j // len(EXTRA_NOUNS)}"
            out.append(f"{scene}_{noun}{suffix}")
        return out


def _split_rois(N: int, k: int) -> list[int]:
    base, rem = divmod(N, k)
    return [base + (1 if i < rem else 0) for i in range(k)]


def build_world(cfg: PipelineConfig, rng: np.random.Generator) -> SyntheticWorld:
    means = {s: 0.5 * rng.standard_normal(cfg.feature_dim) / np.sqrt(cfg.feature_dim) for s in SCENES}
    return SyntheticWorld(max(cfg.M - 2, 0), _split_rois(cfg.N, cfg.k), means)


def build_edges(world: SyntheticWorld, rng: np.random.Generator, n_hints: int = MIN_HINTS_PER_FUTURE,
                n_signs: int = 0) -> ConceptNetIndex:
    index = ConceptNetIndex()
    for scene, words in SCENES.items():
        for a in range(len(words)):
            for b in range(a + 1, len(words)):
                if rng.random() < 0.4:
                    index.add_edge(words[a], "RelatedTo", words[b], round(float(rng.uniform(0.5, 3.0)), 3))
        for extra in world.extras(scene):
            anchor = words[int(rng.integers(len(words)))]
            index.add_edge(anchor, "AtLocation", extra, round(float(rng.uniform(0.5, 3.0)), 3))
    for future, (_, cues) in FUTURES.items():
        for cue in cues + hint_cues(future, n_hints) + train_cues(future, n_signs):
            b = world.bridge(cue)
            index.add_edge(cue, "RelatedTo", b, 1.0)
            index.add_edge(b, "HasSubevent", future, 1.0)
    return index


def _story(caption_tokens: list[str], fillers: list[str], k: int) -> list[str]:
    """Context sentences whose token overlap with the caption grows with the image index."""
    distinct = list(dict.fromkeys(caption_tokens))
    sents = []
    for i in range(1, k + 1):
        shared = distinct[: min(i, len(distinct))]
        sents.append(" ".join(shared + fillers[: k - i]))
    return sents


def make_sample(sid: str, cfg: PipelineConfig, world: SyntheticWorld, rng, cue_pool: str,
                retrieval: EmbeddingProvider) -> Sample:
    if cfg.concepts_per_image < 3:
        raise ValueError("synthetic samples need at least 3 concepts per image")
    subject = SUBJECTS[int(rng.integers(len(SUBJECTS)))]
    scene = list(SCENES)[int(rng.integers(len(SCENES)))]
    future = list(FUTURES)[int(rng.integers(len(FUTURES)))]
    verb, cues = FUTURES[future]
    if cue_pool == "test":
        cue = cues[-1]
    elif cue_pool == "pretrain":
        n = hints_per_future(cfg)
        cue = hint_cues(future, n)[int(rng.integers(n))]
    else:
        pool = cues[:-1] + train_cues(future, train_cues_per_future(cfg))
        cue = pool[int(rng.integers(len(pool)))]
    n_scene = cfg.concepts_per_image - 1
    scene_words = SCENES[scene][:n_scene]
    scene_words += [f"{scene}_item{j}" for j in range(len(scene_words), n_scene)]
    chosen = [scene_words[i] for i in rng.permutation(n_scene)]
    detected, images = [], []
    for i in range(cfg.k):
        if i >= cfg.k // 2:
            words = [subject, cue] + chosen[: n_scene - 1]
        else:
            words = [subject] + chosen
        words = [words[j] for j in rng.permutation(len(words))]
        detected.append(words)
        n = world.rois_per_image[i]
        # ROI 0 shows the subject, the rest show other detected objects
        shown = [subject] + [w for w in words if w != subject]
        feats = np.stack([world.appearance(shown[r % len(shown)], cfg.feature_dim) for r in range(n)])
        feats = feats + world.scene_means[scene] + 0.3 / np.sqrt(cfg.feature_dim) * rng.standard_normal((n, cfg.feature_dim))
        images.append(np.round(feats, 4))
    caption = f"the {subject} {verb} {future} at the {scene}"
    tokens = caption.split()
    fillers = [chosen[j % n_scene] for j in range(cfg.k)]
    story = _story(tokens, fillers, cfg.k) + [caption]
    content = [t for t in tokens if t not in ("the", "at")]
    target = bag_of_words_vector(retrieval, content) + 0.05 * rng.standard_normal(cfg.d)
    return Sample(sid, images, detected, caption, story, np.round(target, 6))


def _check_forecast_only_words(samples, index: ConceptNetIndex, mode: str) -> None:
    for s in samples:
        seen = {c for c, _ in s.detected_flat()}
        reach = set().union(*(index.two_hop(c, mode) for c in seen))
        if not any(w not in seen and w in reach for w in s.caption.split()):
            raise AssertionError(f"sample {s.id}: no caption word is reachable only through expansion")


def make_synthetic_corpus(cfg: PipelineConfig, size: int | None = None, seed: int | None = None,
                          out_dir=None, edge_path=None) -> dict:
    """Write ``train.jsonl``, ``test.jsonl``, ``pretrain.jsonl``, ``manifest.json`` and the edge dump.

    The pretraining split feeds only the backbone stage and uses its own cue words.

    Returns the manifest. Output bytes depend only on ``cfg``, ``size`` and ``seed``.
    """
    size = cfg.corpus_size if size is None else size
    seed = cfg.corpus_seed if seed is None else seed
    if size < 2 or cfg.test_size < 2:
        raise ValueError("corpus splits need at least 2 samples each")
    out_dir = Path(out_dir) if out_dir is not None else cfg.path("corpus")
    edge_path = Path(edge_path) if edge_path is not None else cfg.path("edge_dump")
    rng = np.random.default_rng(seed)
    world = build_world(cfg, rng)
    index = build_edges(world, rng, hints_per_future(cfg), train_cues_per_future(cfg))
    retrieval = EmbeddingProvider(cfg.d, seed=seed + 7919)
    train = [make_sample(f"train{i:04d}", cfg, world, rng, "train", retrieval) for i in range(size)]
    test = [make_sample(f"test{i:04d}", cfg, world, rng, "test", retrieval) for i in range(cfg.test_size)]
    pre = [make_sample(f"pre{i:05d}", cfg, world, rng, "pretrain", retrieval) for i in range(cfg.pretrain_size)]

    _check_forecast_only_words(train + test + pre, index, cfg.two_hop_mode)

    out_dir.mkdir(parents=True, exist_ok=True)
    edge_path.parent.mkdir(parents=True, exist_ok=True)
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic commonsense edges: start\trelation\tend\tweight\n")
        fh.write(index.dumps())
    write_jsonl(out_dir / "train.jsonl", train)
    write_jsonl(out_dir / "test.jsonl", test)
    write_jsonl(out_dir / "pretrain.jsonl", pre)
    vocab = sorted({w for s in train + test + pre for w in s.caption.split()})
    manifest = {
        "splits": {"train": "train.jsonl", "test": "test.jsonl", "pretrain": "pretrain.jsonl"},
        "sizes": {"train": len(train), "test": len(test), "pretrain": len(pre)},
        "vocab": vocab,
        "seed": seed,
        "retrieval_seed": seed + 7919,
        "k": cfg.k,
        "feature_dim": cfg.feature_dim,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest
