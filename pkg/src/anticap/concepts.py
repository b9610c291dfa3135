"""Per-sample inputs: ROI features, detected concept lists, concept embeddings."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .conceptnet import normalize_concept
from .numerics import ShapeError, as_tensor

CONCEPTS_PER_IMAGE = 10


class SchemaError(ValueError):
    """A dataset record does not match the expected layout."""


@dataclass
class Sample:
    id: str
    images: list[np.ndarray]
    detected: list[list[str]]
    caption: str | None = None
    story: list[str] | None = None
    target: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.images)

    @property
    def feature_dim(self) -> int:
        return self.images[0].shape[1]

    @property
    def n_rois(self) -> int:
        return sum(im.shape[0] for im in self.images)

    def detected_flat(self) -> list[tuple[str, int]]:
        return [(c, i) for i, concepts in enumerate(self.detected) for c in concepts]

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "k": self.k,
            "feature_dim": self.feature_dim,
            "images": [im.tolist() for im in self.images],
            "detected": [list(c) for c in self.detected],
        }
        if self.caption is not None:
            rec["caption"] = self.caption
        if self.story is not None:
            rec["story"] = list(self.story)
        if self.target is not None:
            rec["target"] = self.target.tolist()
        return rec


def load_sample(record, concepts_per_image: int = CONCEPTS_PER_IMAGE) -> Sample:
    """Validate a record (dict or JSON text) and build a :class:`Sample`."""
    if isinstance(record, (str, bytes)):
        record = json.loads(record)
    try:
        sid, k, fdim = str(record["id"]), int(record["k"]), int(record["feature_dim"])
        raw_images, raw_detected = record["images"], record["detected"]
    except KeyError as e:
        raise SchemaError(f"record missing field {e.args[0]!r}") from None
    if k < 1 or len(raw_images) != k or len(raw_detected) != k:
        raise SchemaError(f"record {sid}: expected {k} image slots")
    images = []
    for i, im in enumerate(raw_images):
        try:
            arr = np.array(im, dtype=np.float64)
        except (TypeError, ValueError):
            raise ValueError(f"record {sid}: non-numeric ROI feature in image {i}") from None
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != fdim:
            raise SchemaError(f"record {sid}: image {i} ROIs must be (n, {fdim}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"record {sid}: non-finite ROI feature in image {i}")
        images.append(arr)
    detected = []
    for i, concepts in enumerate(raw_detected):
        if len(concepts) != concepts_per_image:
            raise SchemaError(
                f"record {sid}: image {i} has {len(concepts)} concepts, expected {concepts_per_image}"
            )
        detected.append([normalize_concept(c) for c in concepts])
    target = record.get("target")
    return Sample(
        id=sid,
        images=images,
        detected=detected,
        caption=record.get("caption"),
        story=record.get("story"),
        target=None if target is None else np.array(target, dtype=np.float64),
    )


def dump_sample(sample: Sample) -> str:
    return json.dumps(sample.to_record(), separators=(",", ":"))


def read_jsonl(path, concepts_per_image: int = CONCEPTS_PER_IMAGE) -> list[Sample]:
    with open(path, encoding="utf-8") as fh:
        return [load_sample(line, concepts_per_image) for line in fh if line.strip()]


def write_jsonl(path, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(dump_sample(s) + "\n")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class EmbeddingProvider:
    """Deterministic concept embeddings standing in for a pretrained text encoder.

    ``hashed`` mode seeds a Gaussian draw from a digest of the normalized
    concept; ``table`` mode looks vectors up and falls back to hashing.
    """

    dim: int = 32
    seed: int = 0
    mode: str = "hashed"
    table: dict[str, np.ndarray] = field(default_factory=dict)
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __call__(self, concept: str) -> np.ndarray:
        return embed_concept(self, concept)


def _hashed_vector(concept: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}:{concept}".encode(), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return _unit(rng.standard_normal(dim))


def embed_concept(p: EmbeddingProvider, c: str) -> np.ndarray:
    key = normalize_concept(c)
    vec = p._cache.get(key)
    if vec is None:
        if p.mode == "table" and key in p.table:
            vec = _unit(as_tensor(p.table[key]))
            if vec.shape != (p.dim,):
                raise ShapeError(f"table vector for {key!r} has shape {vec.shape}, expected ({p.dim},)")
        elif p.mode in ("table", "hashed"):
            vec = _hashed_vector(key, p.dim, p.seed)
        else:
            raise ValueError(f"unknown embedding mode {p.mode!r}")
        vec.setflags(write=False)
        p._cache[key] = vec
    return vec


def embed_many(p: EmbeddingProvider, concepts) -> np.ndarray:
    return np.stack([embed_concept(p, c) for c in concepts]) if concepts else np.zeros((0, p.dim))


def project_rois(sample_or_rois, proj, bias) -> np.ndarray:
    """Map raw ROI rows (feature_dim) to the model width through a frozen affine map."""
    if isinstance(sample_or_rois, Sample):
        rois = np.concatenate(sample_or_rois.images, axis=0)
    else:
        rois = as_tensor(sample_or_rois)
    proj = as_tensor(proj)
    if rois.shape[1] != proj.shape[0] or proj.shape[1] != np.shape(bias)[0]:
        raise ShapeError(f"cannot project ROIs {rois.shape} with {proj.shape} + bias {np.shape(bias)}")
    return rois @ proj + bias


def context_feature(rois) -> np.ndarray:
    rois = as_tensor(rois)
    if rois.ndim != 2 or rois.shape[0] == 0:
        raise ValueError("context feature needs at least one ROI row")
    return rois.sum(axis=0) / rois.shape[0]


def cosine(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def bag_of_words_vector(p: EmbeddingProvider, tokens) -> np.ndarray:
    tokens = list(tokens)
    if not tokens:
        return np.zeros(p.dim)
    return _unit(embed_many(p, tokens).sum(axis=0))

