"""Adjacency index over a ConceptNet-style edge dump.

Dump format: UTF-8, one edge per line, ``start<TAB>relation<TAB>end<TAB>weight``.
Lines starting with ``#`` are comments. Edges are symmetrized on load and
relation labels are kept only as metadata.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_LANG_PREFIX = re.compile(r"^/c/[a-z]{2,3}/")


def normalize_concept(text: str) -> str:
    """Canonical concept key: lowercase, trimmed, underscores for spaces.

    ConceptNet URIs such as ``/c/en/hot_dog/n`` are reduced to ``hot_dog``.
    """
    s = text.strip().lower()
    if _LANG_PREFIX.match(s):
        s = _LANG_PREFIX.sub("", s).split("/")[0]
    return "_".join(s.split())


@dataclass
class ConceptNetIndex:
    adjacency: dict[str, dict[str, tuple[str, float]]] = field(default_factory=dict)
    malformed: int = 0
    two_hop_mode: str = "ball"

    @property
    def nodes(self) -> set[str]:
        return set(self.adjacency)

    def add_edge(self, a: str, relation: str, b: str, weight: float) -> None:
        a, b = normalize_concept(a), normalize_concept(b)
        if a == b or not a or not b:
            return
        for x, y in ((a, b), (b, a)):
            nbrs = self.adjacency.setdefault(x, {})
            old = nbrs.get(y)
            if old is None or weight > old[1]:
                nbrs[y] = (relation, weight)

    def edge_count(self) -> int:
        return sum(len(v) for v in self.adjacency.values()) // 2

    def edges(self):
        """Yield each undirected edge once as ``(a, relation, b, weight)``, a < b."""
        for a in sorted(self.adjacency):
            for b, (rel, w) in sorted(self.adjacency[a].items()):
                if a < b:
                    yield a, rel, b, w

    def neighbors(self, c: str) -> set[str]:
        return set(self.adjacency.get(normalize_concept(c), ()))

    def related(self, a: str, b: str) -> bool:
        a, b = normalize_concept(a), normalize_concept(b)
        return a != b and b in self.adjacency.get(a, ())

    def two_hop(self, c: str, mode: str | None = None) -> set[str]:
        """Concepts at graph distance 1 or 2 (``ball``) or exactly 2 (``exact``)."""
        mode = mode or self.two_hop_mode
        c = normalize_concept(c)
        first = set(self.adjacency.get(c, ()))
        second = set()
        for n in first:
            second.update(self.adjacency[n])
        second.discard(c)
        if mode == "ball":
            return first | second
        if mode == "exact":
            return second - first
        raise ValueError(f"unknown two_hop mode {mode!r}")

    def dumps(self) -> str:
        return "".join(f"{a}\t{rel}\t{b}\t{w!r}\n" for a, rel, b, w in self.edges())


def load_edges(source, two_hop_mode: str = "ball") -> ConceptNetIndex:
    """Build an index from dump text, an open text stream, or a ``Path``."""
    if isinstance(source, os.PathLike):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    elif hasattr(source, "read"):
        text = source.read()
    else:
        raise TypeError(f"cannot read edges from {type(source).__name__}")

    index = ConceptNetIndex(two_hop_mode=two_hop_mode)
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            index.malformed += 1
            continue
        start, rel, end, weight = parts
        try:
            w = float(weight)
        except ValueError:
            index.malformed += 1
            continue
        if not w >= 0 or not normalize_concept(start) or not normalize_concept(end):
            index.malformed += 1
            continue
        index.add_edge(start, rel.strip(), end, w)
    if index.malformed:
        log.warning("skipped %d malformed edge lines", index.malformed)
    if not index.adjacency:
        log.warning("edge dump produced an empty index")
    return index
