import io
from collections import deque
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anticap.conceptnet import ConceptNetIndex, load_edges, normalize_concept

DUMP = """# comment line
dog\tRelatedTo\tcat\t1.0
cat\tRelatedTo\tmouse\t2.0
dog\tRelatedTo\tcat\t3.5
mouse\tAtLocation\thole\t0.5
broken line without tabs
x\tRelatedTo\ty\tnot-a-number

/c/en/hot_dog/n\tIsA\tFood\t1.0
"""


def bfs_within(adj: dict, start: str, depth: int) -> dict[str, int]:
    dist = {start: 0}
    q = deque([start])
    while q:
        u = q.popleft()
        if dist[u] == depth:
            continue
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def test_normalize_concept():
    assert normalize_concept("  Hot Dog ") == "hot_dog"
    assert normalize_concept("/c/en/hot_dog/n") == "hot_dog"


def test_load_counts_malformed_and_keeps_max_weight():
    idx = load_edges(DUMP)
    assert idx.malformed == 2
    assert idx.adjacency["dog"]["cat"] == ("RelatedTo", 3.5)
    assert idx.adjacency["cat"]["dog"] == ("RelatedTo", 3.5)
    assert idx.edge_count() == 4
    assert idx.related("hot_dog", "food")


def test_load_from_stream_and_path(tmp_path):
    p = tmp_path / "edges.tsv"
    p.write_text(DUMP, encoding="utf-8")
    a = load_edges(p)
    b = load_edges(io.StringIO(DUMP))
    assert a.adjacency == b.adjacency
    with pytest.raises(FileNotFoundError):
        load_edges(Path(tmp_path / "missing.tsv"))


def test_empty_dump_warns(caplog):
    idx = load_edges("# only a comment\n")
    assert idx.edge_count() == 0
    assert "empty" in caplog.text


def test_self_loops_dropped():
    idx = load_edges("a\tr\ta\t1.0\n")
    assert idx.edge_count() == 0
    assert not idx.related("a", "a")


def test_two_hop_modes():
    idx = load_edges(DUMP)
    assert idx.two_hop("dog") == {"cat", "mouse"}
    assert idx.two_hop("dog", "exact") == {"mouse"}
    assert idx.two_hop("unknown") == set()
    with pytest.raises(ValueError):
        idx.two_hop("dog", "bogus")


def test_dumps_round_trip():
    idx = load_edges(DUMP)
    again = load_edges(idx.dumps())
    assert again.adjacency == idx.adjacency


def _random_index(seed: int) -> ConceptNetIndex:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    p = rng.uniform(0.02, 0.3)
    idx = ConceptNetIndex()
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                idx.add_edge(f"v{a}", "RelatedTo", f"v{b}", float(rng.uniform(0, 3)))
    return idx, n


@pytest.mark.parametrize("seed", range(100))
def test_two_hop_matches_breadth_first_search(seed):
    idx, n = _random_index(seed)
    for a in range(n):
        c = f"v{a}"
        dist = bfs_within(idx.adjacency, c, 2)
        assert idx.two_hop(c, "ball") == {v for v, d in dist.items() if 1 <= d <= 2}
        assert idx.two_hop(c, "exact") == {v for v, d in dist.items() if d == 2}


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=30))
def test_two_hop_symmetry(pairs):
    idx = ConceptNetIndex()
    for a, b in pairs:
        idx.add_edge(f"n{a}", "r", f"n{b}", 1.0)
    for a in range(10):
        for b in idx.two_hop(f"n{a}"):
            assert f"n{a}" in idx.two_hop(b)
