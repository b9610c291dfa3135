import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anticap.concepts import (
    EmbeddingProvider,
    SchemaError,
    bag_of_words_vector,
    context_feature,
    cosine,
    dump_sample,
    embed_concept,
    load_sample,
    project_rois,
    read_jsonl,
    write_jsonl,
)
from anticap.numerics import ShapeError


def record(k=2, per_image=3, fdim=4):
    return {
        "id": "r1",
        "k": k,
        "feature_dim": fdim,
        "images": [[[float(i + j) for j in range(fdim)]] * 2 for i in range(k)],
        "detected": [[f"Thing {i}{j}" for j in range(per_image)] for i in range(k)],
        "caption": "a thing",
        "story": ["one", "two"],
        "target": [0.0, 1.0],
    }


def test_load_sample_normalizes_and_counts():
    s = load_sample(record(), concepts_per_image=3)
    assert s.k == 2 and s.n_rois == 4 and s.feature_dim == 4
    assert s.detected[0][0] == "thing_00"
    assert s.detected_flat()[3] == ("thing_10", 1)


def test_wrong_concept_count_names_image():
    rec = record()
    rec["detected"][1] = rec["detected"][1][:2]
    with pytest.raises(SchemaError, match="image 1"):
        load_sample(rec, concepts_per_image=3)


def test_missing_field_and_bad_features():
    rec = record()
    del rec["images"]
    with pytest.raises(SchemaError, match="images"):
        load_sample(rec, 3)
    rec = record()
    rec["images"][0][0][1] = "x"
    with pytest.raises(ValueError, match="non-numeric"):
        load_sample(rec, 3)
    rec = record()
    rec["images"][1] = [[1.0, 2.0]]
    with pytest.raises(SchemaError, match="image 1"):
        load_sample(rec, 3)


def test_jsonl_round_trip(tmp_path):
    s = load_sample(record(), 3)
    path = tmp_path / "x.jsonl"
    write_jsonl(path, [s, s])
    back = read_jsonl(path, 3)
    assert len(back) == 2
    assert dump_sample(back[0]) == dump_sample(s)
    assert json.loads(dump_sample(s))["caption"] == "a thing"


def test_hashed_embeddings_deterministic_and_unit():
    p, q = EmbeddingProvider(16, seed=5), EmbeddingProvider(16, seed=5)
    a = embed_concept(p, "Dog")
    np.testing.assert_array_equal(a, q("dog"))
    np.testing.assert_allclose(np.linalg.norm(a), 1.0)
    assert not a.flags.writeable
    assert not np.allclose(a, EmbeddingProvider(16, seed=6)("dog"))


def test_table_mode_falls_back_and_checks_shape():
    p = EmbeddingProvider(3, mode="table", table={"cat": np.array([3.0, 0.0, 4.0])})
    np.testing.assert_allclose(p("cat"), [0.6, 0.0, 0.8])
    np.testing.assert_allclose(np.linalg.norm(p("dog")), 1.0)
    bad = EmbeddingProvider(2, mode="table", table={"cat": np.ones(3)})
    with pytest.raises(ShapeError):
        bad("cat")


def test_projection_and_context():
    s = load_sample(record(), 3)
    proj = np.ones((4, 2))
    out = project_rois(s, proj, np.array([1.0, -1.0]))
    assert out.shape == (4, 2)
    np.testing.assert_allclose(out[0], [7.0, 5.0])
    np.testing.assert_allclose(context_feature(out), out.mean(axis=0))
    with pytest.raises(ShapeError):
        project_rois(s, np.ones((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        context_feature(np.zeros((0, 2)))


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=6))
def test_bag_of_words_is_order_free(words):
    p = EmbeddingProvider(8, seed=1)
    v = bag_of_words_vector(p, words)
    np.testing.assert_allclose(v, bag_of_words_vector(p, list(reversed(words))), atol=1e-12)
    assert cosine(v, v) == pytest.approx(1.0) or np.linalg.norm(v) == 0
