from __future__ import annotations

import numpy as np
import pytest

from raec.embedding import (
    DeterministicEmbedder,
    EmbedderConfig,
    make_embedder,
    read_matrix,
    write_matrix,
)
from raec.errors import ValidationError


def test_same_text_twice_is_bitwise_identical():
    emb = DeterministicEmbedder()
    a = emb.embed("hello there")
    b = emb.embed("hello there")
    assert a.dtype == np.dtype("<f4")
    assert a.shape == (768,)
    assert np.array_equal(a, b)


def test_identical_across_instances_with_same_seed():
    a = DeterministicEmbedder(EmbedderConfig(seed=5)).embed("text")
    b = DeterministicEmbedder(EmbedderConfig(seed=5)).embed("text")
    c = DeterministicEmbedder(EmbedderConfig(seed=6)).embed("text")
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_normalized_vectors_have_unit_norm():
    emb = DeterministicEmbedder(EmbedderConfig(dim=64))
    for text in ("a", "b", "a longer piece of text"):
        assert abs(np.linalg.norm(emb.embed(text).astype("<f8")) - 1.0) < 1e-6


def test_unnormalized_backend():
    emb = DeterministicEmbedder(EmbedderConfig(dim=64, normalize=False))
    norm = np.linalg.norm(emb.embed("abc").astype("<f8"))
    assert norm > 0 and abs(norm - 1.0) > 1e-3


def test_distinct_texts_distinct_vectors():
    emb = DeterministicEmbedder(EmbedderConfig(dim=32))
    vectors = emb.embed_batch([f"short string {i}" for i in range(1000)])
    unique = {v.tobytes() for v in vectors}
    assert len(unique) >= 999


def test_empty_text_rejected():
    emb = DeterministicEmbedder()
    with pytest.raises(ValidationError):
        emb.embed("   ")
    with pytest.raises(ValidationError, match="index 1"):
        emb.embed_batch(["ok", "  "])


def test_batch_equals_single_calls():
    emb = DeterministicEmbedder(EmbedderConfig(dim=48))
    texts = [f"text number {i}" for i in range(256)]
    batch = emb.embed_batch(texts)
    assert batch.shape == (256, 48)
    for i, text in enumerate(texts):
        assert np.array_equal(batch[i], emb.embed(text))


def test_empty_batch():
    emb = DeterministicEmbedder(EmbedderConfig(dim=16))
    out = emb.embed_batch([])
    assert out.shape == (0, 16)


def test_config_validation():
    with pytest.raises(ValidationError):
        EmbedderConfig(dim=0)
    with pytest.raises(ValidationError):
        make_embedder(EmbedderConfig(backend="nope"))


def test_matrix_round_trip(tmp_path):
    emb = DeterministicEmbedder(EmbedderConfig(dim=24))
    mat = emb.embed_batch([f"row {i}" for i in range(7)])
    path = tmp_path / "vectors.vec"
    write_matrix(path, mat)
    again = read_matrix(path, 24)
    assert np.array_equal(mat, again)
    with pytest.raises(ValidationError):
        read_matrix(path, 23)
