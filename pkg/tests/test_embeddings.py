"""Feature-hash embedder: determinism, unit norms, cosine, file loading."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ksat.embeddings import (
    EmbeddingConfig,
    cosine_similarity,
    embed_text,
    load_embeddings,
    sentence_key,
    tokenize,
)
from ksat.errors import DataFormatError

TEXTS = st.text(alphabet="abcxyz019 .,-!'\t", max_size=40)


class TestTokenize:
    def test_lowercase_and_split_on_non_alphanumerics(self):
        assert tokenize("Gun, life!  X2") == ["gun", "life", "x2"]

    def test_no_tokens_in_punctuation_only_text(self):
        assert tokenize("?! -- ...") == []


class TestEmbedText:
    def test_empty_text_embeds_to_zero_vector(self):
        cfg = EmbeddingConfig(dimension=16, seed=0)
        vec = embed_text("", cfg)
        assert vec.shape == (16,)
        assert np.all(vec == 0.0)

    def test_punctuation_only_text_embeds_to_zero_vector(self):
        cfg = EmbeddingConfig(dimension=16, seed=0)
        assert np.all(embed_text("?!.", cfg) == 0.0)

    def test_self_cosine_is_one(self):
        cfg = EmbeddingConfig(dimension=64, seed=0)
        a = embed_text("gun life", cfg)
        b = embed_text("gun life", cfg)
        assert cosine_similarity(a, b) == 1.0

    def test_golden_vector_dimension_8_seed_42(self):
        # Frozen from an independent re-implementation of the hashing scheme
        # (tokens 'a' and 'b' land in the same bucket with opposite signs at
        # this seed, so this golden value also pins the cancellation fallback).
        cfg = EmbeddingConfig(dimension=8, seed=42)
        vec = embed_text("a b", cfg)
        expected = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(vec, expected)
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-9

    def test_single_token_hits_one_bucket(self):
        cfg = EmbeddingConfig(dimension=32, seed=3)
        vec = embed_text("hello", cfg)
        assert np.count_nonzero(vec) == 1
        assert abs(abs(vec[np.nonzero(vec)][0]) - 1.0) < 1e-12

    @given(text=TEXTS)
    def test_nonempty_token_lists_embed_to_unit_norm(self, text):
        cfg = EmbeddingConfig(dimension=8, seed=11)
        vec = embed_text(text, cfg)
        if tokenize(text):
            assert abs(float(np.linalg.norm(vec)) - 1.0) < 1e-9
        else:
            assert np.all(vec == 0.0)

    @given(text=TEXTS, seed=st.integers(min_value=0, max_value=2**64 - 1))
    def test_repeated_calls_are_byte_identical(self, text, seed):
        cfg = EmbeddingConfig(dimension=16, seed=seed)
        assert embed_text(text, cfg).tobytes() == embed_text(text, cfg).tobytes()

    def test_different_seeds_change_the_embedding(self):
        a = embed_text("gun life hope", EmbeddingConfig(dimension=64, seed=0))
        b = embed_text("gun life hope", EmbeddingConfig(dimension=64, seed=1))
        assert not np.array_equal(a, b)


class TestEmbeddingConfig:
    def test_dimension_below_two_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(dimension=1, seed=0)

    def test_seed_out_of_unsigned_64_bit_range_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(dimension=8, seed=2**64)
        with pytest.raises(ValueError):
            EmbeddingConfig(dimension=8, seed=-1)

    def test_unknown_vocabulary_mode_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(dimension=8, seed=0, vocabulary_mode="pretrained")


class TestCosineSimilarity:
    def test_identical_unit_vectors_give_one(self):
        v = np.array([0.6, 0.8])
        assert cosine_similarity(v, v) == 1.0

    def test_opposite_unit_vectors_give_minus_one(self):
        v = np.array([0.6, 0.8])
        assert cosine_similarity(v, -v) == -1.0

    def test_orthogonal_basis_vectors_give_zero(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_zero_vector_gives_zero_against_anything(self):
        z = np.zeros(4)
        v = np.ones(4)
        assert cosine_similarity(z, v) == 0.0
        assert cosine_similarity(v, z) == 0.0
        assert cosine_similarity(z, z) == 0.0

    def test_dimension_mismatch_raises_data_format_error(self):
        with pytest.raises(DataFormatError):
            cosine_similarity(np.ones(3), np.ones(4))

    @given(
        a=st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
        b=st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4),
    )
    def test_symmetric_and_clamped(self, a, b):
        a = np.array(a)
        b = np.array(b)
        ab = cosine_similarity(a, b)
        ba = cosine_similarity(b, a)
        assert ab == ba
        assert -1.0 <= ab <= 1.0

    def test_scale_invariance(self):
        a = np.array([1.0, 2.0, -3.0])
        b = np.array([0.5, -1.0, 2.0])
        assert cosine_similarity(a, b) == pytest.approx(
            cosine_similarity(10.0 * a, 0.25 * b), abs=1e-12
        )


class TestLoadEmbeddings:
    def test_single_line_loads_as_given(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 1.0 0.0\n")
        table = load_embeddings(path)
        assert set(table) == {"s1"}
        np.testing.assert_array_equal(table["s1"], np.array([1.0, 0.0]))

    def test_vectors_are_renormalized_to_unit_length(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 2.0 0.0\n")
        np.testing.assert_array_equal(load_embeddings(path)["s1"], np.array([1.0, 0.0]))

    def test_zero_vectors_are_preserved(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 0.0 0.0\n")
        np.testing.assert_array_equal(load_embeddings(path)["s1"], np.zeros(2))

    def test_comments_and_blank_lines_are_skipped(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("# header\n\ns1 1.0 0.0\n")
        assert set(load_embeddings(path)) == {"s1"}

    def test_inconsistent_dimensions_raise_with_line_number(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 1.0 0.0 0.0\ns2 1.0 0.0 0.0 0.0\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_embeddings(path)

    def test_malformed_value_raises_with_line_number(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 1.0 0.0\ns2 one 0.0\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_embeddings(path)

    def test_duplicate_id_raises_with_line_number(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1 1.0 0.0\ns1 0.0 1.0\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_embeddings(path)

    def test_id_without_values_raises(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("s1\n")
        with pytest.raises(DataFormatError, match=":1:"):
            load_embeddings(path)


def test_sentence_key_convention():
    assert sentence_key("p1", 0) == "p1:0"
    assert sentence_key("p1", 12) == "p1:12"
