"""Tokenization, embedding tables and prior estimation."""

import numpy as np
import pytest

from hpvae.data import ReviewRecord, build_matrix
from hpvae.errors import FormatError
from hpvae.text import (EmbeddingTable, build_embedding_priors, build_random_priors,
                        load_embeddings, review_embedding, standard_prior_table,
                        tokenize, user_prior_from_vectors, user_prior_random,
                        z_normalize_priors)


class TestTokenize:
    def test_case_folding_and_punctuation(self):
        assert tokenize("Great food, GREAT staff!") == ["great", "food", "great", "staff"]

    def test_empty(self):
        assert tokenize("") == []

    def test_single_characters_dropped(self):
        assert tokenize("a I ok") == ["ok"]

    def test_idempotent_on_join(self):
        rng = np.random.default_rng(2)
        words = ["pasta", "service", "loud", "cozy", "wine", "x9", "café"]
        for _ in range(50):
            tokens = [words[i] for i in rng.integers(len(words), size=8)]
            assert tokenize(" ".join(tokens)) == tokens

    def test_stop_words_optional(self):
        assert tokenize("the food was the best", stop_words={"the", "was"}) == \
            ["food", "best"]


class TestLoadEmbeddings:
    def test_basic_table(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("food 1.0 0.0 0.5\nwine 0.0 1.0 0.5\n")
        table = load_embeddings(path)
        assert table.dim == 3 and len(table) == 2
        np.testing.assert_array_equal(table.lookup("FOOD"), [1.0, 0.0, 0.5])

    def test_count_header_skipped(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("2 3\nfood 1 0 0\nwine 0 1 0\n")
        assert len(load_embeddings(path)) == 2

    def test_dimension_mismatch_names_line(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("food 1 0 0\nwine 0 1\n")
        with pytest.raises(FormatError, match=":2"):
            load_embeddings(path)

    def test_duplicates_keep_first(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("food 1 0\nfood 9 9\n")
        np.testing.assert_array_equal(load_embeddings(path).lookup("food"), [1, 0])

    def test_roundtrip_lookup(self, tmp_path):
        rng = np.random.default_rng(0)
        words = {f"w{i:02d}": rng.normal(size=5) for i in range(30)}
        path = tmp_path / "e.txt"
        path.write_text("".join(
            f"{w} " + " ".join(repr(float(v)) for v in vec) + "\n"
            for w, vec in words.items()))
        table = load_embeddings(path)
        for w, vec in words.items():
            np.testing.assert_array_equal(table.lookup(w), vec)


class TestReviewEmbedding:
    TABLE = EmbeddingTable(dim=2, vectors={"aa": np.array([1.0, 1.0]),
                                           "bb": np.array([3.0, 3.0])})

    def test_single_token(self):
        np.testing.assert_array_equal(review_embedding(["aa"], self.TABLE), [1.0, 1.0])

    def test_two_token_mean(self):
        np.testing.assert_array_equal(review_embedding(["aa", "bb"], self.TABLE), [2.0, 2.0])

    def test_all_oov_is_absent(self):
        assert review_embedding(["zz", "qq"], self.TABLE) is None


class TestUserPriors:
    def test_mean_and_population_std(self):
        t, s = user_prior_from_vectors([np.array([1.0, 1.0]), np.array([3.0, 3.0])])
        np.testing.assert_array_equal(t, [2.0, 2.0])
        np.testing.assert_array_equal(s, [1.0, 1.0])  # population, not sample

    def test_order_invariance(self):
        vecs = [np.array([0.0, 2.0]), np.array([1.0, 0.0]), np.array([4.0, 1.0])]
        t1, s1 = user_prior_from_vectors(vecs)
        t2, s2 = user_prior_from_vectors(vecs[::-1])
        np.testing.assert_allclose(t1, t2)
        np.testing.assert_allclose(s1, s2)

    def test_z_normalize_two_users(self):
        mean = np.array([[0.0], [2.0]])
        std = np.ones((2, 1))
        out_mean, out_std = z_normalize_priors(mean, std, np.array([True, True]))
        np.testing.assert_allclose(out_mean, [[-1.0], [1.0]])
        np.testing.assert_allclose(out_std, [[1.0], [1.0]])

    def test_z_normalize_centers_every_dimension(self):
        rng = np.random.default_rng(3)
        mean = rng.normal(2.0, 3.0, size=(40, 6))
        std = rng.uniform(0.5, 1.5, size=(40, 6))
        out_mean, _ = z_normalize_priors(mean, std, np.ones(40, dtype=bool))
        np.testing.assert_allclose(out_mean.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(out_mean.std(axis=0), 1.0, atol=1e-9)

    def test_z_normalize_constant_dimension(self):
        mean = np.full((3, 2), 7.0)
        mean[:, 1] = [0.0, 1.0, 2.0]
        out_mean, _ = z_normalize_priors(mean, np.ones((3, 2)), np.ones(3, dtype=bool))
        np.testing.assert_allclose(out_mean[:, 0], 0.0)

    def test_random_prior_deterministic_and_distinct(self):
        a_mean, a_std = user_prior_random(5, 7, 16)
        b_mean, _ = user_prior_random(5, 7, 16)
        assert np.array_equal(a_mean, b_mean)
        np.testing.assert_array_equal(a_std, 1.0)
        means = {tuple(user_prior_random(5, u, 4)[0]) for u in range(100)}
        assert len(means) == 100

    def test_random_prior_first_coordinate_clt(self):
        table = build_random_priors(10_000, 3, seed=11)
        assert abs(table.mean[:, 0].mean()) < 0.05


class TestEmbeddingPriorTable:
    def _fixture(self):
        records = [
            ReviewRecord("u0", "i0", 1, "aa aa"),
            ReviewRecord("u0", "i1", 1, "bb"),
            ReviewRecord("u1", "i0", 1, "bb bb"),
            ReviewRecord("u1", "i1", 1, "bb"),
            ReviewRecord("u2", "i0", 1, "zz zz"),      # fully out of vocabulary
            ReviewRecord("u2", "i1", 1, ""),
        ]
        table = EmbeddingTable(dim=2, vectors={"aa": np.array([1.0, 0.0]),
                                               "bb": np.array([0.0, 1.0])})
        return records, build_matrix(records), table

    def test_fallback_user_keeps_standard_prior(self):
        records, matrix, emb = self._fixture()
        priors = build_embedding_priors(records, matrix, emb)
        assert priors.coverage() == {"standard": 1, "embedding": 2}
        u2 = matrix.user_index["u2"]
        np.testing.assert_array_equal(priors.mean[u2], [0.0, 0.0])
        np.testing.assert_array_equal(priors.std[u2], [1.0, 1.0])

    def test_floor_applies_to_single_review_users(self):
        records = [ReviewRecord("u0", "i0", 1, "aa"), ReviewRecord("u1", "i0", 1, "bb"),
                   ReviewRecord("u1", "i1", 1, "aa bb")]
        matrix = build_matrix(records)
        emb = EmbeddingTable(dim=2, vectors={"aa": np.array([1.0, 0.0]),
                                             "bb": np.array([0.0, 1.0])})
        priors = build_embedding_priors(records, matrix, emb, sigma_floor=0.1)
        assert np.all(priors.std >= 0.1)

    def test_validate_and_roundtrip(self, tmp_path):
        records, matrix, emb = self._fixture()
        priors = build_embedding_priors(records, matrix, emb)
        priors.validate()
        priors.save(tmp_path / "p.npz", meta={"prior_hash": "x"})
        from hpvae.text import PriorTable
        loaded, meta = PriorTable.load(tmp_path / "p.npz")
        assert meta["prior_hash"] == "x"
        np.testing.assert_array_equal(loaded.mean, priors.mean)
        np.testing.assert_array_equal(loaded.source, priors.source)

    def test_standard_table(self):
        table = standard_prior_table(4, 3)
        table.validate()
        assert table.coverage() == {"standard": 4}
