"""Topic recovery, fold-in inference and LDA-path priors."""

import numpy as np
import pytest

from conftest import two_cluster_corpus
from hpvae.data import ReviewRecord, build_matrix
from hpvae.errors import DataError
from hpvae.lda import LdaModel, build_lda_priors, lda_train, lda_user_encoding
from hpvae.util import substream


@pytest.fixture(scope="module")
def trained():
    docs, labels, vocab_a, vocab_b = two_cluster_corpus(seed=0)
    model = lda_train(docs, 2, alpha=1.0, n_iters=60, seed=1)
    return model, docs, labels, vocab_a, vocab_b


def topic_vocab_mass(model, vocab_a):
    """Per-topic probability mass on the A vocabulary."""
    phi = model.topic_word_dist()
    a_cols = [model.word_index[w] for w in vocab_a if w in model.word_index]
    return phi[:, a_cols].sum(axis=1)


class TestTraining:
    def test_two_cluster_purity(self, trained):
        model, _, _, vocab_a, _ = trained
        mass_a = topic_vocab_mass(model, vocab_a)
        purity = np.maximum(mass_a, 1.0 - mass_a)
        assert purity.min() > 0.9
        assert {int(np.argmax(mass_a))} != {int(np.argmin(mass_a))}

    def test_log_likelihood_moving_average_non_decreasing(self, trained):
        """MA(10) of the per-sweep LL may dip only by plateau sampling noise
        (tolerance: 0.5% of the overall MA range)."""
        model = trained[0]
        ll = model.log_likelihood
        ma = np.convolve(ll, np.ones(10) / 10, mode="valid")
        slack = 0.005 * (ma.max() - ma.min())
        assert np.all(np.diff(ma) >= -slack)
        assert ma[-1] > ma[0]

    def test_same_seed_identical_counts(self):
        docs, _, _, _ = two_cluster_corpus(n_docs=40, seed=3)
        a = lda_train(docs, 2, alpha=1.0, n_iters=10, seed=5)
        b = lda_train(docs, 2, alpha=1.0, n_iters=10, seed=5)
        assert np.array_equal(a.topic_word, b.topic_word)

    def test_topic_word_rows_normalize(self, trained):
        phi = trained[0].topic_word_dist()
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-9)

    def test_empty_vocabulary_rejected(self):
        with pytest.raises(DataError):
            lda_train([[], []], 2)

    def test_alpha_defaults_to_50_over_k(self):
        docs, _, _, _ = two_cluster_corpus(n_docs=10, seed=4)
        model = lda_train(docs, 5, n_iters=2, seed=0)
        assert model.alpha == pytest.approx(10.0)

    def test_save_load_roundtrip(self, trained, tmp_path):
        model = trained[0]
        model.save(tmp_path / "lda.npz")
        loaded, _ = LdaModel.load(tmp_path / "lda.npz")
        assert loaded.vocab == model.vocab
        np.testing.assert_array_equal(loaded.topic_word, model.topic_word)


class TestFoldIn:
    def test_empty_document_is_uniform(self, trained):
        theta, used = lda_user_encoding(trained[0], [])
        assert used == 0
        np.testing.assert_allclose(theta, 0.5)

    def test_pure_cluster_document_concentrates(self, trained):
        model, docs, labels, vocab_a, _ = trained
        a_topic = int(np.argmax(topic_vocab_mass(model, vocab_a)))
        hits = 0
        for doc, label in zip(docs[:60], labels[:60]):
            theta, _ = lda_user_encoding(model, doc, n_iters=25)
            want = a_topic if label == 0 else 1 - a_topic
            hits += theta[want] > 0.8
        assert hits >= 57  # > 95%

    def test_simplex_constraint(self, trained):
        model = trained[0]
        rng = np.random.default_rng(17)
        words = model.vocab
        for trial in range(100):
            doc = [words[i] for i in rng.integers(len(words), size=int(rng.integers(1, 40)))]
            theta, _ = lda_user_encoding(model, doc,
                                         rng=substream(9, 7, trial))
            assert abs(theta.sum() - 1.0) < 1e-9
            assert np.all(theta >= 0.0)

    def test_fold_in_deterministic_given_rng(self, trained):
        model, docs, _, _, _ = trained
        a, _ = lda_user_encoding(model, docs[0], rng=substream(1, 2, 3))
        b, _ = lda_user_encoding(model, docs[0], rng=substream(1, 2, 3))
        assert np.array_equal(a, b)


class TestLdaPriors:
    def _records_matrix(self):
        docs, labels, vocab_a, vocab_b = two_cluster_corpus(n_docs=60, doc_len=15, seed=8)
        records = []
        # 20 users, 3 reviews each; user cluster = user parity
        for u in range(20):
            for r in range(3):
                d = (u % 2) + 2 * ((u * 3 + r) % 30)
                records.append(ReviewRecord(f"u{u:02d}", f"i{(u * 3 + r) % 12:02d}", 1,
                                            " ".join(docs[d % 60])))
        return records, build_matrix(records), vocab_a

    def test_cluster_separation_in_prior_means(self):
        records, matrix, _ = self._records_matrix()
        model = lda_train([r.text.split() for r in records], 2, alpha=1.0,
                          n_iters=40, seed=2)
        priors = build_lda_priors(records, matrix, model, seed=4)
        priors.validate()
        even = [matrix.user_index[f"u{u:02d}"] for u in range(0, 20, 2)]
        odd = [matrix.user_index[f"u{u:02d}"] for u in range(1, 20, 2)]
        within = np.linalg.norm(priors.mean[even[0]] - priors.mean[even[1]])
        across = np.linalg.norm(priors.mean[even[0]] - priors.mean[odd[0]])
        assert across > within

    def test_single_review_user_gets_floor_std(self):
        docs, _, _, _ = two_cluster_corpus(n_docs=4, doc_len=12, seed=5)
        records = [ReviewRecord("u0", "i0", 1, " ".join(docs[0])),
                   ReviewRecord("u1", "i0", 1, " ".join(docs[1])),
                   ReviewRecord("u1", "i1", 1, " ".join(docs[3]))]
        matrix = build_matrix(records)
        model = lda_train([d for d in docs], 2, alpha=1.0, n_iters=20, seed=0)
        priors = build_lda_priors(records, matrix, model, sigma_floor=0.1,
                                  z_normalize=False, seed=1)
        u0 = matrix.user_index["u0"]
        np.testing.assert_allclose(priors.std[u0], 0.1)

    def test_duplicate_reviews_floor_std(self):
        text = "a00 a01 a02 a03 a04 a05"
        records = [ReviewRecord("u0", "i0", 1, text), ReviewRecord("u0", "i1", 1, text),
                   ReviewRecord("u1", "i0", 1, "b00 b01 b02")]
        matrix = build_matrix(records)
        model = lda_train([r.text.split() for r in records], 2, alpha=1.0,
                          n_iters=20, seed=0)
        priors = build_lda_priors(records, matrix, model, z_normalize=False, seed=1)
        u0 = matrix.user_index["u0"]
        np.testing.assert_allclose(priors.std[u0], priors.sigma_floor)
