"""Latent Dirichlet Allocation via collapsed Gibbs sampling.

Training resamples per-token topic assignments with the multinomial
parameters integrated out; the sampler keeps three count tables
(topic x word, topic totals, doc x topic) and updates them in fixed
token order, so a seed fully determines the fit.  Held-out documents
are encoded by running the same sampler with the topic-word counts
frozen, which is how per-user topic distributions are produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .serialize import load_bundle, save_bundle
from .text import (SIGMA_FLOOR, SOURCE_LDA, PriorTable, standard_prior_table,
                   tokenize, user_prior_from_vectors, z_normalize_priors)
from .util import STREAM_LDA, STREAM_LDA_FOLD_IN, substream


@dataclass
class LdaModel:
    n_topics: int
    alpha: float
    eta: float
    vocab: list
    topic_word: np.ndarray      # (k, V) counts
    topic_totals: np.ndarray    # (k,) row sums of topic_word
    seed: int
    log_likelihood: np.ndarray = field(default_factory=lambda: np.zeros(0))
    word_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.word_index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def n_words(self) -> int:
        return len(self.vocab)

    def topic_word_dist(self) -> np.ndarray:
        """Smoothed word distribution per topic; each row sums to 1."""
        return (self.topic_word + self.eta) / (self.topic_totals + self.n_words * self.eta)[:, None]

    def save(self, path, meta: dict | None = None) -> None:
        m = dict(meta or {})
        m.update({"n_topics": self.n_topics, "alpha": self.alpha, "eta": self.eta,
                  "seed": self.seed})
        save_bundle(path, "lda", {
            "vocab": np.array(self.vocab, dtype=np.str_),
            "topic_word": self.topic_word,
            "topic_totals": self.topic_totals,
            "log_likelihood": self.log_likelihood,
        }, m)

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "lda")
        model = cls(n_topics=int(meta["n_topics"]), alpha=float(meta["alpha"]),
                    eta=float(meta["eta"]), vocab=[str(w) for w in arrays["vocab"]],
                    topic_word=arrays["topic_word"], topic_totals=arrays["topic_totals"],
                    seed=int(meta["seed"]), log_likelihood=arrays["log_likelihood"])
        return model, meta


def _corpus_arrays(docs, word_index):
    doc_ids, word_ids = [], []
    for d, tokens in enumerate(docs):
        for t in tokens:
            w = word_index.get(t)
            if w is not None:
                doc_ids.append(d)
                word_ids.append(w)
    return np.array(doc_ids, dtype=np.int64), np.array(word_ids, dtype=np.int64)


def lda_train(docs, n_topics: int, alpha: float | None = None, eta: float = 0.01,
              n_iters: int = 200, seed: int = 0) -> LdaModel:
    """Fit LDA on tokenized documents with ``n_iters`` Gibbs sweeps.

    ``alpha`` defaults to 50/k.  The per-sweep corpus log-likelihood
    (predictive token likelihood under the current smoothed estimates)
    is recorded on the returned model as a training diagnostic.
    """
    if n_topics < 2:
        raise ValueError(f"need at least 2 topics, got {n_topics}")
    if alpha is None:
        alpha = 50.0 / n_topics
    vocab = sorted({t for doc in docs for t in doc})
    if not vocab:
        raise DataError("empty vocabulary: no tokens survive tokenization")
    word_index = {w: i for i, w in enumerate(vocab)}
    doc_ids, word_ids = _corpus_arrays(docs, word_index)
    n_docs, n_words, n_tokens = len(docs), len(vocab), len(doc_ids)

    rng = substream(seed, STREAM_LDA)
    z = rng.integers(n_topics, size=n_tokens)
    n_tw = np.zeros((n_topics, n_words))
    n_t = np.zeros(n_topics)
    n_dt = np.zeros((n_docs, n_topics))
    np.add.at(n_tw, (z, word_ids), 1.0)
    np.add.at(n_t, z, 1.0)
    np.add.at(n_dt, (doc_ids, z), 1.0)
    doc_len = np.bincount(doc_ids, minlength=n_docs).astype(np.float64)

    eta_total = n_words * eta
    ll = np.zeros(n_iters)
    for sweep in range(n_iters):
        uniforms = rng.random(n_tokens)
        for i in range(n_tokens):
            d, w, t_old = doc_ids[i], word_ids[i], z[i]
            n_tw[t_old, w] -= 1.0
            n_t[t_old] -= 1.0
            n_dt[d, t_old] -= 1.0
            weights = (n_tw[:, w] + eta) / (n_t + eta_total) * (n_dt[d] + alpha)
            cum = np.cumsum(weights)
            t_new = int(np.searchsorted(cum, uniforms[i] * cum[-1], side="right"))
            if t_new == n_topics:  # guard against fp edge at the top of the cdf
                t_new = n_topics - 1
            z[i] = t_new
            n_tw[t_new, w] += 1.0
            n_t[t_new] += 1.0
            n_dt[d, t_new] += 1.0
        phi = (n_tw + eta) / (n_t + eta_total)[:, None]
        theta = (n_dt + alpha) / (doc_len + n_topics * alpha)[:, None]
        token_probs = np.einsum("nk,kn->n", theta[doc_ids], phi[:, word_ids])
        ll[sweep] = np.sum(np.log(token_probs))

    return LdaModel(n_topics=n_topics, alpha=alpha, eta=eta, vocab=vocab,
                    topic_word=n_tw, topic_totals=n_t, seed=seed, log_likelihood=ll)


def lda_user_encoding(model: LdaModel, tokens, n_iters: int = 25,
                      rng: np.random.Generator | None = None) -> tuple:
    """Fold one document in against frozen topic-word counts.

    Returns (theta, n_used): the smoothed topic proportions (sums to 1)
    and how many tokens were in-vocabulary.  Documents with no usable
    token get the uniform distribution, which callers should treat as a
    fallback.
    """
    k = model.n_topics
    word_ids = np.array([model.word_index[t] for t in tokens if t in model.word_index],
                        dtype=np.int64)
    n = len(word_ids)
    if n == 0:
        return np.full(k, 1.0 / k), 0
    if rng is None:
        rng = substream(model.seed, STREAM_LDA_FOLD_IN)
    # (k, n) word weights under the frozen model
    word_w = (model.topic_word[:, word_ids] + model.eta) / \
        (model.topic_totals + model.n_words * model.eta)[:, None]
    z = rng.integers(k, size=n)
    counts = np.bincount(z, minlength=k).astype(np.float64)
    for _ in range(n_iters):
        uniforms = rng.random(n)
        for i in range(n):
            counts[z[i]] -= 1.0
            weights = word_w[:, i] * (counts + model.alpha)
            cum = np.cumsum(weights)
            t_new = int(np.searchsorted(cum, uniforms[i] * cum[-1], side="right"))
            if t_new == k:
                t_new = k - 1
            z[i] = t_new
            counts[t_new] += 1.0
    theta = (counts + model.alpha) / (n + k * model.alpha)
    return theta, n


def build_lda_priors(records, matrix, model: LdaModel,
                     sigma_floor: float = SIGMA_FLOOR, z_normalize: bool = True,
                     fold_in_iters: int = 25, seed: int = 0) -> PriorTable:
    """LDA-path prior table: t_u from the user's concatenated reviews,
    s_u from the spread of per-review topic vectors.

    Mirrors the embedding path: estimated means are z-normalized across
    users and stds floored; users with no in-vocabulary text fall back
    to the standard prior.
    """
    texts_per_user = [[] for _ in range(matrix.n_users)]
    for r in records:
        u = matrix.user_index.get(r.user_id)
        if u is not None:
            texts_per_user[u].append(tokenize(r.text))

    priors = standard_prior_table(matrix.n_users, model.n_topics)
    estimated = np.zeros(matrix.n_users, dtype=bool)
    for u, docs in enumerate(texts_per_user):
        concatenated = [t for doc in docs for t in doc]
        theta, n_used = lda_user_encoding(model, concatenated, n_iters=fold_in_iters,
                                          rng=substream(seed, STREAM_LDA_FOLD_IN, u))
        if n_used == 0:
            continue
        review_vecs = []
        for ridx, doc in enumerate(docs):
            vec, used = lda_user_encoding(model, doc, n_iters=fold_in_iters,
                                          rng=substream(seed, STREAM_LDA_FOLD_IN, u, ridx + 1))
            if used > 0:
                review_vecs.append(vec)
        _, s = user_prior_from_vectors(review_vecs)
        priors.mean[u] = theta
        priors.std[u] = s
        priors.source[u] = SOURCE_LDA
        estimated[u] = True

    if z_normalize:
        priors.mean, priors.std = z_normalize_priors(priors.mean, priors.std, estimated)
    priors.std[estimated] = np.maximum(priors.std[estimated], sigma_floor)
    priors.sigma_floor = sigma_floor
    priors.validate()
    return priors
