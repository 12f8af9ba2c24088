"""Non-autoencoder reference rankers: random, matrix factorization, text kNN."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .autodiff import NumericError
from .serialize import load_bundle, save_bundle
from .text import EmbeddingTable, review_embedding, tokenize
from .util import STREAM_MF, STREAM_RAND_RANK, rank_by_scores, substream


def rand_rank(n_items: int, seed: int) -> np.ndarray:
    """Seeded uniform permutation of all items."""
    return substream(seed, STREAM_RAND_RANK).permutation(n_items)


class RandomRanker(BaseEstimator):
    """Ranks items in seeded random order, one independent stream per user."""

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X, priors=None, validation=None):
        X = check_array(X, accept_sparse="csr")
        self.n_items_ = X.shape[1]
        return self

    def rank_for_user(self, user: int, x_obs: np.ndarray, observed) -> np.ndarray:
        if not hasattr(self, "n_items_"):
            raise NotFittedError("RandomRanker is not fitted yet")
        perm = substream(self.seed, STREAM_RAND_RANK, user).permutation(self.n_items_)
        scores = np.empty(self.n_items_)
        scores[perm] = -np.arange(self.n_items_, dtype=np.float64)
        return rank_by_scores(scores, exclude=observed)


class MatrixFactorization(BaseEstimator):
    """Squared-loss MF trained by mini-batch SGD on positives plus sampled zeros.

    Each positive contributes ``n_negatives`` uniformly sampled
    unobserved entries as zero targets; parameters carry an L2 penalty.
    Held-out users are folded in by ridge-projecting their observed row
    onto the learned item factors.
    """

    def __init__(self, n_factors=100, lr=0.01, epochs=30, batch_users=1000,
                 n_negatives=4, l2=1e-4, fold_in_reg=1e-2, init_scale=None, seed=0):
        self.n_factors = n_factors
        self.lr = lr
        self.epochs = epochs
        self.batch_users = batch_users
        self.n_negatives = n_negatives
        self.l2 = l2
        self.fold_in_reg = fold_in_reg
        self.init_scale = init_scale
        self.seed = seed

    def fit(self, X, priors=None, validation=None):
        X = check_array(X, accept_sparse="csr")
        n_users, n_items = X.shape
        pos_rows = [np.flatnonzero(_row(X, u)) for u in range(n_users)]
        pos_sets = [set(map(int, r)) for r in pos_rows]

        rng = substream(self.seed, STREAM_MF)
        scale = self.init_scale if self.init_scale is not None else 1.0 / np.sqrt(self.n_factors)
        P = rng.normal(0.0, scale, size=(n_users, self.n_factors))
        Q = rng.normal(0.0, scale, size=(n_items, self.n_factors))

        self.loss_history_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n_users)
            epoch_sq, epoch_n = 0.0, 0
            for start in range(0, n_users, self.batch_users):
                batch = order[start:start + self.batch_users]
                u_idx, i_idx, targets = self._sample_triplets(batch, pos_rows, pos_sets,
                                                              n_items, rng)
                err = np.sum(P[u_idx] * Q[i_idx], axis=1) - targets
                if not np.all(np.isfinite(err)):
                    raise NumericError(
                        "matrix factorization diverged (non-finite error); try a smaller lr")
                # average each factor's gradient over its own triplets so the
                # step size does not shrink with the batch size
                grad_p = np.zeros_like(P)
                grad_q = np.zeros_like(Q)
                np.add.at(grad_p, u_idx, err[:, None] * Q[i_idx])
                np.add.at(grad_q, i_idx, err[:, None] * P[u_idx])
                cnt_p = np.zeros(P.shape[0])
                cnt_q = np.zeros(Q.shape[0])
                np.add.at(cnt_p, u_idx, 1.0)
                np.add.at(cnt_q, i_idx, 1.0)
                tp, tq = cnt_p > 0, cnt_q > 0
                P[tp] -= self.lr * (grad_p[tp] / cnt_p[tp, None] + self.l2 * P[tp])
                Q[tq] -= self.lr * (grad_q[tq] / cnt_q[tq, None] + self.l2 * Q[tq])
                epoch_sq += float(np.sum(err * err))
                epoch_n += len(targets)
            loss = epoch_sq / epoch_n + self.l2 * (float(np.sum(P * P)) + float(np.sum(Q * Q)))
            if not np.isfinite(loss):
                raise NumericError(
                    "matrix factorization diverged (loss is not finite); try a smaller lr")
            self.loss_history_.append(loss)

        self.user_factors_ = P
        self.item_factors_ = Q
        return self

    def _sample_triplets(self, batch, pos_rows, pos_sets, n_items, rng):
        u_idx, i_idx, targets = [], [], []
        for u in batch:
            row = pos_rows[u]
            positives = pos_sets[u]
            u_idx.extend([u] * len(row))
            i_idx.extend(row.tolist())
            targets.extend([1.0] * len(row))
            n_neg = self.n_negatives * len(row)
            drawn = 0
            while drawn < n_neg:
                candidates = rng.integers(n_items, size=n_neg - drawn)
                for c in candidates:
                    if int(c) not in positives:
                        u_idx.append(u)
                        i_idx.append(int(c))
                        targets.append(0.0)
                        drawn += 1
        return (np.asarray(u_idx, dtype=np.int64), np.asarray(i_idx, dtype=np.int64),
                np.asarray(targets, dtype=np.float64))

    def _check_fitted(self):
        if not hasattr(self, "item_factors_"):
            raise NotFittedError("MatrixFactorization is not fitted yet")

    def fold_in(self, x_obs: np.ndarray) -> np.ndarray:
        """Least-squares user factor for an unseen row, ridge-regularized."""
        self._check_fitted()
        Q = self.item_factors_
        gram = Q.T @ Q + self.fold_in_reg * np.eye(self.n_factors)
        return np.linalg.solve(gram, Q.T @ np.asarray(x_obs, dtype=np.float64))

    def rank_items(self, user_vector: np.ndarray, exclude=()) -> np.ndarray:
        self._check_fitted()
        return rank_by_scores(self.item_factors_ @ user_vector, exclude=exclude)

    def rank_for_user(self, user: int, x_obs: np.ndarray, observed) -> np.ndarray:
        return self.rank_items(self.fold_in(x_obs), exclude=observed)

    def predict_matrix(self) -> np.ndarray:
        """Dense reconstruction P Q^T for the training users."""
        self._check_fitted()
        return self.user_factors_ @ self.item_factors_.T

    def save(self, path, meta: dict | None = None) -> None:
        self._check_fitted()
        m = dict(meta or {})
        m["estimator_params"] = self.get_params()
        save_bundle(path, "mf-checkpoint", {
            "user_factors": self.user_factors_,
            "item_factors": self.item_factors_,
            "loss_history": np.asarray(self.loss_history_),
        }, m)

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "mf-checkpoint")
        est = cls(**meta["estimator_params"])
        est.user_factors_ = arrays["user_factors"]
        est.item_factors_ = arrays["item_factors"]
        est.loss_history_ = arrays["loss_history"].tolist()
        return est, meta


def text_knn_rank(user_vector: np.ndarray, item_vectors: np.ndarray,
                  exclude=()) -> np.ndarray:
    """Rank items by cosine similarity to the user vector.

    Zero-norm item vectors score -inf (ranked after any scored item);
    a zero-norm user vector yields the index-order permutation, which
    callers should flag as uninformative.
    """
    user_norm = np.linalg.norm(user_vector)
    item_norms = np.linalg.norm(item_vectors, axis=1)
    if user_norm == 0.0:
        return rank_by_scores(np.zeros(item_vectors.shape[0]), exclude=exclude)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = item_vectors @ user_vector / (item_norms * user_norm)
    cos = np.where(item_norms > 0.0, cos, -np.inf)
    return rank_by_scores(cos, exclude=exclude)


class TextKnn(BaseEstimator):
    """Text-only ranker in the shared embedding space.

    Items are embedded as the average of the embeddings of reviews
    written about them; at evaluation time a user is embedded from the
    reviews attached to their fold-in (observed) items only, so held-out
    text never leaks into the ranking.
    """

    def __init__(self):
        pass

    def fit(self, records, matrix, table: EmbeddingTable):
        per_item = [[] for _ in range(matrix.n_items)]
        self.review_vectors_ = {}
        for r in records:
            u = matrix.user_index.get(r.user_id)
            i = matrix.item_index.get(r.item_id)
            if i is None:
                continue
            vec = review_embedding(tokenize(r.text), table)
            if vec is None:
                continue
            per_item[i].append(vec)
            if u is not None:
                self.review_vectors_[(u, i)] = vec
        self.item_vectors_ = np.zeros((matrix.n_items, table.dim))
        for i, vecs in enumerate(per_item):
            if vecs:
                self.item_vectors_[i] = np.mean(np.stack(vecs), axis=0)
        self.n_textless_items_ = int(np.sum(np.all(self.item_vectors_ == 0.0, axis=1)))
        self.n_zero_vector_users_ = 0
        return self

    def user_vector(self, user: int, items) -> np.ndarray:
        self._check_fitted()
        vecs = [self.review_vectors_[(user, int(i))] for i in items
                if (user, int(i)) in self.review_vectors_]
        if not vecs:
            return np.zeros(self.item_vectors_.shape[1])
        return np.mean(np.stack(vecs), axis=0)

    def rank_for_user(self, user: int, x_obs: np.ndarray, observed) -> np.ndarray:
        vec = self.user_vector(user, observed)
        if not np.any(vec):
            self.n_zero_vector_users_ += 1
        return text_knn_rank(vec, self.item_vectors_, exclude=observed)

    def _check_fitted(self):
        if not hasattr(self, "item_vectors_"):
            raise NotFittedError("TextKnn is not fitted yet")


def _row(X, u: int) -> np.ndarray:
    if hasattr(X, "toarray"):
        return np.asarray(X[u].toarray()).ravel()
    return np.asarray(X[u]).ravel()
