"""Per-user Gaussian priors estimated from review text.

A user's prior N(t_u, diag(s_u^2)) comes from one of three sources:

* ``embedding`` -- t_u is the mean of the user's review embeddings
  (each review embedded as the average of its word vectors), s_u the
  per-dimension population std of those review embeddings;
* ``random``    -- t_u drawn i.i.d. standard normal per user, s_u = 1;
* ``standard``  -- N(0, I), the fallback for users with no usable text.

Estimated means are z-normalized per dimension across users, stds are
rescaled by the same factors, and every std is floored at SIGMA_FLOOR
so the closed-form KL stays bounded for single-review users.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .serialize import load_bundle, save_bundle
from .util import STREAM_RANDOM_PRIOR, substream

SIGMA_FLOOR = 0.1

SOURCE_STANDARD = 0
SOURCE_EMBEDDING = 1
SOURCE_LDA = 2
SOURCE_RANDOM = 3
SOURCE_NAMES = {SOURCE_STANDARD: "standard", SOURCE_EMBEDDING: "embedding",
                SOURCE_LDA: "lda", SOURCE_RANDOM: "random"}

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, stop_words=None) -> list:
    """Lowercased unicode-alphanumeric tokens of length >= 2."""
    tokens = [t for t in _WORD_RE.findall(text.lower()) if len(t) >= 2]
    if stop_words:
        tokens = [t for t in tokens if t not in stop_words]
    return tokens


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict

    def lookup(self, word: str):
        return self.vectors.get(word.lower())

    def __len__(self):
        return len(self.vectors)


def load_embeddings(path) -> EmbeddingTable:
    """Read a whitespace-separated "word v1 ... vK" table.

    A leading "count dim" header line is skipped when present; duplicate
    words keep their first vector; any line whose vector length differs
    from the first raises FormatError naming the line.
    """
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            word, values = parts[0].lower(), parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric embedding value") from None
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise FormatError(f"{path}:{lineno}: empty embedding vector")
            elif len(vec) != dim:
                raise FormatError(
                    f"{path}:{lineno}: dimension {len(vec)} != {dim} declared by first entry")
            if word not in vectors:
                vectors[word] = vec
    if not vectors:
        raise FormatError(f"{path}: no embedding entries found")
    return EmbeddingTable(dim=dim, vectors=vectors)


def review_embedding(tokens, table: EmbeddingTable):
    """Mean vector of in-vocabulary tokens, or None when all are OOV."""
    vecs = [table.lookup(t) for t in tokens]
    vecs = [v for v in vecs if v is not None]
    if not vecs:
        return None
    return np.mean(np.stack(vecs), axis=0)


@dataclass
class PriorTable:
    """Per-user prior parameters aligned with interaction-matrix user indices."""

    mean: np.ndarray
    std: np.ndarray
    source: np.ndarray
    sigma_floor: float = SIGMA_FLOOR

    @property
    def n_users(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def coverage(self) -> dict:
        counts = {name: int(np.sum(self.source == code))
                  for code, name in SOURCE_NAMES.items()}
        return {k: v for k, v in counts.items() if v}

    def validate(self) -> None:
        if self.mean.shape != self.std.shape or self.source.shape != (self.n_users,):
            raise ValueError("prior table arrays are inconsistently shaped")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ValueError("prior table contains non-finite values")
        if np.any(self.std < self.sigma_floor - 1e-12):
            raise ValueError("prior std below sigma floor")

    def rows(self, users) -> tuple:
        users = np.asarray(users, dtype=np.int64)
        return self.mean[users], self.std[users]

    def save(self, path, meta: dict | None = None) -> None:
        m = dict(meta or {})
        m.update({"sigma_floor": self.sigma_floor, "dim": self.dim,
                  "coverage": self.coverage()})
        save_bundle(path, "priors", {"mean": self.mean, "std": self.std,
                                     "source": self.source}, m)

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "priors")
        table = cls(mean=arrays["mean"], std=arrays["std"],
                    source=arrays["source"].astype(np.int8),
                    sigma_floor=float(meta["sigma_floor"]))
        return table, meta


def standard_prior_table(n_users: int, dim: int) -> PriorTable:
    return PriorTable(mean=np.zeros((n_users, dim)), std=np.ones((n_users, dim)),
                      source=np.full(n_users, SOURCE_STANDARD, dtype=np.int8))


def user_prior_random(seed: int, user: int, dim: int) -> tuple:
    """Fixed random prior for one user: standard-normal mean, unit std."""
    rng = substream(seed, STREAM_RANDOM_PRIOR, user)
    return rng.standard_normal(dim), np.ones(dim)


def build_random_priors(n_users: int, dim: int, seed: int) -> PriorTable:
    table = standard_prior_table(n_users, dim)
    for u in range(n_users):
        mean, std = user_prior_random(seed, u, dim)
        table.mean[u] = mean
        table.std[u] = std
        table.source[u] = SOURCE_RANDOM
    return table


def user_prior_from_vectors(vectors) -> tuple:
    """Mean and population std across one user's per-review vectors."""
    stacked = np.stack(vectors)
    return stacked.mean(axis=0), stacked.std(axis=0)


def z_normalize_priors(mean: np.ndarray, std: np.ndarray, estimated: np.ndarray):
    """Standardize estimated means per dimension across users.

    Only rows flagged in ``estimated`` contribute statistics and are
    transformed; stds are divided by the same per-dimension factors so
    the prior family is transformed consistently.  Dimensions that are
    constant across users are centered and left unscaled.
    """
    mean = mean.copy()
    std = std.copy()
    rows = mean[estimated]
    if rows.shape[0] >= 2:
        dim_mean = rows.mean(axis=0)
        dim_std = rows.std(axis=0)
        scale = np.where(dim_std > 0.0, dim_std, 1.0)
        mean[estimated] = (rows - dim_mean) / scale
        std[estimated] = std[estimated] / scale
    return mean, std


def build_embedding_priors(records, matrix, table: EmbeddingTable,
                           sigma_floor: float = SIGMA_FLOOR,
                           z_normalize: bool = True) -> PriorTable:
    """Embedding-path prior table for every user in the matrix.

    Users whose reviews contain no in-vocabulary token fall back to the
    standard prior and are counted in the table's coverage stats.
    """
    per_user = [[] for _ in range(matrix.n_users)]
    for r in records:
        u = matrix.user_index.get(r.user_id)
        if u is None:
            continue
        vec = review_embedding(tokenize(r.text), table)
        if vec is not None:
            per_user[u].append(vec)

    priors = standard_prior_table(matrix.n_users, table.dim)
    estimated = np.zeros(matrix.n_users, dtype=bool)
    for u, vecs in enumerate(per_user):
        if not vecs:
            continue
        t, s = user_prior_from_vectors(vecs)
        priors.mean[u] = t
        priors.std[u] = s
        priors.source[u] = SOURCE_EMBEDDING
        estimated[u] = True

    if z_normalize:
        priors.mean, priors.std = z_normalize_priors(priors.mean, priors.std, estimated)
    priors.std[estimated] = np.maximum(priors.std[estimated], sigma_floor)
    priors.sigma_floor = sigma_floor
    priors.validate()
    return priors
