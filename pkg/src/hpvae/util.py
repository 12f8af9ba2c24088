"""Small shared helpers: seeded rng substreams and row normalization."""

from __future__ import annotations

import numpy as np

# Stream tags keep independent rng consumers from colliding on one seed.
STREAM_SPLIT = 1
STREAM_FOLD_IN = 2
STREAM_RANDOM_PRIOR = 3
STREAM_MODEL_INIT = 4
STREAM_TRAIN = 5
STREAM_LDA = 6
STREAM_LDA_FOLD_IN = 7
STREAM_RAND_RANK = 8
STREAM_MF = 9
STREAM_FIXTURE = 10


def substream(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for (seed, path); safe to use per user in parallel."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; all-zero rows are left as zeros."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return x / norms


def rank_by_scores(scores: np.ndarray, exclude=()) -> np.ndarray:
    """Item permutation by descending score, ties by ascending index.

    Excluded items keep their relative score order but are placed after
    every non-excluded item.
    """
    scores = np.asarray(scores)
    order = np.argsort(-scores, kind="stable")
    exclude = np.asarray(exclude, dtype=np.int64)
    if exclude.size:
        excluded = np.zeros(scores.shape[0], dtype=bool)
        excluded[exclude] = True
        flags = excluded[order]
        order = np.concatenate([order[~flags], order[flags]])
    return order
