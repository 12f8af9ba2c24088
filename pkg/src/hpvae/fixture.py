"""Self-contained synthetic dataset for offline tests and demos.

Generates a review corpus with planted structure at two scales:

* clusters: users and items are partitioned into clusters and users
  mostly review items of their own cluster (popularity-skewed);
* aspects: each cluster's vocabulary is divided into aspect groups,
  every item speaks mainly one aspect, and every user favors a few
  aspects which tilt their item selection.

Review text is drawn from the reviewed item's word pool, so text
reveals both the cluster and the user's aspect tastes; with only a
handful of ratings per user, the taste part is visible in text but
hard to recover from the rating matrix alone.  A matching toy
embedding table places cluster vocabularies around distinct directions
with aspect-specific offsets.

The generator writes three files: ``reviews.tsv``, ``embeddings.txt``
and ``truth.json`` (ground-truth counts and cluster assignments for
test oracles).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import ReviewRecord, save_reviews
from .util import STREAM_FIXTURE, substream


@dataclass
class FixtureConfig:
    n_users: int = 500
    n_clusters: int = 4
    items_per_cluster: int = 150
    embed_dim: int = 8
    words_per_cluster: int = 40
    n_aspects: int = 8               # aspect groups per cluster vocabulary
    n_common_words: int = 20
    item_vocab_size: int = 8
    user_aspects: int = 3            # favored aspects per user
    aspect_boost: float = 4.0        # selection tilt toward favored aspects
    aspect_offset: float = 0.6       # embedding offset per aspect group
    reviews_low: int = 6
    reviews_high: int = 11
    review_len_low: int = 6
    review_len_high: int = 12
    positive_rate: float = 0.9
    cross_cluster_rate: float = 0.15
    zipf_exponent: float = 0.6
    word_noise: float = 0.15
    cluster_word_prob: float = 0.8
    seed: int = 7


def _cluster_vocab(cfg: FixtureConfig):
    clusters = [[f"c{c}w{j:02d}" for j in range(cfg.words_per_cluster)]
                for c in range(cfg.n_clusters)]
    common = [f"base{j:02d}" for j in range(cfg.n_common_words)]
    return clusters, common


def generate_fixture(out_dir, cfg: FixtureConfig | None = None) -> dict:
    """Write the fixture files under ``out_dir`` and return the ground truth."""
    cfg = cfg or FixtureConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = substream(cfg.seed, STREAM_FIXTURE)

    n_items = cfg.n_clusters * cfg.items_per_cluster
    item_cluster = np.arange(n_items) // cfg.items_per_cluster
    user_cluster = np.arange(cfg.n_users) % cfg.n_clusters
    cluster_words, common_words = _cluster_vocab(cfg)

    # centered popularity weights shared by every cluster
    pop = 1.0 / np.arange(1, cfg.items_per_cluster + 1) ** cfg.zipf_exponent
    pop /= pop.sum()

    # aspect a of a cluster owns the contiguous word slice [a*g, (a+1)*g)
    group = cfg.words_per_cluster // cfg.n_aspects
    item_aspect = rng.integers(cfg.n_aspects, size=n_items)
    item_words = []
    for i in range(n_items):
        own = np.arange(item_aspect[i] * group, (item_aspect[i] + 1) * group)
        extra = rng.choice(cfg.words_per_cluster,
                           size=max(cfg.item_vocab_size - group, 0), replace=False)
        item_words.append(np.concatenate([own, extra]))
    user_tastes = [rng.choice(cfg.n_aspects, size=cfg.user_aspects, replace=False)
                   for _ in range(cfg.n_users)]

    records = []
    for u in range(cfg.n_users):
        c = int(user_cluster[u])
        own_items = np.arange(c * cfg.items_per_cluster, (c + 1) * cfg.items_per_cluster)
        other_items = np.setdiff1d(np.arange(n_items), own_items)
        favored = np.isin(item_aspect[own_items], user_tastes[u])
        weights = pop * np.where(favored, cfg.aspect_boost, 1.0)
        weights /= weights.sum()
        n_rev = int(rng.integers(cfg.reviews_low, cfg.reviews_high + 1))
        n_cross = int(rng.binomial(n_rev, cfg.cross_cluster_rate))
        n_own = n_rev - n_cross
        chosen = list(rng.choice(own_items, size=min(n_own, own_items.size),
                                 replace=False, p=weights))
        if n_cross:
            chosen += list(rng.choice(other_items, size=n_cross, replace=False))
        for item in chosen:
            item = int(item)
            positive = rng.random() < cfg.positive_rate
            stars = int(rng.integers(4, 6)) if positive else int(rng.integers(1, 4))
            length = int(rng.integers(cfg.review_len_low, cfg.review_len_high + 1))
            words = []
            ic = int(item_cluster[item])
            pool = item_words[item]
            for _ in range(length):
                if rng.random() < cfg.cluster_word_prob:
                    words.append(cluster_words[ic][int(pool[rng.integers(len(pool))])])
                else:
                    words.append(common_words[int(rng.integers(cfg.n_common_words))])
            records.append(ReviewRecord(f"u{u:04d}", f"i{item:04d}", stars, " ".join(words)))

    reviews_path = out / "reviews.tsv"
    save_reviews(reviews_path, records, fmt="tsv")

    centers = rng.standard_normal((cfg.n_clusters, cfg.embed_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    offsets = rng.standard_normal((cfg.n_aspects, cfg.embed_dim))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    embeddings_path = out / "embeddings.txt"
    with open(embeddings_path, "w", encoding="utf-8") as fh:
        for c, words in enumerate(cluster_words):
            for j, w in enumerate(words):
                vec = (centers[c] + cfg.aspect_offset * offsets[min(j // group, cfg.n_aspects - 1)]
                       + cfg.word_noise * rng.standard_normal(cfg.embed_dim))
                fh.write(w + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
        for w in common_words:
            vec = cfg.word_noise * rng.standard_normal(cfg.embed_dim)
            fh.write(w + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")

    truth = {
        "config": asdict(cfg),
        "n_reviews": len(records),
        "n_positive_reviews": sum(1 for r in records if r.rating > 3),
        "n_users_written": len({r.user_id for r in records}),
        "n_items_written": len({r.item_id for r in records}),
        "user_cluster": user_cluster.tolist(),
        "item_cluster": item_cluster.tolist(),
        "reviews_path": str(reviews_path),
        "embeddings_path": str(embeddings_path),
    }
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    return truth
