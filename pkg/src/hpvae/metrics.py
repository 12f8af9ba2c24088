"""Top-N ranking metrics and the shared fold-in evaluation loop.

Metric definitions (documented here and in every report header):

* Recall@k  = |top-k of the ranking  intersect  held-out| / min(k, |held-out|)
* NDCG@k    = DCG@k / IDCG, binary gains, discount 1/log2(1 + rank)
  with ranks 1-indexed and IDCG the DCG of an ideal ranking of the
  held-out set.

Evaluation folds in each user on the observed portion of their row,
ranks items with the observed ones excluded, and scores the ranking
against the held-out portion; aggregates are plain means over users.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionMatrix, fold_in_pairs

METRIC_FORMULAS = ("recall@k = |top-k & held-out| / min(k, |held-out|); "
                   "ndcg@k = sum_{hits at rank r<=k} 1/log2(1+r) / ideal DCG")


def recall_at_k(ranking, held_out, k: int) -> float:
    """Truncated recall with min(k, |held_out|) normalization."""
    held = set(int(i) for i in held_out)
    if not held:
        raise ValueError("held_out must be non-empty")
    hits = sum(1 for item in ranking[:k] if int(item) in held)
    return hits / min(k, len(held))


def ndcg_at_k(ranking, held_out, k: int = 100) -> float:
    """Binary-relevance NDCG truncated at rank k."""
    held = set(int(i) for i in held_out)
    if not held:
        raise ValueError("held_out must be non-empty")
    dcg = 0.0
    for rank, item in enumerate(ranking[:k], start=1):
        if int(item) in held:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(k, len(held)) + 1))
    return dcg / ideal


@dataclass
class EvalReport:
    """Per-user and aggregate ranking scores for one (model, text feature) pair."""

    model: str
    mode: str
    text_feature: str
    per_user: dict            # metric name -> np.ndarray of per-user scores
    user_indices: np.ndarray
    n_skipped: int
    meta: dict = field(default_factory=dict)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_user[metric]))

    def std(self, metric: str) -> float:
        return float(np.std(self.per_user[metric]))

    def machine_lines(self) -> list:
        """One JSON record per metric, keyed by (model, mode, text feature)."""
        lines = []
        for metric in sorted(self.per_user):
            lines.append(json.dumps({
                "model": self.model,
                "mode": self.mode,
                "text_feature": self.text_feature,
                "metric": metric,
                "mean": self.mean(metric),
                "std": self.std(metric),
                "n_users": int(self.user_indices.size),
                "n_skipped": self.n_skipped,
                **self.meta,
            }, sort_keys=True))
        return lines

    def table(self) -> str:
        header = (f"# {METRIC_FORMULAS}\n"
                  f"# users evaluated: {self.user_indices.size}, "
                  f"skipped (too few positives): {self.n_skipped}\n")
        cols = ["model", "text_feat"] + sorted(self.per_user)
        row = [self.model, self.text_feature] + [
            f"{self.mean(m):.4f} ({self.std(m):.4f})" for m in sorted(self.per_user)]
        widths = [max(len(c), len(r)) for c, r in zip(cols, row)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return header + fmt.format(*cols) + "\n" + fmt.format(*row) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.machine_lines():
                fh.write(line + "\n")


def evaluate(ranker, matrix: InteractionMatrix, users, fraction: float = 0.8,
             seed: int = 0, ndcg_k: int = 100, recall_ks=(20, 50),
             model: str = "", mode: str = "", text_feature: str = "-",
             meta: dict | None = None) -> EvalReport:
    """Fold-in evaluation of ``ranker`` over the given user indices.

    The ranker must expose ``rank_for_user(user, x_obs, observed)``
    returning a permutation of all items with the observed items ranked
    after every other item.  Users with fewer than two positives are
    skipped and counted.
    """
    pairs, n_skipped = fold_in_pairs(matrix, users, fraction, seed)
    metric_names = [f"ndcg@{ndcg_k}"] + [f"recall@{k}" for k in recall_ks]
    scores = {m: [] for m in metric_names}
    evaluated = []
    for u in sorted(pairs):
        observed, held_out = pairs[u]
        x_obs = np.zeros(matrix.n_items, dtype=np.float64)
        x_obs[observed] = 1.0
        ranking = np.asarray(ranker.rank_for_user(u, x_obs, observed))
        _check_permutation(ranking, matrix.n_items)
        scores[f"ndcg@{ndcg_k}"].append(ndcg_at_k(ranking, held_out, k=ndcg_k))
        for k in recall_ks:
            scores[f"recall@{k}"].append(recall_at_k(ranking, held_out, k=k))
        evaluated.append(u)
    if not evaluated:
        raise ValueError("no users could be evaluated (all rows too small)")
    return EvalReport(model=model, mode=mode, text_feature=text_feature,
                      per_user={m: np.array(v) for m, v in scores.items()},
                      user_indices=np.array(evaluated, dtype=np.int64),
                      n_skipped=n_skipped, meta=meta or {})


def _check_permutation(ranking: np.ndarray, n_items: int) -> None:
    if ranking.shape != (n_items,) or not np.array_equal(np.sort(ranking), np.arange(n_items)):
        raise ValueError("ranker did not return a permutation of all items")
