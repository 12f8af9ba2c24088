"""Review ingestion, filtering, the sparse interaction matrix, and user splits.

The pipeline is: load -> (optional English filter) -> binarize ->
keep positives -> activity cutoffs to a fixed point -> deduplicate ->
build matrix -> user-level train/validation/test split.  Every stage is
a pure function of its inputs plus a seed, so the whole pipeline is
reproducible bit for bit.

Two input formats are supported:

* TSV: ``user_id<TAB>item_id<TAB>rating<TAB>text`` with tabs, newlines
  and backslashes in the text escaped as ``\\t``, ``\\n``, ``\\r``,
  ``\\\\``.  An optional header row is auto-detected.
* JSON lines: one object per line with keys ``user_id``, ``item_id``,
  ``stars``, ``text``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, FormatError
from .serialize import load_bundle, save_bundle
from .util import STREAM_FOLD_IN, STREAM_SPLIT, substream


@dataclass(frozen=True)
class ReviewRecord:
    user_id: str
    item_id: str
    rating: int
    text: str = ""


class LoadResult(NamedTuple):
    records: list
    n_malformed: int


_TSV_HEADER_FIELDS = ("user_id", "item_id", "rating", "text")


def _escape_text(text: str) -> str:
    return (text.replace("\\", "\\\\").replace("\t", "\\t")
            .replace("\n", "\\n").replace("\r", "\\r"))


def _unescape_text(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def load_reviews(path, fmt: str = "tsv") -> LoadResult:
    """Read review records in file order.

    Malformed lines are skipped and counted; more than 10% malformed
    lines raises FormatError, which usually means the wrong ``fmt``.
    """
    if fmt not in ("tsv", "jsonl"):
        raise ValueError(f"unknown review format {fmt!r}")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise OSError(f"cannot read reviews file {path}: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()

    records = []
    n_malformed = 0
    for lineno, line in enumerate(lines):
        if not line.strip():
            continue
        if fmt == "tsv":
            fields = line.split("\t")
            if lineno == 0 and tuple(f.strip().lower() for f in fields) == _TSV_HEADER_FIELDS:
                continue
            if len(fields) != 4:
                n_malformed += 1
                continue
            user_id, item_id, rating_s, text = fields
            try:
                rating = int(rating_s)
            except ValueError:
                n_malformed += 1
                continue
            records.append(ReviewRecord(user_id, item_id, rating, _unescape_text(text)))
        else:
            try:
                obj = json.loads(line)
                records.append(ReviewRecord(str(obj["user_id"]), str(obj["item_id"]),
                                            int(obj["stars"]), str(obj.get("text", ""))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                n_malformed += 1
    total = len(records) + n_malformed
    if total > 0 and n_malformed > 0.10 * total:
        raise FormatError(
            f"{path}: {n_malformed}/{total} malformed lines; is the format really {fmt!r}?")
    return LoadResult(records, n_malformed)


def save_reviews(path, records, fmt: str = "tsv") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "tsv":
            fh.write("\t".join(_TSV_HEADER_FIELDS) + "\n")
            for r in records:
                fh.write(f"{r.user_id}\t{r.item_id}\t{r.rating}\t{_escape_text(r.text)}\n")
        elif fmt == "jsonl":
            for r in records:
                fh.write(json.dumps({"user_id": r.user_id, "item_id": r.item_id,
                                     "stars": r.rating, "text": r.text}) + "\n")
        else:
            raise ValueError(f"unknown review format {fmt!r}")


def ascii_letter_ratio(text: str) -> float:
    """Fraction of alphabetic characters that are ASCII; 1.0 when no letters."""
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return 1.0
    return sum(ord(c) < 128 for c in letters) / len(letters)


def filter_english(records, min_ratio: float = 0.9):
    """Crude language gate: keep reviews whose letters are mostly ASCII."""
    kept = [r for r in records if ascii_letter_ratio(r.text) >= min_ratio]
    return kept, len(records) - len(kept)


def binarize(records, threshold: int, star_range=(1, 5)):
    """Map ratings to {0,1} with the strict rule rating > threshold -> 1."""
    lo, hi = star_range
    if not lo <= threshold <= hi:
        raise ValueError(f"threshold {threshold} outside star range {star_range}")
    return [ReviewRecord(r.user_id, r.item_id, int(r.rating > threshold), r.text)
            for r in records]


def positives(records):
    return [r for r in records if r.rating == 1]


def apply_cutoffs(records, min_user_reviews: int, min_item_raters: int):
    """Drop low-activity users/items, iterating to a fixed point.

    A single user-then-item pass can re-violate the user constraint, so
    both filters are repeated until neither removes anything.  The empty
    result is an error rather than a silent empty dataset.
    """
    if min_user_reviews < 1 or min_item_raters < 1:
        raise ValueError("cutoff thresholds must be >= 1")
    current = list(records)
    while True:
        user_counts = Counter(r.user_id for r in current)
        kept = [r for r in current if user_counts[r.user_id] >= min_user_reviews]
        item_counts = Counter(r.item_id for r in kept)
        kept = [r for r in kept if item_counts[r.item_id] >= min_item_raters]
        if len(kept) == len(current):
            break
        current = kept
    if not current:
        raise DataError("empty-after-filtering: no records survive the activity cutoffs")
    return current


def dedupe_reviews(records):
    """Collapse duplicate (user, item) pairs, keeping the latest record's text."""
    by_pair = {}
    order = []
    for r in records:
        key = (r.user_id, r.item_id)
        if key not in by_pair:
            order.append(key)
        by_pair[key] = r
    return [by_pair[k] for k in order]


@dataclass
class InteractionMatrix:
    """Binarized user-item interactions in CSR-like form.

    ``indices[indptr[u]:indptr[u+1]]`` are the strictly increasing item
    indices of user ``u``'s positives.  ``user_ids``/``item_ids`` map
    row/column indices back to the raw identifiers (sorted, so the
    matrix is independent of record order).
    """

    user_ids: list
    item_ids: list
    indptr: np.ndarray
    indices: np.ndarray
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {uid: i for i, uid in enumerate(self.user_ids)}
        self.item_index = {iid: i for i, iid in enumerate(self.item_ids)}

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def row(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def dense_rows(self, users) -> np.ndarray:
        """Materialize the given user rows as a dense 0/1 float64 array."""
        users = np.asarray(users)
        out = np.zeros((users.size, self.n_items), dtype=np.float64)
        for k, u in enumerate(users):
            out[k, self.row(int(u))] = 1.0
        return out

    def density(self) -> float:
        return self.nnz / (self.n_users * self.n_items)

    def validate(self) -> None:
        if self.indptr[0] != 0 or self.indptr[-1] != self.indices.size:
            raise DataError("interaction matrix: corrupt row pointers")
        for u in range(self.n_users):
            row = self.row(u)
            if row.size == 0:
                raise DataError(f"interaction matrix: user row {u} is empty")
            if np.any(np.diff(row) <= 0):
                raise DataError(f"interaction matrix: user row {u} not strictly increasing")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n_items):
            raise DataError("interaction matrix: item index out of range")

    def to_csr(self):
        """Export as scipy.sparse.csr_matrix (optional dependency)."""
        from scipy.sparse import csr_matrix

        data = np.ones(self.indices.size, dtype=np.float64)
        return csr_matrix((data, self.indices, self.indptr),
                          shape=(self.n_users, self.n_items))

    def save(self, path, meta: dict | None = None) -> None:
        save_bundle(path, "interactions", {
            "indptr": self.indptr,
            "indices": self.indices,
            "user_ids": np.array(self.user_ids, dtype=np.str_),
            "item_ids": np.array(self.item_ids, dtype=np.str_),
        }, meta or {})

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "interactions")
        matrix = cls(user_ids=[str(u) for u in arrays["user_ids"]],
                     item_ids=[str(i) for i in arrays["item_ids"]],
                     indptr=arrays["indptr"].astype(np.int64),
                     indices=arrays["indices"].astype(np.int64))
        return matrix, meta


def build_matrix(records) -> InteractionMatrix:
    """Assemble the interaction matrix from binarized, filtered positives."""
    records = dedupe_reviews(records)
    user_ids = sorted({r.user_id for r in records})
    item_ids = sorted({r.item_id for r in records})
    uindex = {u: i for i, u in enumerate(user_ids)}
    iindex = {i: j for j, i in enumerate(item_ids)}
    rows = [[] for _ in user_ids]
    for r in records:
        rows[uindex[r.user_id]].append(iindex[r.item_id])
    indptr = np.zeros(len(user_ids) + 1, dtype=np.int64)
    indices = []
    for u, row in enumerate(rows):
        row = sorted(set(row))
        indices.extend(row)
        indptr[u + 1] = indptr[u] + len(row)
    return InteractionMatrix(user_ids=user_ids, item_ids=item_ids,
                             indptr=indptr, indices=np.array(indices, dtype=np.int64))


@dataclass
class SplitSpec:
    """Disjoint user index sets covering all users, plus the seed that made them."""

    train_users: np.ndarray
    val_users: np.ndarray
    test_users: np.ndarray
    seed: int
    fold_in_fraction: float = 0.8

    def validate(self, n_users: int) -> None:
        combined = np.concatenate([self.train_users, self.val_users, self.test_users])
        if not np.array_equal(np.sort(combined), np.arange(n_users)):
            raise DataError("split does not partition the user set")

    def save(self, path, meta: dict | None = None) -> None:
        m = dict(meta or {})
        m.update({"seed": self.seed, "fold_in_fraction": self.fold_in_fraction})
        save_bundle(path, "splits", {
            "train_users": self.train_users,
            "val_users": self.val_users,
            "test_users": self.test_users,
        }, m)

    @classmethod
    def load(cls, path):
        arrays, meta = load_bundle(path, "splits")
        spec = cls(train_users=arrays["train_users"].astype(np.int64),
                   val_users=arrays["val_users"].astype(np.int64),
                   test_users=arrays["test_users"].astype(np.int64),
                   seed=int(meta["seed"]),
                   fold_in_fraction=float(meta["fold_in_fraction"]))
        return spec, meta


def split_users(n_users: int, seed: int, fractions=(0.8, 0.1, 0.1),
                fold_in_fraction: float = 0.8) -> SplitSpec:
    """Seeded shuffle of all users, partitioned train/validation/test."""
    if n_users < 10:
        raise DataError(f"need at least 10 users to split, got {n_users}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    perm = substream(seed, STREAM_SPLIT).permutation(n_users)
    n_train = int(fractions[0] * n_users)
    n_val = int(fractions[1] * n_users)
    return SplitSpec(train_users=np.sort(perm[:n_train]),
                     val_users=np.sort(perm[n_train:n_train + n_val]),
                     test_users=np.sort(perm[n_train + n_val:]),
                     seed=seed, fold_in_fraction=fold_in_fraction)


class FoldInPair(NamedTuple):
    observed: np.ndarray
    held_out: np.ndarray


def fold_in_split(row: np.ndarray, fraction: float, rng: np.random.Generator) -> FoldInPair:
    """Split one user's positives into fold-in input and evaluation targets.

    The observed part gets ceil(fraction*n) items, capped at n-1 so the
    held-out side is never empty.  Rows with fewer than two positives
    cannot be evaluated and raise DataError.
    """
    n = len(row)
    if n < 2:
        raise DataError("too-few-items: need >= 2 positives to fold in")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fold-in fraction must be in (0, 1), got {fraction}")
    n_obs = min(int(np.ceil(fraction * n)), n - 1)
    perm = rng.permutation(n)
    observed = np.sort(np.asarray(row)[perm[:n_obs]])
    held_out = np.sort(np.asarray(row)[perm[n_obs:]])
    return FoldInPair(observed, held_out)


def fold_in_pairs(matrix: InteractionMatrix, users, fraction: float, seed: int):
    """Per-user fold-in pairs keyed by user index, plus the skipped-singleton count.

    Each user draws from its own (seed, user) substream, so pairs are
    stable regardless of evaluation order.
    """
    pairs = {}
    n_skipped = 0
    for u in users:
        u = int(u)
        try:
            pairs[u] = fold_in_split(matrix.row(u), fraction, substream(seed, STREAM_FOLD_IN, u))
        except DataError:
            n_skipped += 1
    return pairs, n_skipped


def dataset_stats(matrix: InteractionMatrix) -> dict:
    """Summary counts in the usual corpus-table shape."""
    return {
        "n_users": matrix.n_users,
        "n_items": matrix.n_items,
        "n_ratings": matrix.nnz,
        "sparsity_pct": 100.0 * matrix.density(),
    }
