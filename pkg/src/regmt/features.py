"""Word n-gram feature maps, training matrices and the spectrum kernel.

A sentence maps to a sparse vector with one entry per distinct n-gram of
length ``p <= order``; the entry is ``p * count``. Then for two sentences

    sum_g phi(x)_g * phi(x')_g / p(g) == k(x, x')

where ``k`` is the p-weighted n-spectrum kernel computed by
:func:`spectrum_kernel`. Pass ``weighted=False`` to store raw counts.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from regmt.corpus import ParallelCorpus, Sentence

FROZEN = "frozen"
GROWING = "growing"


def _tokens(s) -> Sequence[str]:
    return s.tokens if isinstance(s, Sentence) else s


def ngram_counts(tokens: Sequence[str], order: int) -> Counter:
    """Counts of every n-gram of length 1..order, keyed by space-joined tokens."""
    counts = Counter()
    for p in range(1, order + 1):
        for i in range(len(tokens) - p + 1):
            counts[" ".join(tokens[i:i + p])] += 1
    return counts


def ngram_set(s, order: int) -> set[str]:
    return set(ngram_counts(_tokens(s), order))


def feature_order(feature: str) -> int:
    return feature.count(" ") + 1


class FeatureIndex:
    """Bijection between n-gram strings and dense column ids."""

    def __init__(self, order_max: int, features: Iterable[str] = ()):
        if order_max < 1:
            raise ValueError("order_max must be >= 1")
        self.order_max = order_max
        self.feature_to_col: dict[str, int] = {}
        self.col_to_feature: list[str] = []
        for f in features:
            self.add(f)

    def __len__(self) -> int:
        return len(self.col_to_feature)

    def __contains__(self, feature: str) -> bool:
        return feature in self.feature_to_col

    def __iter__(self) -> Iterator[str]:
        return iter(self.col_to_feature)

    def col(self, feature: str) -> int | None:
        return self.feature_to_col.get(feature)

    def feature(self, col: int) -> str:
        return self.col_to_feature[col]

    def add(self, feature: str) -> int:
        col = self.feature_to_col.get(feature)
        if col is None:
            if not 1 <= feature_order(feature) <= self.order_max:
                raise ValueError(f"feature {feature!r} longer than order {self.order_max}")
            col = len(self.col_to_feature)
            self.feature_to_col[feature] = col
            self.col_to_feature.append(feature)
        return col

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for col, feat in enumerate(self.col_to_feature):
                f.write(json.dumps({"col": col, "n": feature_order(feat), "feature": feat},
                                   ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path, order_max: int | None = None) -> "FeatureIndex":
        rows = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rows.append(json.loads(line))
        rows.sort(key=lambda r: r["col"])
        if [r["col"] for r in rows] != list(range(len(rows))):
            raise ValueError("column ids are not dense")
        order = order_max or max((r["n"] for r in rows), default=1)
        return cls(order, (r["feature"] for r in rows))


@dataclass
class SparseVector:
    entries: dict[int, float] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self):
        for k, v in list(self.entries.items()):
            if not math.isfinite(v):
                raise ValueError(f"non-finite value at column {k}")
            if v == 0:
                del self.entries[k]

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if isinstance(other, SparseVector):
            return self.entries == other.entries
        return NotImplemented

    def get(self, col: int, default: float = 0.0) -> float:
        return self.entries.get(col, default)

    def items(self):
        return self.entries.items()

    def dot(self, other: "SparseVector") -> float:
        a, b = (self, other) if len(self) <= len(other) else (other, self)
        return sum(v * b.entries.get(k, 0.0) for k, v in a.entries.items())

    def scaled(self, a: float) -> "SparseVector":
        return SparseVector({k: a * v for k, v in self.entries.items()})

    def __add__(self, other: "SparseVector") -> "SparseVector":
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out.get(k, 0.0) + v
        return SparseVector(out)

    def to_dense(self, n: int) -> np.ndarray:
        x = np.zeros(n)
        for k, v in self.entries.items():
            x[k] = v
        return x

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseVector":
        nz = np.flatnonzero(x)
        return cls({int(k): float(x[k]) for k in nz})


def extract(sentence, index: FeatureIndex, mode: str = FROZEN,
            weighted: bool = True) -> SparseVector:
    """Feature vector of ``sentence`` over ``index``.

    In growing mode unseen n-grams are appended to ``index``; in frozen mode
    they are skipped and counted on ``result.skipped``.
    """
    if mode not in (FROZEN, GROWING):
        raise ValueError(f"unknown mode {mode!r}")
    entries = {}
    skipped = 0
    for gram, count in ngram_counts(_tokens(sentence), index.order_max).items():
        if mode == GROWING:
            col = index.add(gram)
        else:
            col = index.col(gram)
            if col is None:
                skipped += 1
                continue
        entries[col] = float(feature_order(gram) * count if weighted else count)
    return SparseVector(entries, skipped)


def spectrum_kernel(x, x2, n: int) -> int:
    """p-weighted n-spectrum word kernel.

    Sum over n-gram lengths ``p <= n`` and all position pairs ``(i, j)`` of
    ``p`` whenever the length-``p`` windows at ``i`` and ``j`` match; grouped
    by distinct n-gram this is ``sum_g p(g) * count_x(g) * count_x2(g)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    a = ngram_counts(_tokens(x), n)
    b = ngram_counts(_tokens(x2), n)
    if len(a) > len(b):
        a, b = b, a
    return sum(feature_order(g) * c * b[g] for g, c in a.items() if g in b)


@dataclass
class FeatureMatrix:
    """Training instances as columns of an ``N x m`` sparse matrix."""

    data: sp.csc_matrix
    index: FeatureIndex

    @property
    def m(self) -> int:
        return self.data.shape[1]

    @property
    def columns(self) -> list[SparseVector]:
        csc = self.data.tocsc()
        return [SparseVector({int(r): float(v) for r, v in
                              zip(csc.indices[csc.indptr[j]:csc.indptr[j + 1]],
                                  csc.data[csc.indptr[j]:csc.indptr[j + 1]])})
                for j in range(self.m)]

    def dense(self) -> np.ndarray:
        return self.data.toarray()


def _stack(vectors: list[SparseVector], index: FeatureIndex) -> FeatureMatrix:
    rows, cols, vals = [], [], []
    for j, v in enumerate(vectors):
        for r, x in v.items():
            rows.append(r)
            cols.append(j)
            vals.append(x)
    data = sp.csc_matrix((vals, (rows, cols)), shape=(len(index), len(vectors)))
    return FeatureMatrix(data, index)


def build_matrices(train: ParallelCorpus, order: int, weighted: bool = True):
    """Source and target feature matrices over ``train``, with their indices."""
    if not len(train):
        raise ValueError("empty training set")
    src_idx, tgt_idx = FeatureIndex(order), FeatureIndex(order)
    xs = [extract(p.source, src_idx, GROWING, weighted) for p in train]
    ys = [extract(p.target, tgt_idx, GROWING, weighted) for p in train]
    return _stack(xs, src_idx), _stack(ys, tgt_idx), src_idx, tgt_idx


class UndefinedCoverageError(ValueError):
    pass


def coverage(test_feats: set[str], train_feats: set[str]) -> float:
    """Type-level fraction of ``test_feats`` present in ``train_feats``."""
    if not test_feats:
        raise UndefinedCoverageError("coverage of an empty feature set is undefined")
    return len(test_feats & train_feats) / len(test_feats)


def corpus_features(sentences: Iterable, order: int) -> set[str]:
    out = set()
    for s in sentences:
        out |= ngram_set(s, order)
    return out


def write_coo(matrix, path) -> None:
    """Write a scipy sparse matrix as ``row col value`` lines, header first."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# shape {coo.shape[0]} {coo.shape[1]}\n")
        for k in order:
            f.write(f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}\n")


def read_coo(path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    shape = None
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("# shape"):
                shape = tuple(int(t) for t in line.split()[2:4])
            elif line.startswith("#") or not line.strip():
                continue
            else:
                r, c, v = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
