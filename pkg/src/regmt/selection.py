"""Per-test-sentence training instance selection.

The ``dice`` selector scores a candidate pair ``(s_i, t_i)`` for test source
``S`` by how strongly the tokens of the features of ``S`` associate with the
tokens of ``t_i``, normalised by ``|t_i| * (log|s_i| + eps)``, the log of the
number of ways to word-align the candidate.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass

from regmt.corpus import Pair, ParallelCorpus, Sentence
from regmt.features import corpus_features, coverage, ngram_set

PRODUCT = "product"
SUM = "sum"


@dataclass(frozen=True)
class SelectionConfig:
    m: int = 100
    feature_order: int = 2
    denominator: str = PRODUCT
    smoothing: float = 1e-6

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.smoothing <= 0:
            raise ValueError("smoothing must be > 0")
        if self.denominator not in (PRODUCT, SUM):
            raise ValueError(f"unknown denominator {self.denominator!r}")
        if self.feature_order < 1:
            raise ValueError("feature_order must be >= 1")


@dataclass
class CooccurrenceTable:
    """Per-pair presence counts between source features and target tokens."""

    c_xy: dict[str, Counter]
    c_x: Counter
    c_y: Counter
    universe: str = ""

    def count(self, x: str, y: str) -> int:
        row = self.c_xy.get(x)
        return row[y] if row is not None else 0


def build_cooccurrence(train: ParallelCorpus, order: int = 1) -> CooccurrenceTable:
    if not len(train):
        raise ValueError("empty training set")
    c_xy: dict[str, Counter] = defaultdict(Counter)
    c_x, c_y = Counter(), Counter()
    for p in train:
        xs = ngram_set(p.source, order)
        ys = set(p.target.tokens)
        c_x.update(xs)
        c_y.update(ys)
        for x in xs:
            c_xy[x].update(ys)
    return CooccurrenceTable(dict(c_xy), c_x, c_y,
                             universe=f"{len(train)} pairs, source order {order}")


def dice(x: str, y: str, table: CooccurrenceTable, denominator: str = PRODUCT) -> float:
    """``2 C(x,y) / (C(x) C(y))`` or, in sum mode, ``2 C(x,y) / (C(x) + C(y))``."""
    cx, cy = table.c_x.get(x, 0), table.c_y.get(y, 0)
    if cx == 0 or cy == 0:
        return 0.0
    cxy = table.count(x, y)
    if denominator == PRODUCT:
        return 2.0 * cxy / (cx * cy)
    return 2.0 * cxy / (cx + cy)


def _token_weights(S: Sentence, order: int) -> Counter:
    # each distinct token once per feature of S it occurs in
    w = Counter()
    for feat in ngram_set(S, order):
        w.update(set(feat.split(" ")))
    return w


def target_affinity(S: Sentence, table: CooccurrenceTable,
                    config: SelectionConfig) -> dict[str, float]:
    """Map target token ``t`` to ``sum_{x in X(S)} sum_{y in Y(x)} dice(y, t)``."""
    aff: dict[str, float] = defaultdict(float)
    for y, w in _token_weights(S, config.feature_order).items():
        row = table.c_xy.get(y)
        if not row:
            continue
        for t in row:
            d = dice(y, t, table, config.denominator)
            if d:
                aff[t] += w * d
    return aff


def _normalised(target: Sentence, source_len: int, affinity: dict[str, float],
                smoothing: float) -> float:
    total = sum(affinity.get(t, 0.0) for t in target.tokens)
    if total == 0:
        return 0.0
    return total / (len(target) * (math.log(source_len) + smoothing))


def score_pair(S: Sentence, candidate: Pair, table: CooccurrenceTable,
               config: SelectionConfig) -> float:
    if not len(candidate.target):
        raise ValueError("candidate target is empty")
    return _normalised(candidate.target, len(candidate.source),
                       target_affinity(S, table, config), config.smoothing)


def rank_instances(S: Sentence, train: ParallelCorpus, table: CooccurrenceTable,
                   config: SelectionConfig) -> list[tuple[int, float]]:
    """``(pair id, score)`` for the top ``config.m`` pairs; ties go to smaller ids."""
    aff = target_affinity(S, table, config)
    scored = [(p.id, _normalised(p.target, len(p.source), aff, config.smoothing))
              for p in train]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:config.m]


def select_instances(S: Sentence, train: ParallelCorpus, table: CooccurrenceTable,
                     config: SelectionConfig) -> list[int]:
    return [i for i, _ in rank_instances(S, train, table, config)]


def select_random(S: Sentence, train: ParallelCorpus, m: int, seed: int) -> list[int]:
    ids = train.ids
    return random.Random(seed).sample(ids, min(m, len(ids)))


def select_ngram_overlap(S: Sentence, train: ParallelCorpus, m: int) -> list[int]:
    """Rank by the number of distinct source bigrams shared with ``S``."""
    grams = ngram_set(S, 2) - ngram_set(S, 1)
    scored = []
    for p in train:
        theirs = ngram_set(p.source, 2)
        scored.append((p.id, len(grams & theirs)))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [i for i, _ in scored[:m]]


def selection_coverage(source: Sentence, reference: Sentence, selected: ParallelCorpus,
                       order: int, exact: bool = False) -> tuple[float, float]:
    """(scov, tcov) of one test pair against the selected training pairs.

    Features are n-grams up to ``order``, or of length exactly ``order`` when
    ``exact`` is set. Sentences without such features count as fully covered.
    """
    def feats(sents):
        out = corpus_features(sents, order)
        if exact and order > 1:
            out -= corpus_features(sents, order - 1)
        return out

    src, tgt = feats([source]), feats([reference])
    scov = coverage(src, feats(selected.sources)) if src else 1.0
    tcov = coverage(tgt, feats(selected.targets)) if tgt else 1.0
    return scov, tcov


def write_selection_manifest(records, path) -> None:
    """``records``: iterable of dicts with test_id, selector, ids, scores."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(list(records), f, indent=1)
        f.write("\n")
