"""Feature-level classification metrics, dev tuning and corpus BLEU."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from regmt.features import FeatureIndex, SparseVector


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("negative confusion count")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Threshold:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class Metrics:
    ber: float
    prec: float
    rec: float
    f1: float


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def metrics(c: ConfusionCounts) -> Metrics:
    prec = _ratio(c.tp, c.tp + c.fp)
    rec = _ratio(c.tp, c.tp + c.fn)
    ber = (_ratio(c.fp, c.tn + c.fp) + _ratio(c.fn, c.tp + c.fn)) / 2
    # integer form, so equal ratios give bit-identical F1 and ties stay ties
    return Metrics(ber, prec, rec, _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn))


def f1_score(prec: float, rec: float) -> float:
    return _ratio(2 * prec * rec, prec + rec)


def binarize(yhat: SparseVector, universe: FeatureIndex | int | None,
             thr: Threshold) -> set[int]:
    """Ids ``j`` with ``yhat_j > thr``; ids missing from ``yhat`` count as 0.

    The universe is only consulted for negative thresholds, where untouched
    features clear the cutoff.
    """
    pred = {j for j, v in yhat.items() if v > thr.value}
    if thr.value < 0 and universe is not None:
        n = universe if isinstance(universe, int) else len(universe)
        pred |= {j for j in range(n) if j not in yhat.entries}
    return pred


def confusion(pred: set, gold: set, universe_size: int) -> ConfusionCounts:
    tp = len(pred & gold)
    fp = len(pred - gold)
    fn = len(gold - pred)
    tn = universe_size - tp - fp - fn
    if tn < 0:
        raise ValueError("prediction and gold sets exceed the universe")
    return ConfusionCounts(tp, tn, fp, fn)


@dataclass
class DevSample:
    """One dev sentence: prediction, gold ids and closed universe size.

    Gold features outside the training index get ids ``>= len(index)``; the
    universe size must count them.
    """

    yhat: SparseVector
    gold: set[int]
    universe_size: int


def _dense_scores(samples: Sequence[DevSample]):
    vals, gold = [], []
    for s in samples:
        v = np.zeros(s.universe_size)
        for j, x in s.yhat.items():
            v[j] = x
        g = np.zeros(s.universe_size, dtype=bool)
        g[list(s.gold)] = True
        vals.append(v)
        gold.append(g)
    return np.concatenate(vals), np.concatenate(gold)


def threshold_curve(samples: Sequence[DevSample]):
    """Candidate cutoffs (ascending) and the micro-averaged F1 at each.

    Candidates are the distinct predicted values on dev plus 0.
    """
    v, g = _dense_scores(samples)
    cand = np.unique(np.concatenate([[0.0], [x for s in samples for x in s.yhat.entries.values()]]))
    order = np.sort(v)
    gold_sorted = np.sort(v[g])
    # number of values strictly above each cutoff
    above = v.size - np.searchsorted(order, cand, side="right")
    tp = gold_sorted.size - np.searchsorted(gold_sorted, cand, side="right")
    fp = above - tp
    fn = gold_sorted.size - tp
    den = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, den, out=np.zeros(cand.size), where=den > 0)
    return cand, f1


def tune_threshold(samples: Sequence[DevSample]) -> Threshold:
    """Cutoff maximising micro F1 on dev; ties go to the smallest cutoff."""
    if not samples:
        raise ValueError("empty dev set")
    cand, f1 = threshold_curve(samples)
    return Threshold(float(cand[int(np.argmax(f1))]))


def micro_confusion(samples: Iterable[DevSample], thr: Threshold) -> ConfusionCounts:
    total = ConfusionCounts()
    for s in samples:
        total = total + confusion(binarize(s.yhat, s.universe_size, thr), s.gold,
                                  s.universe_size)
    return total


def tune_grid(grid: Sequence, dev_f1: Callable[[object], float]):
    """Best grid value by dev F1; ties go to the earliest, so pass grids ascending.

    Returns ``(best, scores)`` with ``scores`` aligned to ``grid``.
    """
    if not grid:
        raise ValueError("empty grid")
    scores = [dev_f1(v) for v in grid]
    best = max(range(len(grid)), key=lambda k: (scores[k], -k))
    return grid[best], scores


def tune_lambda(grid: Sequence[float], dev_f1: Callable[[float], float]):
    return tune_grid(sorted(grid), dev_f1)


def tune_fsr_iters(grid: Sequence[int], dev_f1: Callable[[int], float]):
    return tune_grid(sorted(grid), dev_f1)


# ---------------------------------------------------------------------------
# BLEU


def _tok(s) -> Sequence[str]:
    return s.tokens if hasattr(s, "tokens") else (s.split() if isinstance(s, str) else s)


def bleu_stats(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> list[int]:
    """``[c, r, match_1, total_1, ..., match_n, total_n]`` for one pair."""
    stats = [len(hyp), len(ref)]
    for n in range(1, max_n + 1):
        h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
        r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
        stats.append(sum(min(c, r[g]) for g, c in h.items()))
        stats.append(max(len(hyp) - n + 1, 0))
    return stats


def bleu_from_stats(stats: Sequence[int], max_n: int = 4) -> float:
    c, r = stats[0], stats[1]
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        if match == 0 or total == 0:
            return 0.0
        log_p += math.log(match / total)
    bp = min(1.0, math.exp(1 - r / c))
    return bp * math.exp(log_p / max_n)


def bleu(hypotheses: Sequence, references: Sequence, max_n: int = 4) -> float:
    """Corpus BLEU, uniform weights, no smoothing."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ValueError("no sentences")
    total = [0] * (2 + 2 * max_n)
    for h, r in zip(hypotheses, references):
        for k, x in enumerate(bleu_stats(_tok(h), _tok(r), max_n)):
            total[k] += x
    return bleu_from_stats(total, max_n)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    ber: float = 0.0
    prec: float = 0.0
    rec: float = 0.0
    f1: float = 0.0
    scov: float = 0.0
    tcov: float = 0.0
    bleu: float | None = None
    macro_f1: float | None = None
    config: dict = field(default_factory=dict)
    per_sentence: list = field(default_factory=list)

    @classmethod
    def from_counts(cls, c: ConfusionCounts, **kw) -> "EvalReport":
        m = metrics(c)
        return cls(ber=m.ber, prec=m.prec, rec=m.rec, f1=m.f1, **kw)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("per_sentence")
        cfg = d.pop("config")
        return {**cfg, **d}

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")


def write_csv(reports: Sequence[EvalReport], path) -> None:
    rows = [r.row() for r in reports]
    fields = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
