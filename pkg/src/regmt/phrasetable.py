"""Phrase tables read off a learned mapping ``W``.

For a test sentence ``S``, source phrases are the features of ``S`` and the
target phrases of ``s_f`` are those with ``W[t_f, s_f] > 0``:

    p(t_f | s_f) = W[t_f, s_f] / sum_t' W[t', s_f]        over positive t'
    p(s_f | t_f) = W[t_f, s_f] / sum_{s' in S} W[t_f, s']  over positive s'

Lines are written Moses style, ``src ||| tgt ||| p(s|t) p(t|s) 2.718``,
with the inverse probability first and a constant phrase penalty.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from regmt.features import ngram_set
from regmt.regression import MappingMatrix

PHRASE_PENALTY = "2.718"
SEP = " ||| "
TTABLE_LIMIT = 20


@dataclass(frozen=True)
class PhraseTableEntry:
    src_phrase: str
    tgt_phrase: str
    p_inv: float
    p_dir: float
    penalty: str = PHRASE_PENALTY


def derive_entries(w: MappingMatrix, S) -> list[PhraseTableEntry]:
    src_idx, tgt_idx = w.src_index, w.tgt_index
    if src_idx is None or tgt_idx is None:
        raise ValueError("mapping carries no feature indices")
    cols = sorted(c for c in (src_idx.col(f) for f in ngram_set(S, src_idx.order_max))
                  if c is not None)
    if not cols:
        return []
    csc = w.w.tocsc()
    # positive part, restricted to the source features of S
    sub = csc[:, cols].toarray()
    sub[sub < 0] = 0.0
    col_sums = sub.sum(axis=0)
    row_sums = sub.sum(axis=1)
    entries = []
    for k, s_col in enumerate(cols):
        rows = np.flatnonzero(sub[:, k] > 0)
        for r in rows:
            v = sub[r, k]
            entries.append(PhraseTableEntry(src_idx.feature(s_col), tgt_idx.feature(int(r)),
                                            float(v / row_sums[r]), float(v / col_sums[k])))
    return entries


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def sort_entries(entries) -> list[PhraseTableEntry]:
    return sorted(entries, key=lambda e: (e.src_phrase, -e.p_dir, e.tgt_phrase))


def truncate(entries, limit: int = TTABLE_LIMIT) -> list[PhraseTableEntry]:
    """Keep the ``limit`` best entries (by direct probability) per source phrase."""
    out = []
    for _, group in groupby(sort_entries(entries), key=lambda e: e.src_phrase):
        out.extend(list(group)[:limit])
    return out


def format_entry(e: PhraseTableEntry) -> str:
    return SEP.join((e.src_phrase, e.tgt_phrase,
                     f"{_fmt(e.p_inv)} {_fmt(e.p_dir)} {e.penalty}"))


def write_moses(entries, path, limit: int | None = None) -> int:
    """Write a text phrase table; returns the number of lines written."""
    entries = list(entries)
    if not entries:
        raise ValueError("no phrase table entries to write")
    rows = truncate(entries, limit) if limit else sort_entries(entries)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in rows:
            f.write(format_entry(e) + "\n")
    return len(rows)


def read_moses(path) -> list[PhraseTableEntry]:
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            src, tgt, scores = line.split(SEP)
            p_inv, p_dir, penalty = scores.split(" ")
            entries.append(PhraseTableEntry(src, tgt, float(p_inv), float(p_dir), penalty))
    return entries


def direct_sums(entries) -> dict[str, float]:
    sums = defaultdict(float)
    for e in entries:
        sums[e.src_phrase] += e.p_dir
    return dict(sums)


def inverse_sums(entries) -> dict[str, float]:
    sums = defaultdict(float)
    for e in entries:
        sums[e.tgt_phrase] += e.p_inv
    return dict(sums)


def write_manifest(tables: dict, path) -> None:
    """``tables``: test id -> phrase table path."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump({str(k): str(v) for k, v in sorted(tables.items())}, f, indent=1)
        f.write("\n")
