"""Interpolated absolute-discounting n-gram language model."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class LmModel:
    """Word n-gram model with a single discount ``D`` at every order.

    ``p(w | h) = max(c(h w) - D, 0) / c(h) + D * N1+(h .) / c(h) * p(w | h')``
    where ``h'`` drops the oldest word of ``h``; unseen contexts defer to
    ``h'`` entirely. The recursion ends in a uniform distribution over the
    vocabulary (``</s>`` included) plus one unknown-word slot.
    """

    def __init__(self, order: int = 3, discount: float = 0.75):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        self.order = order
        self.discount = discount
        self.vocab: set[str] = set()
        # counts[k][context tuple of length k][word]
        self.counts: list[dict[tuple, Counter]] = [defaultdict(Counter) for _ in range(order)]
        self._ctx_total: list[dict[tuple, int]] = []
        self._cache: dict = {}

    def fit(self, sentences: Iterable) -> "LmModel":
        for s in sentences:
            toks = list(s.tokens if hasattr(s, "tokens") else s)
            self.vocab.update(toks)
            padded = [BOS] * (self.order - 1) + toks + [EOS]
            for i in range(self.order - 1, len(padded)):
                w = padded[i]
                for k in range(self.order):
                    self.counts[k][tuple(padded[i - k:i])][w] += 1
        self.vocab.add(EOS)
        self.vocab.discard(UNK)
        self._ctx_total = [{h: sum(c.values()) for h, c in level.items()}
                           for level in self.counts]
        self._cache.clear()
        return self

    @property
    def support_size(self) -> int:
        return len(self.vocab) + 1

    def _map(self, w: str) -> str:
        return w if w in self.vocab or w == BOS else UNK

    def prob(self, word: str, context: Sequence[str] = ()) -> float:
        word = self._map(word)
        ctx = tuple(self._map(w) for w in context)[-(self.order - 1):] if self.order > 1 else ()
        if len(ctx) < self.order - 1:
            ctx = (BOS,) * (self.order - 1 - len(ctx)) + ctx
        key = (word, ctx)
        p = self._cache.get(key)
        if p is None:
            p = self._prob(word, ctx)
            self._cache[key] = p
        return p

    def _prob(self, word: str, ctx: tuple) -> float:
        p = 1.0 / self.support_size
        D = self.discount
        for k in range(len(ctx) + 1):
            h = ctx[len(ctx) - k:]
            total = self._ctx_total[k].get(h)
            if not total:
                continue
            dist = self.counts[k][h]
            p = max(dist.get(word, 0) - D, 0) / total + D * len(dist) / total * p
        return p

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        return math.log(self.prob(word, context))

    def backoff_weight(self, context: Sequence[str]) -> float:
        k = len(context)
        total = self._ctx_total[k].get(tuple(context)) if k < self.order else None
        if not total:
            return 1.0
        return self.discount * len(self.counts[k][tuple(context)]) / total

    def write(self, path) -> None:
        """Sorted ``n-gram <TAB> log-prob <TAB> log backoff`` lines."""
        lines = []
        for k, level in enumerate(self.counts):
            for h, dist in level.items():
                for w in dist:
                    gram = h + (w,)
                    bo = self.backoff_weight(gram) if k + 1 < self.order else 1.0
                    lines.append(f"{' '.join(gram)}\t{self.logprob(w, h)!r}\t{math.log(bo)!r}")
        lines.sort()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")


def train_lm(corpus: Iterable, order: int = 3, discount: float = 0.75) -> LmModel:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    return LmModel(order, discount).fit(corpus)


def lm_score(model: LmModel, tokens) -> float:
    """Natural-log probability of ``tokens`` followed by ``</s>``."""
    toks = list(tokens.tokens if hasattr(tokens, "tokens") else tokens)
    hist = [BOS] * (model.order - 1)
    total = 0.0
    for w in toks + [EOS]:
        total += model.logprob(w, hist)
        if model.order > 1:
            hist = hist[1:] + [w]
    return total
