"""Graph decoding of predicted target n-gram vectors.

Predicted n-grams become edges of a De Bruijn graph over ``(n-1)``-gram
contexts; a beam search walks from ``<s>`` to ``</s>`` without using any edge
more often than its multiplicity. Paths are scored by a weighted sum of four
features: summed edge weight, language model log-probability, the length
term ``exp(alpha * (l_R - |s| / |path|))`` and a future-cost estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from statistics import median
from typing import Callable, Sequence

from regmt.corpus import ParallelCorpus, Sentence
from regmt.features import FeatureIndex, SparseVector, feature_order
from regmt.lm import BOS as LM_BOS, EOS as LM_EOS, LmModel

START = ("<s>",)
END = ("</s>",)
ROUND = "round"
BINARY = "binary"


class DecodeEmptyError(ValueError):
    """No predicted feature cleared the decode threshold."""


@dataclass(frozen=True)
class Edge:
    src: tuple
    dst: tuple
    emit: tuple[str, ...]
    weight: float
    multiplicity: int
    ngram: str | None = None  # None for synthesized boundary edges


@dataclass
class DeBruijnGraph:
    order: int
    nodes: set = field(default_factory=set)
    edges: list[Edge] = field(default_factory=list)
    out: dict = field(default_factory=dict)

    def add_edge(self, e: Edge) -> None:
        self.out.setdefault(e.src, []).append(len(self.edges))
        self.edges.append(e)
        for n in (e.src, e.dst):
            if n not in (START, END):
                self.nodes.add(n)

    def ngram_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.ngram is not None]


def build_graph(yhat: SparseVector, tgt_index: FeatureIndex, decode_threshold: float = 0.0,
                order: int = 2, multiplicity: str = ROUND,
                restarts: bool = False) -> DeBruijnGraph:
    """Graph over the n-grams of length ``order`` with ``yhat > decode_threshold``.

    Predicted ``(order-1)``-grams also become nodes. The feature space has
    no sentence-boundary n-grams, so boundary edges are synthesized with
    zero weight: ``<s>`` links to nodes that look sentence-initial (more
    outgoing than incoming multiplicity, or no incoming edge at all; every
    node if none qualifies) and every node links to ``</s>``.

    With ``restarts`` every node also gets a zero-weight edge to each
    sentence-initial node, so a path can continue past a missing n-gram.
    """
    if order < 2:
        raise ValueError("decoding needs order >= 2")
    if multiplicity not in (ROUND, BINARY):
        raise ValueError(f"unknown multiplicity rule {multiplicity!r}")
    grams, contexts = [], []
    for col, v in sorted(yhat.items()):
        if v <= decode_threshold:
            continue
        feat = tgt_index.feature(col)
        p = feature_order(feat)
        if p == order:
            grams.append((feat, v))
        elif p == order - 1:
            contexts.append(tuple(feat.split(" ")))
    if not grams and not contexts:
        raise DecodeEmptyError("no predicted feature above the decode threshold")

    positive = [v for _, v in grams if v > 0]
    scale = median(positive) if positive else 1.0
    g = DeBruijnGraph(order)
    for feat, v in grams:
        toks = tuple(feat.split(" "))
        mult = 1 if multiplicity == BINARY else max(1, round(v / scale))
        g.add_edge(Edge(toks[:-1], toks[1:], toks[-1:], v, mult, feat))
    g.nodes.update(contexts)
    balance = {n: 0 for n in g.nodes}
    has_in = set()
    for e in g.edges:
        balance[e.src] += e.multiplicity
        balance[e.dst] -= e.multiplicity
        has_in.add(e.dst)
    # sentence-initial candidates: surplus out-degree or nothing incoming
    starts = [n for n in sorted(g.nodes) if balance[n] > 0 or n not in has_in]
    starts = starts or sorted(g.nodes)
    for node in starts:
        g.add_edge(Edge(START, node, node, 0.0, 1))
    if restarts:
        for node in sorted(g.nodes):
            for nxt in starts:
                if nxt != node:
                    g.add_edge(Edge(node, nxt, nxt, 0.0, 1))
    for node in sorted(g.nodes):
        g.add_edge(Edge(node, END, (), 0.0, 1))
    return g


@dataclass(frozen=True)
class DecoderWeights:
    w_est: float = 1.0
    w_lm: float = 1.0
    w_bp: float = 1.0
    w_fc: float = 1.0
    alpha: float = 1.0
    l_R: float = 1.0

    TUNABLE = ("w_est", "w_lm", "w_bp", "w_fc")

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, k)) for k in self.TUNABLE + ("alpha", "l_R")):
            raise ValueError("decoder weights must be finite")
        if self.l_R <= 0:
            raise ValueError("l_R must be > 0")

    def vector(self) -> tuple[float, float, float, float]:
        return (self.w_est, self.w_lm, self.w_bp, self.w_fc)

    def scaled(self, c: float) -> "DecoderWeights":
        return replace(self, **{k: c * getattr(self, k) for k in self.TUNABLE})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "DecoderWeights":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


def length_ratio(corpus: ParallelCorpus) -> float:
    """Corpus-level ``sum |source| / sum |target|``."""
    src = sum(len(p.source) for p in corpus)
    tgt = sum(len(p.target) for p in corpus)
    return src / tgt if tgt else 1.0


def brevity(src_len: int, path_len: int, alpha: float, l_R: float) -> float:
    if path_len <= 0:
        return 0.0
    return math.exp(alpha * (l_R - src_len / path_len))


@dataclass(frozen=True)
class PathHypothesis:
    node: tuple
    emitted: tuple[str, ...]
    used: tuple  # sorted ((edge id, uses), ...)
    edges: tuple[int, ...]
    est: float
    lm_logprob: float
    history: tuple[str, ...]
    done: bool = False
    complete: bool = False
    features: tuple = ()
    score: float = 0.0

    @property
    def sentence(self) -> Sentence:
        return Sentence.of(self.emitted)

    def uses(self, edge_id: int) -> int:
        for k, n in self.used:
            if k == edge_id:
                return n
        return 0


def future_cost(graph: DeBruijnGraph, hyp: PathHypothesis) -> float:
    """Total weight of not-yet-exhausted edges reachable from ``hyp.node``.

    An optimistic estimate of the edge weight still collectable.
    """
    if hyp.done:
        return 0.0
    used = dict(hyp.used)
    seen = {hyp.node}
    stack = [hyp.node]
    total = 0.0
    while stack:
        node = stack.pop()
        for k in graph.out.get(node, ()):
            e = graph.edges[k]
            if used.get(k, 0) >= e.multiplicity:
                continue
            total += e.weight
            if e.dst not in seen:
                seen.add(e.dst)
                stack.append(e.dst)
    return total


def _with_score(graph, hyp: PathHypothesis, weights: DecoderWeights, src_len: int) -> PathHypothesis:
    f = (hyp.est, hyp.lm_logprob,
         brevity(src_len, len(hyp.emitted), weights.alpha, weights.l_R),
         future_cost(graph, hyp))
    score = sum(w * x for w, x in zip(weights.vector(), f))
    return replace(hyp, features=f, score=score)


def _extend(graph, hyp: PathHypothesis, k: int, lm: LmModel | None, max_len: int) -> PathHypothesis:
    e = graph.edges[k]
    used = dict(hyp.used)
    used[k] = used.get(k, 0) + 1
    lp = hyp.lm_logprob
    hist = hyp.history
    emitted = hyp.emitted
    ctx = (lm.order - 1) if lm is not None else 0
    if e.dst == END:
        if lm is not None:
            lp += lm.logprob(LM_EOS, hist)
        return replace(hyp, node=END, used=tuple(sorted(used.items())), edges=hyp.edges + (k,),
                       est=hyp.est + e.weight, lm_logprob=lp, done=True, complete=True)
    for t in e.emit:
        if lm is not None:
            lp += lm.logprob(t, hist)
        hist = (hist + (t,))[-ctx:] if ctx else ()
        emitted = emitted + (t,)
    done = len(emitted) >= max_len
    return replace(hyp, node=e.dst, emitted=emitted, used=tuple(sorted(used.items())),
                   edges=hyp.edges + (k,), est=hyp.est + e.weight, lm_logprob=lp,
                   history=hist, done=done, complete=False)


def _initial(lm: LmModel | None) -> PathHypothesis:
    hist = (LM_BOS,) * (lm.order - 1) if lm is not None else ()
    return PathHypothesis(START, (), (), (), 0.0, 0.0, hist)


def expansions(graph, hyp, lm, max_len):
    for k in graph.out.get(hyp.node, ()):
        if hyp.uses(k) < graph.edges[k].multiplicity:
            yield _extend(graph, hyp, k, lm, max_len)


def _rank_key(h: PathHypothesis):
    return (-h.score, h.emitted, h.edges)


def search(graph: DeBruijnGraph, weights: DecoderWeights, lm: LmModel | None, src_len: int,
           beam: int | None = 8, max_len: int | None = None) -> list[PathHypothesis]:
    """Beam search from ``<s>``; best finished hypothesis first.

    A hypothesis finishes on reaching ``</s>`` (``complete``) or on emitting
    ``max_len`` tokens. ``beam=None`` keeps every partial hypothesis, which
    makes the search exhaustive.
    """
    if beam is not None and beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len is None:
        max_len = 2 * src_len + 5
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    frontier = [_initial(lm)]
    finished = []
    while frontier:
        partial = []
        for hyp in frontier:
            for nxt in expansions(graph, hyp, lm, max_len):
                nxt = _with_score(graph, nxt, weights, src_len)
                (finished if nxt.done else partial).append(nxt)
        partial.sort(key=_rank_key)
        frontier = partial if beam is None else partial[:beam]
    finished.sort(key=_rank_key)
    return finished


def fallback_sentence(yhat: SparseVector, tgt_index: FeatureIndex, lm: LmModel | None,
                      length: int) -> Sentence:
    """Highest-valued predicted unigrams, ordered greedily by the LM."""
    unigrams = sorted(((v, tgt_index.feature(c)) for c, v in yhat.items()
                       if v > 0 and feature_order(tgt_index.feature(c)) == 1),
                      key=lambda t: (-t[0], t[1]))
    pool = [w for _, w in unigrams[:max(length, 0)]]
    if lm is None:
        return Sentence.of(pool)
    out = []
    hist = [LM_BOS] * (lm.order - 1)
    while pool:
        w = max(pool, key=lambda t: (lm.prob(t, hist), -pool.index(t)))
        pool.remove(w)
        out.append(w)
        if lm.order > 1:
            hist = hist[1:] + [w]
    return Sentence.of(out)


@dataclass
class DecodeResult:
    sentence: Sentence
    empty: bool = False
    partial: bool = False
    hypotheses: list = field(default_factory=list)

    def trace(self) -> list[dict]:
        return [{"tokens": " ".join(h.emitted), "score": h.score, "features": list(h.features),
                 "complete": h.complete} for h in self.hypotheses]


def decode(yhat: SparseVector, tgt_index: FeatureIndex, lm: LmModel | None,
           weights: DecoderWeights, src_len: int, threshold: float = 0.0,
           beam: int | None = 8, order: int = 2, multiplicity: str = ROUND,
           graph: DeBruijnGraph | None = None) -> DecodeResult:
    """Build the graph (unless given) and search it; never fails."""
    try:
        if graph is None:
            graph = build_graph(yhat, tgt_index, threshold, order, multiplicity)
    except DecodeEmptyError:
        length = max(1, round(src_len / weights.l_R))
        return DecodeResult(fallback_sentence(yhat, tgt_index, lm, length), empty=True)
    hyps = search(graph, weights, lm, src_len, beam)
    best = hyps[0]
    return DecodeResult(best.sentence, partial=not best.complete, hypotheses=hyps)


def tune_weights(evaluate: Callable[[DecoderWeights], float],
                 initial: DecoderWeights = DecoderWeights(), rounds: int = 2,
                 grid: Sequence[float] = (0.0, 0.1, 0.3, 1.0, 3.0, 10.0)):
    """Coordinate ascent on a dev score (e.g. BLEU).

    Each round sweeps every tunable weight over ``grid`` with the others
    fixed and keeps a new value only if it strictly improves the score.
    Returns ``(weights, score)``.
    """
    best = initial
    best_score = evaluate(best) if rounds > 0 else None
    for _ in range(rounds):
        for name in DecoderWeights.TUNABLE:
            for v in grid:
                if v == getattr(best, name):
                    continue
                cand = replace(best, **{name: v})
                s = evaluate(cand)
                if s > best_score:
                    best, best_score = cand, s
    return best, best_score
