"""Parallel corpora: loading, evaluation splits and synthetic cipher data."""

from __future__ import annotations

import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)


class AlignmentError(ValueError):
    """Source and target files do not have the same number of lines."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    raw: str = ""

    @classmethod
    def from_text(cls, line: str) -> "Sentence":
        return cls(tuple(line.split()), line)

    @classmethod
    def of(cls, tokens: Iterable[str]) -> "Sentence":
        tokens = tuple(tokens)
        return cls(tokens, " ".join(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __str__(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Pair:
    source: Sentence
    target: Sentence
    id: int


@dataclass(frozen=True)
class ParallelCorpus:
    """Ordered sentence pairs.

    Corpora built by :func:`load_parallel` or :func:`synth_generate` carry
    dense ids ``0..n-1``. Subsets keep the ids of the corpus they were cut
    from so that splits and selections stay traceable.
    """

    pairs: tuple[Pair, ...]
    dropped: int = 0
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        for p in self.pairs:
            if p.id in by_id:
                raise ValueError(f"duplicate pair id {p.id}")
            by_id[p.id] = p
        object.__setattr__(self, "_by_id", by_id)

    @classmethod
    def from_token_lists(cls, sources: Sequence[Sequence[str]],
                         targets: Sequence[Sequence[str]]) -> "ParallelCorpus":
        if len(sources) != len(targets):
            raise AlignmentError(
                f"{len(sources)} source sentences vs {len(targets)} target sentences")
        return cls(tuple(Pair(Sentence.of(s), Sentence.of(t), i)
                         for i, (s, t) in enumerate(zip(sources, targets))))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    def __getitem__(self, i: int) -> Pair:
        return self.pairs[i]

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.pairs]

    @property
    def sources(self) -> list[Sentence]:
        return [p.source for p in self.pairs]

    @property
    def targets(self) -> list[Sentence]:
        return [p.target for p in self.pairs]

    def by_id(self, pair_id: int) -> Pair:
        return self._by_id[pair_id]

    def subset(self, ids: Iterable[int]) -> "ParallelCorpus":
        """Pairs with the given ids, in the order given."""
        return ParallelCorpus(tuple(self._by_id[i] for i in ids))


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as f:
        text = f.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [line.rstrip("\r") for line in lines]


def load_parallel(source_path, target_path) -> ParallelCorpus:
    """Read two aligned, pre-tokenized UTF-8 files.

    Pairs where either side is blank are dropped; the number dropped is kept
    on ``corpus.dropped``. Surviving pairs are numbered densely from 0.
    """
    src = _read_lines(Path(source_path))
    tgt = _read_lines(Path(target_path))
    if len(src) != len(tgt):
        raise AlignmentError(
            f"{source_path} has {len(src)} lines but {target_path} has {len(tgt)}")
    pairs = []
    dropped = 0
    for s, t in zip(src, tgt):
        s_sent, t_sent = Sentence.from_text(s), Sentence.from_text(t)
        if not s_sent.tokens or not t_sent.tokens:
            dropped += 1
            continue
        pairs.append(Pair(s_sent, t_sent, len(pairs)))
    if dropped:
        logger.warning("dropped %d pairs with an empty side", dropped)
    return ParallelCorpus(tuple(pairs), dropped=dropped)


def write_parallel(corpus: ParallelCorpus, source_path, target_path) -> None:
    for path, side in ((source_path, "source"), (target_path, "target")):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for p in corpus:
                f.write(" ".join(getattr(p, side).tokens) + "\n")


# ---------------------------------------------------------------------------
# evaluation splits


def _bigrams(tokens: Sequence[str]) -> set[str]:
    return {f"{a} {b}" for a, b in zip(tokens, tokens[1:])}


def bigram_coverage(tokens: Sequence[str], doc_freq: Mapping[str, int]) -> float | None:
    """Fraction of the distinct bigrams of ``tokens`` with ``doc_freq > 0``.

    ``None`` for sentences shorter than two tokens.
    """
    grams = _bigrams(tokens)
    if not grams:
        return None
    return sum(1 for g in grams if doc_freq.get(g, 0) > 0) / len(grams)


def coverage_buckets(lo: float, hi: float) -> list[tuple[float, float]]:
    """Decile buckets ``[lo, lo+.1), ..., [.., hi)`` plus the point ``[hi, hi]``."""
    n = max(0, math.ceil(round((hi - lo) * 10, 9)))
    edges = [round(lo + k / 10, 10) for k in range(n)] + [hi]
    buckets = [(edges[k], edges[k + 1]) for k in range(n)]
    buckets.append((hi, hi))
    return buckets


def bucket_of(cov: float, buckets: Sequence[tuple[float, float]]) -> int | None:
    for k, (a, b) in enumerate(buckets):
        if (a <= cov < b) or (a == b == cov):
            return k
    return None


@dataclass(frozen=True)
class DataSplit:
    train: ParallelCorpus
    dev: ParallelCorpus
    dev2: ParallelCorpus
    test: ParallelCorpus
    warnings: tuple[str, ...] = ()

    EVAL_SPLITS = ("dev", "dev2", "test")

    def manifest(self) -> dict:
        out = {name: getattr(self, name).ids
               for name in ("train",) + self.EVAL_SPLITS}
        out["warnings"] = list(self.warnings)
        return out

    def write_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.manifest(), f, indent=1)
            f.write("\n")

    @classmethod
    def from_manifest(cls, corpus: ParallelCorpus, path) -> "DataSplit":
        with open(path, encoding="utf-8") as f:
            man = json.load(f)
        return cls(*(corpus.subset(man[name]) for name in ("train",) + cls.EVAL_SPLITS),
                   warnings=tuple(man.get("warnings", ())))


def select_eval_split(corpus: ParallelCorpus,
                      len_range: tuple[float, float] = (10, 20),
                      cov_range: tuple[float, float] = (0.6, 1.0),
                      per_bucket: int = 20,
                      seed: int = 0) -> DataSplit:
    """Carve dev, dev2 and test sets out of ``corpus``.

    Candidates have a source length inside ``len_range`` and a target bigram
    coverage (against the training pairs that remain) inside ``cov_range``.
    ``per_bucket`` sentences are drawn per coverage bucket for each split.
    Source sentences that exactly repeat a test source are removed from the
    training side.

    Coverage depends on which pairs end up in train, so drawing and checking
    alternate. A drawn pair whose coverage against the current training side
    falls in another bucket takes a free slot there. If there is none, or
    the coverage leaves ``cov_range``, the pair goes back into train and a
    replacement is drawn. This repeats until every eval pair passes the
    filters post hoc.
    """
    if not len(corpus):
        raise ValueError("empty corpus")
    lo, hi = cov_range
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"bad coverage range {cov_range}")
    min_len, max_len = len_range
    buckets = coverage_buckets(lo, hi)
    names = DataSplit.EVAL_SPLITS

    all_df = Counter()
    for p in corpus:
        all_df.update(_bigrams(p.target.tokens))

    # leave-one-out coverage decides the candidate queue per bucket
    queues: list[list[int]] = [[] for _ in buckets]
    for p in corpus:
        if not min_len <= len(p.source) <= max_len:
            continue
        grams = _bigrams(p.target.tokens)
        if not grams:
            continue
        cov = sum(1 for g in grams if all_df[g] > 1) / len(grams)
        k = bucket_of(cov, buckets)
        if k is not None:
            queues[k].append(p.id)
    rng = random.Random(seed)
    for q in queues:
        rng.shuffle(q)
        q.reverse()  # pop() from the end

    chosen: dict[str, list[list[int]]] = {n: [[] for _ in buckets] for n in names}
    while True:
        for name in names:
            for k, q in enumerate(queues):
                while len(chosen[name][k]) < per_bucket and q:
                    chosen[name][k].append(q.pop())
        selected = {i for n in names for b in chosen[n] for i in b}
        test_sources = {corpus.by_id(i).source.tokens for b in chosen["test"] for i in b}
        train_ids = [p.id for p in corpus
                     if p.id not in selected and p.source.tokens not in test_sources]
        df = Counter()
        for i in train_ids:
            df.update(_bigrams(corpus.by_id(i).target.tokens))
        ejected = False
        for name in names:
            placed = [[] for _ in buckets]
            movers = []
            for k, b in enumerate(chosen[name]):
                for i in b:
                    k2 = bucket_of(bigram_coverage(corpus.by_id(i).target.tokens, df), buckets)
                    (placed[k] if k2 == k else movers).append((i, k2))
            placed = [[i for i, _ in b] for b in placed]
            # pairs whose coverage moved take free slots in their new bucket
            for i, k2 in movers:
                if k2 is not None and len(placed[k2]) < per_bucket:
                    placed[k2].append(i)
                else:
                    ejected = True
            chosen[name] = placed
        can_draw = any(len(chosen[n][k]) < per_bucket and queues[k]
                       for n in names for k in range(len(buckets)))
        if not ejected and not can_draw:
            break

    warnings = []
    splits = {}
    for name in names:
        ids = [i for b in chosen[name] for i in b]
        counts = [len(b) for b in chosen[name]]
        for k, (a, c) in enumerate(buckets):
            if counts[k] < per_bucket:
                warnings.append(
                    f"{name}: bucket [{a:g},{c:g}{']' if a == c else ')'} "
                    f"has {counts[k]}/{per_bucket} sentences")
        splits[name] = corpus.subset(sorted(ids))
    for w in warnings:
        logger.warning(w)
    return DataSplit(corpus.subset(train_ids), splits["dev"], splits["dev2"],
                     splits["test"], tuple(warnings))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Grammar of a synthetic substitution cipher with local reordering.

    ``substitution`` may be ``None`` (seeded random bijection onto ``t*``
    tokens), ``"identity"``, or an explicit source-to-target token map.
    Source tokens are ``s0 .. s{vocab_size-1}`` drawn with Zipf weights.
    Every ``reorder_window + 1`` token block of the target is reversed with
    probability ``reorder_prob``.
    """

    vocab_size: int = 200
    substitution: Mapping[str, str] | str | None = None
    reorder_window: int = 0
    reorder_prob: float = 0.5
    length_range: tuple[int, int] = (5, 12)
    zipf: float = 1.0
    seed: int = 0

    def source_vocab(self) -> list[str]:
        return [f"s{i}" for i in range(self.vocab_size)]

    def table(self) -> dict[str, str]:
        vocab = self.source_vocab()
        if self.substitution == "identity":
            return {w: w for w in vocab}
        if self.substitution is None:
            images = [f"t{i}" for i in range(self.vocab_size)]
            random.Random(f"table:{self.seed}").shuffle(images)
            return dict(zip(vocab, images))
        return dict(self.substitution)


def encipher(tokens: Sequence[str], table: Mapping[str, str], window: int = 0,
             prob: float = 0.0, rng: random.Random | None = None) -> list[str]:
    out = [table[t] for t in tokens]
    if window > 0 and prob > 0:
        rng = rng or random.Random(0)
        for start in range(0, len(out), window + 1):
            if rng.random() < prob:
                out[start:start + window + 1] = out[start:start + window + 1][::-1]
    return out


def synth_generate(spec: SynthSpec, count: int) -> ParallelCorpus:
    if spec.vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    if count < 1:
        raise ValueError("count must be at least 1")
    lo, hi = spec.length_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad length range {spec.length_range}")
    vocab = spec.source_vocab()
    table = spec.table()
    cum, acc = [], 0.0
    for r in range(len(vocab)):
        acc += 1.0 / (r + 1) ** spec.zipf
        cum.append(acc)
    rng = random.Random(spec.seed)
    sources, targets = [], []
    for _ in range(count):
        src = rng.choices(vocab, cum_weights=cum, k=rng.randint(lo, hi))
        sources.append(src)
        targets.append(encipher(src, table, spec.reorder_window, spec.reorder_prob, rng))
    return ParallelCorpus.from_token_lists(sources, targets)
