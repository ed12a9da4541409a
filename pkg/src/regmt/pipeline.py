"""End-to-end experiment driver behind the command line."""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from regmt import decoder as dec
from regmt.config import ExperimentConfig
from regmt.corpus import (DataSplit, ParallelCorpus, Sentence, SynthSpec, load_parallel,
                          select_eval_split, synth_generate, write_parallel)
from regmt.evaluation import (ConfusionCounts, DevSample, EvalReport, Threshold, binarize,
                              bleu, confusion, metrics, threshold_curve,
                              tune_fsr_iters, tune_lambda, write_csv)
from regmt.features import FeatureIndex, build_matrices, extract, ngram_set
from regmt.lm import train_lm
from regmt.phrasetable import derive_entries, write_manifest, write_moses
from regmt.regression import (FsrConfig, MappingMatrix, RidgeConfig, fit_ridge, fsr_path,
                              predict, sparsity_stats)
from regmt.selection import (CooccurrenceTable, SelectionConfig, build_cooccurrence,
                             rank_instances, select_ngram_overlap, select_random,
                             selection_coverage, write_selection_manifest)

logger = logging.getLogger(__name__)

CORPUS_SRC = "corpus.src"
CORPUS_TGT = "corpus.tgt"
SPLIT_MANIFEST = "split.json"


# ---------------------------------------------------------------------------
# prepare


def prepare(cfg: ExperimentConfig) -> DataSplit:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synth:
        spec = SynthSpec(vocab_size=cfg.synth_vocab, reorder_window=cfg.synth_window,
                         reorder_prob=cfg.synth_reorder_prob,
                         length_range=(cfg.synth_min_len, cfg.synth_max_len),
                         zipf=cfg.synth_zipf, seed=cfg.seed)
        corpus = synth_generate(spec, cfg.synth_count)
        write_parallel(corpus, out / CORPUS_SRC, out / CORPUS_TGT)
    else:
        corpus = load_parallel(cfg.corpus_source, cfg.corpus_target)
    split = select_eval_split(corpus, (cfg.len_min, cfg.len_max), (cfg.cov_lo, cfg.cov_hi),
                              cfg.per_bucket, cfg.seed)
    split.write_manifest(out / SPLIT_MANIFEST)
    for name in ("train",) + DataSplit.EVAL_SPLITS:
        part = getattr(split, name)
        write_parallel(part, out / f"{name}.src", out / f"{name}.tgt")
    logger.info("split: train %d, dev %d, dev2 %d, test %d", len(split.train), len(split.dev),
                len(split.dev2), len(split.test))
    return split


def load_split(cfg: ExperimentConfig) -> DataSplit:
    out = Path(cfg.output_dir)
    if cfg.synth:
        corpus = load_parallel(out / CORPUS_SRC, out / CORPUS_TGT)
    else:
        corpus = load_parallel(cfg.corpus_source, cfg.corpus_target)
    manifest = out / SPLIT_MANIFEST
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} missing; run 'prepare' first")
    return DataSplit.from_manifest(corpus, manifest)


# ---------------------------------------------------------------------------
# per-sentence units


@dataclass
class Context:
    cfg: ExperimentConfig
    train: ParallelCorpus
    table: CooccurrenceTable
    lm: object
    l_R: float


@dataclass
class Item:
    """A test (or dev) pair with its selected training set and matrices."""

    pair_id: int
    source: Sentence
    reference: Sentence
    selected: list
    scores: list
    scov: float
    tcov: float
    mx: object = None
    my: object = None
    src_idx: FeatureIndex = None
    tgt_idx: FeatureIndex = None
    phi_x: object = None
    gold: set = field(default_factory=set)
    universe: int = 0


def _select(ctx: Context, S: Sentence, m: int):
    cfg = ctx.cfg
    if cfg.selector == "dice":
        sel_cfg = SelectionConfig(m=m, feature_order=cfg.selection_order,
                                  denominator=cfg.dice_denominator)
        ranked = rank_instances(S, ctx.train, ctx.table, sel_cfg)
        return [i for i, _ in ranked], [s for _, s in ranked]
    if cfg.selector == "random":
        return select_random(S, ctx.train, m, cfg.seed), []
    return select_ngram_overlap(S, ctx.train, m), []


def prepare_item(ctx: Context, pair, m: int) -> Item:
    cfg = ctx.cfg
    ids, scores = _select(ctx, pair.source, m)
    sel = ctx.train.subset(ids)
    scov, tcov = selection_coverage(pair.source, pair.target, sel, cfg.order)
    mx, my, si, ti = build_matrices(sel, cfg.order, cfg.weighted)
    phi = extract(pair.source, si, "frozen", cfg.weighted)
    gold = set()
    extra = 0
    for f in sorted(ngram_set(pair.target, cfg.order)):
        col = ti.col(f)
        if col is None:
            col = len(ti) + extra
            extra += 1
        gold.add(col)
    return Item(pair.id, pair.source, pair.target, ids, scores, scov, tcov, mx, my, si, ti,
                phi, gold, len(ti) + extra)


def fit_all(item: Item, solver: str, cfg: ExperimentConfig, grid) -> list[MappingMatrix]:
    """One mapping per grid value (lambdas for ridge, iteration budgets for fsr)."""
    if solver == "ridge":
        return [fit_ridge(item.mx, item.my, RidgeConfig(lam)) for lam in grid]
    return fsr_path(item.mx, item.my, FsrConfig(cfg.fsr_eps, max(grid), cfg.fsr_tol), grid)


def _grid(cfg: ExperimentConfig, solver: str) -> list:
    return sorted(cfg.ridge_lambdas) if solver == "ridge" else sorted(cfg.fsr_iters)


def _sample(item: Item, w: MappingMatrix) -> DevSample:
    return DevSample(predict(w, item.phi_x), item.gold, item.universe)


# worker-process state; set by _init_worker or directly when serial
_CTX: Context | None = None


def _init_worker(ctx: Context) -> None:
    global _CTX
    _CTX = ctx


def _safe(fn, *args):
    try:
        return fn(*args), None
    except Exception as e:  # per-sentence failures are recorded, not fatal
        logger.exception("sentence failed")
        return None, f"{type(e).__name__}: {e}"


def _prepare_task(args):
    pair, m = args
    return _safe(prepare_item, _CTX, pair, m)


def _dev_task(args):
    """Predictions for one dev item across every grid value of every solver."""
    item, = args
    cfg = _CTX.cfg
    out = {}
    for solver in cfg.solvers:
        ws = fit_all(item, solver, cfg, _grid(cfg, solver))
        out[solver] = [_sample(item, w) for w in ws]
    return out


def _fit_one(item, solver, value):
    w = fit_all(item, solver, _CTX.cfg, [value])[0]
    return _sample(item, w), sparsity_stats(w)["nnz"], w


def _test_task(args):
    return _safe(_fit_one, *args)


def _pmap(fn, tasks, ctx: Context):
    workers = min(ctx.cfg.resolved_workers(), max(len(tasks), 1))
    if workers <= 1:
        _init_worker(ctx)
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as ex:
        return list(ex.map(fn, tasks))


# ---------------------------------------------------------------------------
# run


@dataclass
class RunResult:
    reports: list[EvalReport]
    failures: list[dict]
    tuned: dict


def _limit(corpus: ParallelCorpus, n: int) -> list:
    return list(corpus)[:n] if n else list(corpus)


def make_context(cfg: ExperimentConfig, split: DataSplit) -> Context:
    table = build_cooccurrence(split.train, 1)
    lm = train_lm(split.train.targets, cfg.lm_order)
    return Context(cfg, split.train, table, lm, dec.length_ratio(split.train))


def _prepare_items(ctx, pairs, m, failures, split_name):
    items = []
    for pair, (item, err) in zip(pairs, _pmap(_prepare_task, [(p, m) for p in pairs], ctx)):
        if err:
            failures.append({"split": split_name, "id": pair.id, "m": m, "error": err})
        else:
            items.append(item)
    return items


def _graph(item, yhat, threshold, cfg):
    try:
        return dec.build_graph(yhat, item.tgt_idx, threshold, cfg.decode_order, cfg.multiplicity,
                               cfg.restarts)
    except dec.DecodeEmptyError:
        return None


def _decode(ctx, item, yhat, threshold, weights, graph=None):
    cfg = ctx.cfg
    if graph is None:
        graph = _graph(item, yhat, threshold, cfg)
    return dec.decode(yhat, item.tgt_idx, ctx.lm, weights, len(item.source), threshold,
                      cfg.beam, cfg.decode_order, cfg.multiplicity, graph=graph)


def _tune_decoder(ctx, items, samples, thr) -> tuple[dec.DecoderWeights, float, float | None]:
    """Decoder weights and decode threshold, tuned on dev BLEU.

    Each round runs one coordinate-ascent sweep of the weights, then tries
    every multiplier in ``decode_scales`` on the F1-tuned threshold.
    Returns ``(weights, decode threshold, dev BLEU)``.
    """
    cfg = ctx.cfg
    weights = dec.DecoderWeights(alpha=cfg.alpha, l_R=ctx.l_R)
    scales = list(cfg.decode_scales)
    scale = 1.0 if 1.0 in scales else scales[0]
    if not cfg.decode or not items or cfg.tune_rounds == 0:
        return weights, thr.value * scale, None
    refs = [item.reference for item in items]
    graphs = {}

    def dev_bleu(w, sc):
        if sc not in graphs:
            graphs[sc] = [_graph(it, s.yhat, thr.value * sc, cfg) for it, s in zip(items, samples)]
        hyps = [_decode(ctx, it, s.yhat, thr.value * sc, w, g).sentence
                for it, s, g in zip(items, samples, graphs[sc])]
        return bleu(hyps, refs)

    best = None
    for _ in range(cfg.tune_rounds):
        weights, best = dec.tune_weights(lambda w: dev_bleu(w, scale), weights, 1,
                                         cfg.weight_grid)
        for sc in scales:
            if sc != scale:
                b = dev_bleu(weights, sc)
                if b > best:
                    scale, best = sc, b
    return weights, thr.value * scale, best


def run(cfg: ExperimentConfig, split: DataSplit | None = None) -> RunResult:
    split = split or load_split(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = make_context(cfg, split)
    dev_pairs = _limit(split.dev, cfg.dev_limit)
    test_pairs = _limit(split.test, cfg.test_limit)
    if not dev_pairs or not test_pairs:
        raise ValueError("dev and test must be non-empty")
    failures: list[dict] = []
    reports: list[EvalReport] = []
    tuned: dict = {}
    cfg_hash = cfg.hash()

    for m in cfg.m_list:
        dev_items = _prepare_items(ctx, dev_pairs, m, failures, "dev")
        test_items = _prepare_items(ctx, test_pairs, m, failures, "test")
        write_selection_manifest(
            ({"test_id": it.pair_id, "selector": cfg.selector, "ids": it.selected,
              "scores": it.scores} for it in test_items), out / f"selection.m{m}.json")
        dev_preds = _pmap(_dev_task, [(it,) for it in dev_items], ctx)

        for solver in cfg.solvers:
            grid = _grid(cfg, solver)
            # per grid value: best micro F1 over thresholds on dev
            per_value = []
            for k in range(len(grid)):
                samples = [d[solver][k] for d in dev_preds]
                cand, f1 = threshold_curve(samples)
                per_value.append((cand, f1))
            tuner = tune_lambda if solver == "ridge" else tune_fsr_iters
            lookup = dict(zip(grid, per_value))
            best, dev_scores = tuner(grid, lambda v: float(lookup[v][1].max()))
            k = grid.index(best)
            cand, f1 = per_value[k]
            thr = Threshold(float(cand[int(f1.argmax())]))
            dev_samples = [d[solver][k] for d in dev_preds]
            weights, decode_thr, dev_bleu = _tune_decoder(ctx, dev_items, dev_samples, thr)
            tag = f"{solver}.m{m}"
            weights.save(out / f"weights.{tag}.json")
            tuned[tag] = {"solver": solver, "m": m, "value": best, "threshold": thr.value,
                          "decode_threshold": decode_thr, "dev_f1": max(dev_scores),
                          "dev_scores": dev_scores, "dev_bleu": dev_bleu}

            results, ok_items = [], []
            for it, (res, err) in zip(test_items, _pmap(
                    _test_task, [(it, solver, best) for it in test_items], ctx)):
                if err:
                    failures.append({"split": "test", "id": it.pair_id, "m": m,
                                     "solver": solver, "error": err})
                else:
                    results.append(res)
                    ok_items.append(it)
            report = _evaluate_test(ctx, ok_items, results, thr, decode_thr, weights, out,
                                    tag)
            report.config = {"config_hash": cfg_hash, "solver": solver, "m": m,
                             "hyper": best, "threshold": thr.value,
                             "decode_threshold": decode_thr,
                             "n_test": len(ok_items)}
            reports.append(report)
            if cfg.export_pt:
                _export(ok_items, [r[2] for r in results], out / "phrase_tables" / tag,
                        cfg.ttable_limit)

    write_csv(reports, out / "report.csv")
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump({"config": cfg.to_dict(), "config_hash": cfg_hash,
                   "reports": [r.row() for r in reports],
                   "per_sentence": {f"{r.config['solver']}.m{r.config['m']}": r.per_sentence
                                    for r in reports},
                   "failures": failures}, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(out / "tuned.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(tuned, f, indent=1, sort_keys=True)
        f.write("\n")
    return RunResult(reports, failures, tuned)


def _evaluate_test(ctx, items, results, thr, decode_thr, weights, out, tag) -> EvalReport:
    cfg = ctx.cfg
    total = ConfusionCounts()
    per_sentence = []
    f1s = []
    hyps = []
    traces = []
    for item, (sample, nnz, _) in zip(items, results):
        c = confusion(binarize(sample.yhat, item.universe, thr), item.gold, item.universe)
        total = total + c
        m = metrics(c)
        f1s.append(m.f1)
        row = {"id": item.pair_id, "f1": m.f1, "prec": m.prec, "rec": m.rec, "ber": m.ber,
               "scov": item.scov, "tcov": item.tcov, "nnz": nnz}
        if cfg.decode:
            res = _decode(ctx, item, sample.yhat, decode_thr, weights)
            hyps.append(res.sentence)
            row["hyp"] = str(res.sentence)
            row["decode_empty"] = res.empty
            if cfg.trace:
                traces.append({"id": item.pair_id, "hypotheses": res.trace()[:10]})
        per_sentence.append(row)
    report = EvalReport.from_counts(
        total,
        scov=statistics.fmean(it.scov for it in items) if items else 0.0,
        tcov=statistics.fmean(it.tcov for it in items) if items else 0.0,
        macro_f1=statistics.fmean(f1s) if f1s else 0.0,
        per_sentence=per_sentence)
    if cfg.decode and items:
        report.bleu = bleu(hyps, [it.reference for it in items])
        with open(out / f"hyp.{tag}.txt", "w", encoding="utf-8", newline="\n") as f:
            for h in hyps:
                f.write(str(h) + "\n")
        if cfg.trace:
            with open(out / f"trace.{tag}.json", "w", encoding="utf-8", newline="\n") as f:
                json.dump(traces, f, indent=1)
    return report


# ---------------------------------------------------------------------------
# phrase tables


def _export(items, mappings, directory: Path, limit: int) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    tables = {}
    for item, w in zip(items, mappings):
        entries = derive_entries(w, item.source)
        if not entries:
            continue
        path = directory / f"test{item.pair_id}.pt"
        write_moses(entries, path, limit or None)
        tables[item.pair_id] = path.name
    write_manifest(tables, directory / "manifest.json")
    return tables


def export_phrase_tables(cfg: ExperimentConfig, split: DataSplit | None = None) -> dict:
    """Per-test-sentence tables for every solver and m, using tuned values when present."""
    split = split or load_split(cfg)
    out = Path(cfg.output_dir)
    tuned_path = out / "tuned.json"
    tuned = json.loads(tuned_path.read_text()) if tuned_path.exists() else {}
    ctx = make_context(cfg, split)
    _init_worker(ctx)
    failures: list[dict] = []
    written = {}
    for m in cfg.m_list:
        items = _prepare_items(ctx, _limit(split.test, cfg.test_limit), m, failures, "test")
        for solver in cfg.solvers:
            tag = f"{solver}.m{m}"
            value = tuned.get(tag, {}).get("value", _grid(cfg, solver)[-1 if solver == "fsr" else 0])
            ws = [fit_all(it, solver, cfg, [value])[0] for it in items]
            written[tag] = _export(items, ws, out / "phrase_tables" / tag, cfg.ttable_limit)
    return written
