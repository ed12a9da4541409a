"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are repeated in the terminal
summary. Criterion 6 runs the full pipeline three times and is marked slow.
"""

import math
import random
import shutil
import statistics
import time

import numpy as np
import pytest

from regmt import pipeline
from regmt.config import ExperimentConfig
from regmt.corpus import ParallelCorpus, SynthSpec, synth_generate
from regmt.decoder import DecoderWeights, build_graph, decode, search
from regmt.evaluation import (ConfusionCounts, DevSample, metrics, micro_confusion,
                              tune_threshold)
from regmt.features import build_matrices, extract, ngram_set, spectrum_kernel
from regmt.phrasetable import (derive_entries, direct_sums, inverse_sums, read_moses, truncate,
                               write_moses)
from regmt.regression import (FsrConfig, MappingMatrix, RidgeConfig, fit_fsr, fit_ridge,
                              fsr_path, predict, ridge_dense, ridge_objective)
from regmt.selection import (SelectionConfig, build_cooccurrence, select_instances,
                             select_random, selection_coverage)

from test_decoder import enumerate_paths, oracle_score, reference_vector, vector
from test_features import kernel_oracle
from test_regression import primal_ridge, random_instance

# (table, n-gram set, model, prec, rec, reported F1)
TABLE_ROWS = [
    ("dev2", "1", "L2", 0.47, 0.65, 0.55), ("dev2", "1", "lasso", 0.60, 0.71, 0.65),
    ("dev2", "1", "L1-reg", 0.62, 0.45, 0.52), ("dev2", "1", "SVR", 0.54, 0.61, 0.57),
    ("dev2", "1", "iter-eps", 0.40, 0.68, 0.50), ("dev2", "1", "Moses", 0.68, 0.54, 0.60),
    ("dev2", "2", "L2", 0.44, 0.25, 0.32), ("dev2", "2", "lasso", 0.51, 0.37, 0.43),
    ("dev2", "2", "L1-reg", 0.37, 0.19, 0.25), ("dev2", "2", "SVR", 0.43, 0.22, 0.29),
    ("dev2", "2", "iter-eps", 0.60, 0.18, 0.27), ("dev2", "2", "Moses", 0.37, 0.24, 0.28),
    ("dev2", "1&2", "L2", 0.52, 0.45, 0.49), ("dev2", "1&2", "lasso", 0.57, 0.53, 0.55),
    ("dev2", "1&2", "Moses", 0.58, 0.40, 0.47),
    ("test", "1", "L2", 0.45, 0.65, 0.53), ("test", "1", "lasso", 0.61, 0.73, 0.66),
    ("test", "2", "L2", 0.40, 0.23, 0.29), ("test", "2", "lasso", 0.52, 0.37, 0.43),
    ("test", "1&2", "L2", 0.47, 0.44, 0.45), ("test", "1&2", "lasso", 0.58, 0.54, 0.56),
]
TOL = 0.005


def counts_for(prec, rec):
    """Integer confusion counts with exactly the given precision and recall."""
    a, b = round(prec * 100), round(rec * 100)
    return ConfusionCounts(tp=a * b, tn=10**6, fp=b * (100 - a), fn=a * (100 - b))


def f1_interval(prec, rec):
    """F1 range when prec and rec are only known to two decimals."""
    f = lambda p, r: 2 * p * r / (p + r)
    return f(prec - TOL, rec - TOL), f(prec + TOL, rec + TOL)


def row_checks():
    out = []
    for table, grams, model, prec, rec, reported in TABLE_ROWS:
        m = metrics(counts_for(prec, rec))
        lo, hi = f1_interval(prec, rec)
        out.append({"row": f"{table}/{grams}/{model}", "f1": m.f1, "reported": reported,
                    "point": abs(m.f1 - reported) <= TOL + 1e-12,
                    "rounded": lo - 1e-12 <= reported + TOL and reported - TOL <= hi + 1e-12,
                    "prec": m.prec, "rec": m.rec, "in": (prec, rec)})
    return out


class TestCriterion1:
    def test_metric_consistency(self, verdict):
        t0 = time.perf_counter()
        rows = row_checks()
        for r in rows:
            assert math.isclose(r["prec"], r["in"][0]) and math.isclose(r["rec"], r["in"][1])
        point = [r for r in rows if r["point"]]
        rounded = [r for r in rows if r["rounded"]]
        misses = ", ".join(f"{r['row']} {r['f1']:.4f} vs {r['reported']}" for r in rows
                           if not r["point"])
        verdict(1, len(point) == len(rows),
                f"{len(point)}/{len(rows)} rows within ±{TOL} of reported F1 "
                f"(misses: {misses}); {len(rounded)}/{len(rows)} consistent once prec/rec "
                f"rounding is allowed; {1e3 * (time.perf_counter() - t0):.1f} ms")
        # rows produced by the regression models must be consistent up to rounding;
        # the external Moses 2-gram baseline row is not, whatever F1 formula is used
        bad = [r["row"] for r in rows if not r["rounded"]]
        assert bad == ["dev2/2/Moses"]

    @pytest.mark.xfail(strict=True, reason="three reference rows disagree at ±0.005 "
                                           "because prec/rec are printed rounded")
    def test_point_values_strict(self):
        assert all(r["point"] for r in row_checks())


def test_criterion2_kernel_oracle(verdict):
    t0 = time.perf_counter()
    rng = random.Random(2)
    vocab = list("abcde")
    mismatches = 0
    for _ in range(200):
        x = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        y = [rng.choice(vocab) for _ in range(rng.randint(0, 8))]
        n = rng.randint(1, 3)
        mismatches += spectrum_kernel(x, y, n) != kernel_oracle(x, y, n)
    dt = time.perf_counter() - t0
    verdict(2, mismatches == 0 and dt < 5, f"200 pairs, {mismatches} mismatches, {dt:.2f} s")
    assert mismatches == 0 and dt < 5


def test_criterion3_ridge_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, improved = 0.0, 0
    for _ in range(50):
        X, Y, lam = random_instance(rng)
        W = ridge_dense(X, Y, lam)
        worst = max(worst, float(np.abs(W - primal_ridge(X, Y, lam)).max()))
        base = ridge_objective(W, X, Y, lam)
        for _ in range(20):
            r, c = rng.integers(W.shape[0]), rng.integers(W.shape[1])
            for d in (1e-3, -1e-3):
                V = W.copy()
                V[r, c] += d
                improved += ridge_objective(V, X, Y, lam) < base - 1e-12
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and improved == 0 and dt < 10
    verdict(3, ok, f"max |dual - primal| {worst:.1e} over 50 instances, "
                   f"{improved} improving perturbations of 2000, {dt:.2f} s")
    assert ok


def test_criterion4_fsr_properties(verdict):
    t0 = time.perf_counter()
    spec = SynthSpec(vocab_size=30, reorder_window=1, seed=4)
    mx, my, _, _ = build_matrices(synth_generate(spec, 80), 2)
    trace = []
    fsr_path(mx, my, FsrConfig(0.02, 3000), trace=trace)
    monotone = all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    rng = np.random.default_rng(4)
    ortho_err = 0.0
    for _ in range(5):
        Q, _ = np.linalg.qr(rng.normal(size=(20, 8)))
        Y = rng.normal(size=(4, 20))
        W = fit_fsr(Q.T, Y, FsrConfig(1e-3, 200_000)).dense()
        ortho_err = max(ortho_err, float(np.abs(W - Y @ Q).max()))

    masses = []
    for seed in range(3):
        cipher = SynthSpec(vocab_size=30, reorder_window=0, seed=seed)
        cx, cy, si, ti = build_matrices(synth_generate(cipher, 100), 1)
        W = fit_fsr(cx, cy, FsrConfig(0.01, 5000)).dense()
        table = cipher.table()
        on = sum(abs(W[ti.col(table[s]), si.col(s)]) for s in si)
        masses.append(on / np.abs(W).sum())
    dt = time.perf_counter() - t0
    ok = monotone and ortho_err <= 1e-2 and min(masses) >= 0.9 and dt < 30
    verdict(4, ok, f"residual monotone over {len(trace)} steps: {monotone}; orthonormal max "
                   f"error {ortho_err:.1e}; cipher mass on true pairs "
                   f"{', '.join(f'{m:.3f}' for m in masses)}; {dt:.1f} s")
    assert ok


def _dev_f1(w, dev, si, ti, order=2):
    samples = []
    for p in dev:
        gold, extra = set(), 0
        for f in sorted(ngram_set(p.target, order)):
            col = ti.col(f)
            if col is None:
                col = len(ti) + extra
                extra += 1
            gold.add(col)
        samples.append(DevSample(predict(w, extract(p.source, si, "frozen")), gold,
                                 len(ti) + extra))
    return metrics(micro_confusion(samples, tune_threshold(samples))).f1


def test_criterion5_sparsity(verdict):
    t0 = time.perf_counter()
    details, ok = [], True
    for seed in range(3):
        c = list(synth_generate(SynthSpec(vocab_size=40, reorder_window=1, seed=seed), 330))
        train, dev = ParallelCorpus(tuple(c[:300])), c[300:]
        mx, my, si, ti = build_matrices(train, 2)
        ridge = [(_dev_f1(w, dev, si, ti), w) for w in
                 (fit_ridge(mx, my, RidgeConfig(lam)) for lam in (0.01, 0.1, 1.0, 10.0))]
        r_f1, r_w = max(ridge, key=lambda t: t[0])
        r_nnz = int((np.abs(r_w.w.data) > 1e-12).sum())
        # smallest FSR budget that reaches the ridge dev F1
        snaps = fsr_path(mx, my, FsrConfig(0.01, 1600), [25, 50, 100, 200, 400, 800, 1600])
        matched = next((s for s in snaps if _dev_f1(s, dev, si, ti) >= r_f1), None)
        if matched is None:
            ok = False
            details.append(f"seed {seed}: FSR never reaches ridge F1 {r_f1:.3f}")
            continue
        ratio = matched.nnz / r_nnz
        ok &= ratio <= 0.2
        details.append(f"seed {seed}: ridge F1 {r_f1:.3f} nnz {r_nnz}, FSR "
                       f"{matched.params['max_iters']} iters nnz {matched.nnz} "
                       f"(ratio {ratio:.4f})")
    dt = time.perf_counter() - t0
    ok &= dt < 60
    verdict(5, ok, "; ".join(details) + f"; {dt:.1f} s")
    assert ok


def c6_config(seed, out):
    return ExperimentConfig(output_dir=str(out), synth=True, synth_vocab=200, synth_count=2300,
                            synth_min_len=5, synth_max_len=12, synth_reorder_prob=0.2,
                            len_min=5, len_max=12, per_bucket=20, m_list=[100], seed=seed,
                            dev_limit=50, workers=1).validate()


@pytest.mark.slow
def test_criterion6_lasso_over_ridge(verdict, tmp_path):
    t0 = time.perf_counter()
    rows = {"ridge": [], "fsr": []}
    sizes = []
    for seed in range(3):
        cfg = c6_config(seed, tmp_path / str(seed))
        split = pipeline.prepare(cfg)
        sizes.append((len(split.train), len(split.test)))
        for r in pipeline.run(cfg, split).reports:
            rows[r.config["solver"]].append((r.f1, r.bleu))
    dt = time.perf_counter() - t0
    mean = {s: tuple(statistics.fmean(v[k] for v in rows[s]) for k in (0, 1)) for s in rows}
    f1_ok = mean["fsr"][0] >= mean["ridge"][0]
    bleu_ok = mean["fsr"][1] >= mean["ridge"][1]
    per_seed = "; ".join(
        f"seed {k}: F1 {rows['ridge'][k][0]:.3f}/{rows['fsr'][k][0]:.3f} "
        f"BLEU {rows['ridge'][k][1]:.3f}/{rows['fsr'][k][1]:.3f}" for k in range(3))
    ok = f1_ok and bleu_ok and dt < 600
    verdict(6, ok, f"mean F1 ridge {mean['ridge'][0]:.3f} fsr {mean['fsr'][0]:.3f}; mean BLEU "
                   f"ridge {mean['ridge'][1]:.3f} fsr {mean['fsr'][1]:.3f} ({per_seed}; "
                   f"train/test sizes {sizes}); {dt:.0f} s")
    assert ok


def copy_task_rate(seed):
    rng = random.Random(seed)
    vocab = [f"w{i}" for i in range(50)]
    sents = []
    while len(sents) < 300:
        t = [rng.choice(vocab) for _ in range(rng.randint(3, 12))]
        if len(set(zip(t, t[1:]))) == len(t) - 1:
            sents.append(t)
    hits = 0
    for s in sents:
        y, idx = reference_vector(s)
        hits += list(decode(y, idx, None, DecoderWeights(), len(s), beam=8).sentence.tokens) == s
    return hits / len(sents)


def test_criterion7_decoder(verdict):
    t0 = time.perf_counter()
    rates = [copy_task_rate(seed) for seed in range(3)]
    rng = random.Random(7)
    checked = disagree = 0
    w = DecoderWeights(w_est=1.0, w_lm=0.0, w_bp=0.5, w_fc=0.3, alpha=0.5, l_R=1.1)
    while checked < 300:
        vals = {f"{rng.choice('abcde')} {rng.choice('abcde')}": rng.uniform(0.3, 2.0)
                for _ in range(rng.randint(1, 4))}
        g = build_graph(*vector(vals))
        if len(g.edges) > 10:
            continue
        checked += 1
        src_len = rng.randint(1, 4)
        best = search(g, w, None, src_len, beam=None)[0]
        top = max(oracle_score(g, p, w, None, src_len) for p in enumerate_paths(g, 2 * src_len + 5))
        disagree += not math.isclose(best.score, top, abs_tol=1e-9)
    dt = time.perf_counter() - t0
    ok = min(rates) >= 0.95 and disagree == 0 and dt < 60
    verdict(7, ok, f"copy-task exact match {', '.join(f'{r:.3f}' for r in rates)} (3 seeds, "
                   f"300 sentences each); exhaustive search vs path enumeration: {disagree} "
                   f"disagreements on {checked} graphs ≤ 10 edges; {dt:.1f} s")
    assert ok


def test_criterion8_dice_selection(verdict):
    t0 = time.perf_counter()
    corpus = list(synth_generate(SynthSpec(vocab_size=100, reorder_window=1, seed=8), 1020))
    tests, train = corpus[:20], ParallelCorpus(tuple(corpus[20:]))
    table = build_cooccurrence(train)
    cfg = SelectionConfig(m=100, feature_order=2)
    dice_cov, rand_cov = [], []
    for p in tests:
        ids = select_instances(p.source, train, table, cfg)
        dice_cov.append(selection_coverage(p.source, p.target, train.subset(ids), 2)[1])
        rnd = select_random(p.source, train, 100, seed=p.id)
        rand_cov.append(selection_coverage(p.source, p.target, train.subset(rnd), 2)[1])
    d, r = statistics.fmean(dice_cov), statistics.fmean(rand_cov)
    dt = time.perf_counter() - t0
    ok = d > r and dt < 60
    verdict(8, ok, f"mean tcov dice {d:.3f} vs random {r:.3f} (m=100, 20 sentences); {dt:.1f} s")
    assert ok


def test_criterion9_phrase_tables(verdict, tmp_path):
    t0 = time.perf_counter()
    corpus = list(synth_generate(SynthSpec(vocab_size=40, reorder_window=1, seed=9), 220))
    train = ParallelCorpus(tuple(corpus[20:]))
    mx, my, si, ti = build_matrices(train, 2)
    worst_dir = worst_inv = 0.0
    byte_ok = trunc_ok = True
    w_fsr = fit_fsr(mx, my, FsrConfig(0.01, 400))
    w_ridge = fit_ridge(mx, my, RidgeConfig(1.0))
    for k, p in enumerate(corpus[:20]):
        for w in (w_fsr, w_ridge):
            entries = derive_entries(MappingMatrix(w.w, si, ti, w.solver), p.source)
            if not entries:
                continue
            worst_dir = max([worst_dir] + [abs(v - 1) for v in direct_sums(entries).values()])
            worst_inv = max([worst_inv] + [abs(v - 1) for v in inverse_sums(entries).values()])
            a, b = tmp_path / f"{k}{w.solver}.pt", tmp_path / f"{k}{w.solver}.again.pt"
            write_moses(entries, a)
            write_moses(read_moses(a), b)
            byte_ok &= a.read_bytes() == b.read_bytes()
            kept = truncate(entries, 20)
            per_src = {}
            for e in kept:
                per_src[e.src_phrase] = per_src.get(e.src_phrase, 0) + 1
            full = {}
            for e in entries:
                full[e.src_phrase] = full.get(e.src_phrase, 0) + 1
            trunc_ok &= all(per_src[s] == min(20, n) for s, n in full.items())
    dt = time.perf_counter() - t0
    ok = worst_dir <= 1e-9 and worst_inv <= 1e-9 and byte_ok and trunc_ok
    verdict(9, ok, f"max |direct sum - 1| {worst_dir:.1e}, max |inverse sum - 1| "
                   f"{worst_inv:.1e}; byte round trip {byte_ok}; top-20 truncation {trunc_ok}; "
                   f"{dt:.1f} s")
    assert ok


def test_criterion10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(output_dir=str(tmp_path / "out"), synth=True, synth_vocab=40,
                           synth_count=400, synth_min_len=3, synth_max_len=9, len_min=3,
                           len_max=9, per_bucket=3, m_list=[30], fsr_iters=[20, 50],
                           ridge_lambdas=[0.1, 1.0], lm_order=2, weight_grid=[0.0, 1.0, 3.0],
                           seed=10, workers=2).validate()
    names = ["report.json", "report.csv", "tuned.json", "split.json",
             "hyp.ridge.m30.txt", "hyp.fsr.m30.txt", "selection.m30.json"]
    snapshots = []
    for _ in range(2):
        shutil.rmtree(tmp_path / "out", ignore_errors=True)
        pipeline.run(cfg, pipeline.prepare(cfg))
        snapshots.append({n: (tmp_path / "out" / n).read_bytes() for n in names})
    same = [n for n in names if snapshots[0][n] == snapshots[1][n]]
    dt = time.perf_counter() - t0
    ok = len(same) == len(names)
    verdict(10, ok, f"{len(same)}/{len(names)} output files byte-identical across two runs "
                    f"(2 worker processes); {dt:.1f} s")
    assert ok
