"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from xlner.cli import main as cli_main
from xlner.crf import crf_log_partition, path_score, viterbi_decode
from xlner.evaluation import TaggedSentence, micro_f1
from xlner.labels import EntitySpan, LabelSpace
from xlner.spanprob import DIVERGENCES, kl_divergence, token_to_span
from xlner.synth import generate_bundle
from xlner.tagger import Tagger, TaggerConfig, Vocabulary, backward, forward, zero_grads
from xlner.training import (MODES, TrainingConfig, dropout_consistency_loss, total_loss_step, train_run,
                            translation_consistency_loss)
from xlner.translation import (ConjugatePair, build_conjugate_pairs, build_corpus_pairs, mask_span,
                               select_candidate_spans)

from oracles import (best_path_by_enumeration, log_partition_by_enumeration, max_relative_error,
                     numeric_gradient, span_distribution_by_enumeration)

FIXTURE = Path(__file__).parent / "fixtures" / "scorer_fixture.json"


@pytest.fixture
def verdict(capsys):
    def emit(number, name, passed, detail=""):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if passed else 'FAIL'} {name}: {detail}")
        assert passed, f"criterion {number} ({name}) failed: {detail}"
    return emit


# 1 --------------------------------------------------------------------------

def test_span_conversion_matches_enumeration(verdict):
    rng = np.random.default_rng(2024)
    spaces = {n: LabelSpace([f"T{i}" for i in range(n)]) for n in (1, 2, 3)}
    worst_err = worst_sum = 0.0
    t_fast = 0.0
    t0 = time.perf_counter()
    for _ in range(1000):
        ls = spaces[int(rng.integers(1, 4))]
        length = int(rng.integers(1, 5))
        dists = rng.dirichlet(np.full(ls.size, 0.5), size=length)
        s = time.perf_counter()
        fast = token_to_span(dists, ls)
        t_fast += time.perf_counter() - s
        worst_err = max(worst_err, float(np.abs(fast - span_distribution_by_enumeration(dists, ls)).max()))
        worst_sum = max(worst_sum, abs(fast.sum() - 1.0))
    total = time.perf_counter() - t0
    ok = worst_err <= 1e-12 and worst_sum <= 1e-12 and total < 10
    verdict(1, "token-to-span vs brute force", ok,
            f"max abs err {worst_err:.2e}, max |sum-1| {worst_sum:.2e}, "
            f"{t_fast:.2f}s conversion / {total:.2f}s with oracle")


# 2 --------------------------------------------------------------------------

def micro_model():
    ls = LabelSpace(["PER", "LOC"])
    vocab = Vocabulary([f"w{i}" for i in range(18)])
    cfg = TaggerConfig(vocab_size=20, d_emb=4, d_hid=6, window=1, dropout=0.3, seed=5)
    tagger = Tagger.create(cfg, ls, vocab)
    rng = np.random.default_rng(8)
    tagger.params["transitions"] += rng.normal(size=tagger.params["transitions"].shape) * 0.5
    tagger.params["output_b"] += rng.normal(size=ls.size) * 0.3
    tagger.params["hidden_b"] += rng.normal(size=6) * 0.3
    s1 = TaggedSentence(["w1", "w2", "w3", "w4"], [ls.parse(t) for t in ["B-PER", "E-PER", "O", "S-LOC"]])
    s2 = TaggedSentence(["w5", "w6", "w7"], [ls.parse(t) for t in ["S-LOC", "O", "O"]])
    pair = ConjugatePair(0, tuple(s1.tokens), (0, 1), tuple(s2.tokens), (1, 2), "micro")
    return tagger, [s1, s2], pair


def ce_loss_and_grads(tagger, sents, masks):
    grads = zero_grads(tagger.params)
    total = 0.0
    for s, m in zip(sents, masks):
        _, cache = forward(tagger.params, tagger.config, tagger.encode(s.tokens), True, mask=m)
        loss, d_logits, d_trans = tagger.crf_loss(cache, s.tags)
        total += loss
        backward(tagger.params, cache, d_logits, grads)
        grads["transitions"] += d_trans
    return total, grads


def _span_dist(tagger, tokens, span):
    probs, _ = forward(tagger.params, tagger.config, tagger.encode(tokens))
    return token_to_span(probs[span[0]:span[1] + 1], tagger.label_space)


def frozen(tagger, pair, side):
    if side == "original":
        return _span_dist(tagger, pair.original_tokens, pair.original_span)
    return _span_dist(tagger, pair.translated_tokens, pair.translated_span)


def one_sided_trans_loss(tagger, pair, mode, reference):
    """KL with the reference span distribution held constant; only the other side moves."""
    if mode == "kl-unlabel":
        return kl_divergence(reference, _span_dist(tagger, pair.translated_tokens, pair.translated_span))
    return kl_divergence(reference, _span_dist(tagger, pair.original_tokens, pair.original_span))


def _summed(results):
    loss = sum(r[0] for r in results)
    grads = {k: sum(r[1][k] for r in results) for k in results[0][1]}
    return loss, grads


def test_gradient_suite(verdict):
    tagger, sents, pair = micro_model()
    rng = np.random.default_rng(0)
    masks = [(rng.random((len(s.tokens), 6)) < 0.7) / 0.7 for s in sents]
    pass_masks = [(m, (rng.random(m.shape) < 0.7) / 0.7) for m in masks]

    checks = {
        "ce": lambda: ce_loss_and_grads(tagger, sents, masks),
        "drop": lambda: _summed([dropout_consistency_loss(tagger, s.tokens, masks=pm)
                                 for s, pm in zip(sents, pass_masks)]),
    }
    for mode in DIVERGENCES:
        checks[f"trans/{mode}"] = lambda mode=mode: translation_consistency_loss(tagger, pair, mode)
    # full objective; a fresh generator per call replays the same dropout masks
    for mode in ("conner", "trans-label"):
        cfg = TrainingConfig(mode=mode, dropout=0.3)

        def step(cfg=cfg):
            res = total_loss_step(tagger, sents, [pair], cfg, np.random.default_rng(11))
            return res.total, res.grads
        checks[f"total/{mode}"] = step

    # one-sided modes: the reference span is a constant, so the oracle freezes it at the current parameters
    reference = {"trans/kl-unlabel": ("kl-unlabel", "original"), "trans/kl-trans": ("kl-trans", "translated")}

    t0 = time.perf_counter()
    errors = {}
    for name, fn in checks.items():
        _, grads = fn()
        if name in reference:
            mode, side = reference[name]
            ref = frozen(tagger, pair, side)
            loss_fn = lambda mode=mode, ref=ref: one_sided_trans_loss(tagger, pair, mode, ref)
        else:
            loss_fn = lambda fn=fn: fn()[0]
        errors[name] = max(
            max_relative_error(grads[pname], numeric_gradient(loss_fn, value, h=1e-5))
            for pname, value in tagger.params.items()
        )
    elapsed = time.perf_counter() - t0
    ok = max(errors.values()) <= 1e-4 and elapsed < 30
    verdict(2, "analytic vs finite-difference gradients", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f" ({elapsed:.1f}s)")


# 3 --------------------------------------------------------------------------

def test_crf_against_enumeration(verdict):
    rng = np.random.default_rng(77)
    worst_z, viterbi_bad = 0.0, 0
    t0 = time.perf_counter()
    for _ in range(200):
        t = int(rng.integers(1, 10))
        max_n = 5 if t <= 5 else 4
        n = int(rng.integers(1, max_n + 1))
        em = rng.normal(size=(n, t)) * 2
        trans = rng.normal(size=(t + 2, t + 2))
        worst_z = max(worst_z, abs(crf_log_partition(em, trans) - log_partition_by_enumeration(em, trans)))
        best, best_score = best_path_by_enumeration(em, trans)
        got = viterbi_decode(em, trans)
        if got != best or abs(path_score(em, trans, got) - best_score) > 1e-10:
            viterbi_bad += 1
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 1e-10 and viterbi_bad == 0 and elapsed < 10
    verdict(3, "CRF partition and Viterbi vs enumeration", ok,
            f"max |logZ diff| {worst_z:.2e}, Viterbi mismatches {viterbi_bad}/200, {elapsed:.2f}s")


# 4 --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def default_bundle():
    return generate_bundle(seed=0)


def test_translation_pipeline_soundness(verdict, default_bundle):
    b = default_bundle
    engine = b.engine("backward", rho=0.0)
    total = matched = 0
    dropped_total = 0
    for i, gold in enumerate(b.target_train_gold):
        tokens = gold.tokens
        cands = [EntitySpan(s.start, s.end) for s in gold.spans]
        pairs, dropped = build_conjugate_pairs(tokens, cands, engine, sentence_id=i)
        dropped_total += sum(dropped.values())
        full = engine.translate(" ".join(tokens)).split()
        full_ranges = engine.ledger[" ".join(tokens)]
        by_span = {p.original_span: p for p in pairs}
        for ordinal, span in enumerate(cands):
            total += 1
            pair = by_span.get((span.start, span.end))
            if pair is None:
                continue
            masked = " ".join(mask_span(tokens, span, ordinal))
            at = engine.ledger[masked][span.start][0]
            cover = full_ranges[span.start:span.end + 1]
            truth = (min(r[0] for r in cover), max(r[1] for r in cover))
            ok_masked = pair.translated_span[0] == at
            ok_truth = pair.translated_text == tuple(full[truth[0]:truth[1] + 1])
            ok_twin = list(pair.translated_tokens) == full
            matched += ok_masked and ok_truth and ok_twin

    corrupt = b.engine("backward", rho=1.0)
    sents = [s.tokens for s in b.target_train_gold]
    cands = [[EntitySpan(s.start, s.end) for s in g.spans] for g in b.target_train_gold]
    pairs1, dropped1 = build_corpus_pairs(sents, cands, corrupt)
    n_cand = sum(map(len, cands))
    ok = (matched == total == n_cand and dropped_total == 0 and not pairs1
          and dropped1.get("placeholder-lost", 0) == n_cand and sum(dropped1.values()) == n_cand)
    verdict(4, "translation pipeline soundness", ok,
            f"rho=0: {matched}/{total} spans paired with ledger-verified boundaries; "
            f"rho=1: {dropped1.get('placeholder-lost', 0)}/{n_cand} dropped as placeholder-lost")


# 5 --------------------------------------------------------------------------

def test_transfer_gain_over_five_seeds(verdict, default_bundle):
    b = default_bundle
    unlabeled = [s.tokens for s in b.target_train]
    engine = b.engine("backward")
    rows, core_time = [], 0.0
    for seed in range(5):
        t0 = time.perf_counter()
        vanilla, weak = train_run(b.source_train, [], b.source_dev, b.target_test,
                                  TrainingConfig(mode="vanilla", seed=seed), b.label_space, unlabeled=unlabeled)
        cands = [select_candidate_spans(weak, toks) for toks in unlabeled]
        pairs, drops = build_corpus_pairs(unlabeled, cands, engine)
        conner, _ = train_run(b.source_train, pairs, b.source_dev, b.target_test,
                              TrainingConfig(mode="conner", seed=seed), b.label_space,
                              unlabeled=unlabeled, drop_counts=drops)
        core_time += time.perf_counter() - t0
        trans, _ = train_run(b.source_train, pairs, b.source_dev, b.target_test,
                             TrainingConfig(mode="trans-unlabel", seed=seed), b.label_space,
                             unlabeled=unlabeled, drop_counts=drops)
        rows.append((seed, 100 * vanilla.test["f1"], 100 * conner.test["f1"], 100 * trans.test["f1"]))
        print(f"seed {seed}: vanilla {rows[-1][1]:.2f} conner {rows[-1][2]:.2f} "
              f"trans-unlabel {rows[-1][3]:.2f} pairs {len(pairs)}")
    v, c, t = (np.mean([r[k] for r in rows]) for k in (1, 2, 3))
    positive = sum(r[2] > r[1] for r in rows)
    ok = c - v >= 2.0 and positive >= 4 and t > v and core_time < 1800
    verdict(5, "end-to-end transfer gain", ok,
            f"mean F1 vanilla {v:.2f}, conner {c:.2f} (gap {c - v:+.2f}, positive in {positive}/5 seeds), "
            f"trans-unlabel {t:.2f}; 10 vanilla+conner runs took {core_time / 60:.1f} min")


# 6 --------------------------------------------------------------------------

def test_ablation_modes_and_divergences(verdict):
    b = generate_bundle(sizes=(300, 100, 300, 100), seed=1)
    unlabeled = [s.tokens for s in b.target_train]
    cands = [[EntitySpan(s.start, s.end) for s in g.spans] for g in b.target_train_gold]
    pairs, drops = build_corpus_pairs(unlabeled, cands, b.engine())
    src_cands = [[EntitySpan(s.start, s.end) for s in g.spans] for g in b.source_train]
    label_pairs, label_drops = build_corpus_pairs([s.tokens for s in b.source_train], src_cands, b.engine("forward"))
    runs = [(m, "bi-kl") for m in MODES] + [("conner", d) for d in DIVERGENCES if d != "bi-kl"]
    results = []
    for mode, div in runs:
        p, d = (label_pairs, label_drops) if mode == "trans-label" else (pairs, drops)
        rep, _ = train_run(b.source_train, p, b.source_dev, b.target_test,
                           TrainingConfig(mode=mode, divergence=div, epochs=3), b.label_space,
                           unlabeled=unlabeled, drop_counts=d)
        finite = all(np.isfinite(row[k]) for row in rep.epochs for k in ("total", "ce", "drop", "trans"))
        valid = rep.epochs_completed >= 1 and 0.0 <= rep.test["f1"] <= 1.0 and json.loads(rep.to_json())
        results.append((mode, div, finite and bool(valid), rep.test["f1"]))
    ok = all(r[2] for r in results)
    verdict(6, "ablation modes and divergences complete", ok,
            "; ".join(f"{m}/{d} f1={f:.3f}{'' if good else ' BAD'}" for m, d, good, f in results))


# 7 --------------------------------------------------------------------------

def test_scorer_fixture(verdict):
    data = json.loads(FIXTURE.read_text())
    types = data["types"]
    conv = lambda spans: [EntitySpan(a, b, types.index(t)) for a, b, t in spans]
    gold = [conv(s["gold"]) for s in data["sentences"]]
    pred = [conv(s["pred"]) for s in data["sentences"]]
    exp = data["expected"]
    r = micro_f1(gold, pred, types)
    first = micro_f1(gold[:1], pred[:1])
    ok = ((r.correct, r.gold, r.predicted) == (exp["correct"], exp["gold"], exp["predicted"])
          and r.precision == exp["precision"][0] / exp["precision"][1]
          and r.recall == exp["recall"][0] / exp["recall"][1]
          and abs(r.f1 - exp["f1"][0] / exp["f1"][1]) <= 1e-15
          and all(r.per_type[k]["correct"] == v["correct"] and r.per_type[k]["gold"] == v["gold"]
                  and r.per_type[k]["predicted"] == v["predicted"]
                  and abs(r.per_type[k]["f1"] - v["f1"][0] / v["f1"][1]) <= 1e-15
                  for k, v in exp["per_type"].items())
          and first.precision == first.recall == first.f1 == 0.5)
    verdict(7, "scorer fixture", ok,
            f"P={r.precision:.4f} R={r.recall:.4f} F1={r.f1:.4f}; first sentence P=R=F1={first.f1}")


# 8 --------------------------------------------------------------------------

def _cli_session(root: Path):
    data = root / "data"
    calls = [
        ["synth", "--seed", "3", "--out", data, "--sizes", "150,50,150,50"],
        ["train", "--train", data / "source_train.conll", "--dev", data / "source_dev.conll",
         "--test", data / "target_test.conll", "--unlabeled", data / "target_train.conll",
         "--mode", "vanilla", "--epochs", "2", "--seed", "3", "--out", root / "weak"],
        ["prepare-pairs", "--input", data / "target_train.conll", "--checkpoint", root / "weak" / "checkpoint.json",
         "--lexicon", data / "lexicon.tsv", "--cache", root / "cache.jsonl", "--rho", "0.3", "--seed", "3",
         "--out", root / "pairs.jsonl"],
        ["train", "--train", data / "source_train.conll", "--dev", data / "source_dev.conll",
         "--test", data / "target_test.conll", "--pairs", root / "pairs.jsonl", "--epochs", "2",
         "--seed", "3", "--out", root / "conner"],
        ["tag", "--checkpoint", root / "conner" / "checkpoint.json", "--input", data / "target_train.conll",
         "--out", root / "tagged.conll"],
        ["eval", "--checkpoint", root / "conner" / "checkpoint.json", "--test", data / "target_test.conll",
         "--out", root / "eval.json"],
    ]
    return [cli_main([str(a) for a in call]) for call in calls]


def test_cli_determinism(verdict, tmp_path):
    codes_a = _cli_session(tmp_path / "a")
    codes_b = _cli_session(tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    differing = [str(f) for f in files_a if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = codes_a == codes_b == [0] * 6 and files_a == files_b and not differing
    verdict(8, "CLI determinism", ok,
            f"{len(files_a)} artifacts from 6 commands compared byte-for-byte, differing: {differing or 'none'}")


# 9 --------------------------------------------------------------------------

def test_shipped_defaults(verdict, tmp_path):
    cfg = TrainingConfig()
    b = generate_bundle(sizes=(60, 20, 60, 20), seed=0)
    rep, _ = train_run(b.source_train, [], b.source_dev, None, TrainingConfig(epochs=1), b.label_space)
    cli_main(["synth", "--out", str(tmp_path / "d"), "--sizes", "60,20,60,20"])
    cli_main(["train", "--train", str(tmp_path / "d" / "source_train.conll"), "--dev",
              str(tmp_path / "d" / "source_dev.conll"), "--epochs", "1", "--out", str(tmp_path / "run")])
    cli_rep = json.loads((tmp_path / "run" / "report.json").read_text())
    echoed = [(r["alpha"], r["beta"]) for r in (rep.config, cli_rep["config"])]
    ok = (cfg.alpha, cfg.beta) == (0.5, 0.5) and all(e == (0.5, 0.5) for e in echoed)
    verdict(9, "shipped loss-weight defaults", ok,
            f"config alpha={cfg.alpha} beta={cfg.beta}; echoed in reports: {echoed}")
