"""Ablation grid: every run mode, plus the three divergences for the translation-consistency modes.

Unlabeled-side pairs use gold target boundaries as candidates, so the grid
isolates the loss terms from weak-tagger quality. trans-label gets its own
pairs: labeled source sentences translated forward with their gold spans.

    python scripts/run_ablation.py --seeds 0 1 2
"""

import argparse
import json
from pathlib import Path

import numpy as np

from xlner.labels import EntitySpan
from xlner.synth import generate_bundle
from xlner.training import MODES, TrainingConfig, train_run
from xlner.spanprob import DIVERGENCES
from xlner.translation import build_corpus_pairs

TRANS_MODES = ("conner", "trans-unlabel", "trans-label")


def grid():
    for mode in MODES:
        for div in (DIVERGENCES if mode in TRANS_MODES else ("bi-kl",)):
            yield mode, div


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--sizes", type=int, nargs=4, default=[2000, 500, 2000, 500])
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    bundle = generate_bundle(sizes=args.sizes, seed=0)
    unlabeled = [s.tokens for s in bundle.target_train]
    cands = [[EntitySpan(s.start, s.end) for s in g.spans] for g in bundle.target_train_gold]
    pairs, drops = build_corpus_pairs(unlabeled, cands, bundle.engine())
    src_cands = [[EntitySpan(s.start, s.end) for s in g.spans] for g in bundle.source_train]
    label_pairs, label_drops = build_corpus_pairs([s.tokens for s in bundle.source_train], src_cands,
                                                  bundle.engine("forward"))

    table = {}
    for mode, div in grid():
        scores = []
        for seed in args.seeds:
            cfg = TrainingConfig(mode=mode, divergence=div, seed=seed, epochs=args.epochs)
            p, d = (label_pairs, label_drops) if mode == "trans-label" else (pairs, drops)
            rep, _ = train_run(bundle.source_train, p, bundle.source_dev, bundle.target_test, cfg,
                               bundle.label_space, unlabeled=unlabeled, drop_counts=d)
            scores.append(100 * rep.test["f1"])
        table[f"{mode}/{div}"] = scores
        print(f"{mode:<16} {div:<11} {np.mean(scores):6.2f} +- {np.std(scores):4.2f}", flush=True)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(table, indent=2) + "\n")


if __name__ == "__main__":
    main()
