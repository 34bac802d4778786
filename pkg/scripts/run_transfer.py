"""Cross-lingual transfer on the synthetic bundle: vanilla vs ConNER vs trans-unlabel over several seeds.

Per seed, the vanilla run doubles as the weak tagger that proposes candidate
spans on the unlabeled target text. Results go to stdout and, optionally, JSON.

    python scripts/run_transfer.py --seeds 0 1 2 3 4 --out results/transfer.json
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from xlner.synth import SPECS, generate_bundle
from xlner.training import TrainingConfig, train_run
from xlner.translation import build_corpus_pairs, select_candidate_spans


def run_seed(bundle, seed, modes, overrides):
    unlabeled = [s.tokens for s in bundle.target_train]
    vanilla, weak = train_run(bundle.source_train, [], bundle.source_dev, bundle.target_test,
                              TrainingConfig(mode="vanilla", seed=seed, **overrides), bundle.label_space,
                              unlabeled=unlabeled)
    candidates = [select_candidate_spans(weak, toks) for toks in unlabeled]
    pairs, drops = build_corpus_pairs(unlabeled, candidates, bundle.engine("backward"))
    out = {"vanilla": vanilla.to_dict(), "pairs": len(pairs), "drops": dict(drops)}
    for mode in modes:
        rep, _ = train_run(bundle.source_train, pairs, bundle.source_dev, bundle.target_test,
                           TrainingConfig(mode=mode, seed=seed, **overrides), bundle.label_space,
                           unlabeled=unlabeled, drop_counts=drops)
        out[mode] = rep.to_dict()
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--bundle-seed", type=int, default=0)
    ap.add_argument("--modes", nargs="+", default=["conner", "trans-unlabel"])
    ap.add_argument("--overlap", type=float, default=None)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    spec = SPECS["default"]
    if args.overlap is not None:
        spec = type(spec).from_dict({**spec.to_dict(), "overlap": args.overlap})
    overrides = {"epochs": args.epochs} if args.epochs else {}
    bundle = generate_bundle(spec, seed=args.bundle_seed)

    results = {}
    for seed in args.seeds:
        t0 = time.perf_counter()
        results[seed] = run_seed(bundle, seed, args.modes, overrides)
        f1s = " ".join(f"{m}={100 * results[seed][m]['test']['f1']:.2f}" for m in ["vanilla", *args.modes])
        print(f"seed {seed}: {f1s} pairs={results[seed]['pairs']} ({time.perf_counter() - t0:.0f}s)", flush=True)

    print("\nmode            mean F1   std")
    for mode in ["vanilla", *args.modes]:
        vals = [100 * results[s][mode]["test"]["f1"] for s in args.seeds]
        print(f"{mode:<15} {np.mean(vals):7.2f} {np.std(vals):5.2f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
