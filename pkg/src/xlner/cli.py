"""Command-line entry point: ``xlner {synth,prepare-pairs,train,eval,tag}``.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synth
from .errors import ConllParseError, EngineError, InvalidConfigError, InvalidInputError, InvalidSpecError, \
    TrainingDivergedError
from .evaluation import TaggedSentence, micro_f1, read_conll, scan_entity_types, write_conll
from .labels import EntitySpan, LabelSpace
from .tagger import Tagger
from .training import DIVERGENCES, MODES, TrainingConfig, evaluate, train_run
from .translation import (CachedEngine, ExternalEngine, Lexicon, LexiconEngine, TranslationCache,
                          build_corpus_pairs, read_pairs, select_candidate_spans, write_pairs)

log = logging.getLogger("xlner")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected four comma-separated integers") from None
    if len(sizes) != 4 or min(sizes) < 1:
        raise argparse.ArgumentTypeError("expected four positive comma-separated integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlner", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus bundle")
    p.add_argument("--spec", default="default", choices=sorted(synth.SPECS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", type=_sizes, default=synth.DEFAULT_SIZES,
                   help="source-train,source-dev,target-train,target-test sentence counts")
    p.add_argument("--overlap", type=float, default=None, help="fraction of words shared across languages")

    p = sub.add_parser("prepare-pairs", help="build conjugate pairs from a corpus via a translation engine")
    p.add_argument("--input", required=True, help="CoNLL file to project (unlabeled unless --gold-spans)")
    p.add_argument("--checkpoint", help="weak tagger proposing candidate spans")
    p.add_argument("--gold-spans", action="store_true", help="use the input's gold spans as candidates")
    p.add_argument("--engine", choices=("lexicon", "cached", "external"), default="lexicon")
    p.add_argument("--lexicon", help="lexicon TSV (lexicon engine)")
    p.add_argument("--direction", choices=("forward", "backward"), default="backward")
    p.add_argument("--reorder", choices=("identity", "reverse"), default=None,
                   help="word-order rule (default: read from the lexicon header)")
    p.add_argument("--rho", type=float, default=0.0, help="placeholder corruption rate (lexicon engine)")
    p.add_argument("--cache", help="translation cache file")
    p.add_argument("--engine-id", help="engine id to look up in the cache (cached engine)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--train", required=True, help="labeled source-language CoNLL file")
    p.add_argument("--dev", required=True, help="labeled source-language dev file")
    p.add_argument("--test", help="labeled target-language test file")
    p.add_argument("--pairs", help="conjugate-pair file")
    p.add_argument("--unlabeled", help="unlabeled target-language CoNLL file")
    p.add_argument("--config", help="run-config JSON; explicit flags override it")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--divergence", choices=DIVERGENCES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("eval", help="score predictions against a gold file")
    p.add_argument("--test", required=True, help="gold CoNLL file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--pred", help="predicted CoNLL file")
    p.add_argument("--out", help="write the result as JSON here")

    p = sub.add_parser("tag", help="tag a CoNLL file with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--labeled", action="store_true", help="input has a tag column (ignored)")
    p.add_argument("--out", required=True)
    return parser


def _read_tokens(path, labeled: bool, label_space: LabelSpace | None = None) -> list[TaggedSentence]:
    if labeled:
        ls = label_space or LabelSpace(scan_entity_types(path))
        return read_conll(path, ls, has_labels=True)
    return read_conll(path, has_labels=False)


def cmd_synth(args) -> str:
    spec = synth.SPECS[args.spec]
    if args.overlap is not None:
        spec = synth.SyntheticLanguageSpec.from_dict({**spec.to_dict(), "overlap": args.overlap})
    bundle = synth.generate_bundle(spec, args.sizes, args.seed)
    manifest = synth.write_bundle(bundle, args.out, args.spec)
    c = manifest["counts"]
    return (f"synth: wrote {c['source_train']}/{c['source_dev']}/{c['target_train']}/{c['target_test']} "
            f"sentences and {c['lexicon_entries']} lexicon entries to {args.out}")


def _make_engine(args):
    cache = TranslationCache(args.cache) if args.cache else None
    if args.engine == "lexicon":
        if not args.lexicon:
            raise UsageError("prepare-pairs: --lexicon is required with --engine lexicon")
        lexicon = Lexicon.read(args.lexicon)
        reorder = args.reorder or lexicon.meta.get("reorder", "identity")
        engine = LexiconEngine(lexicon, args.direction, reorder, args.rho, args.seed)
    elif args.engine == "cached":
        if cache is None:
            raise UsageError("prepare-pairs: --cache is required with --engine cached")
        engine_id = args.engine_id
        if engine_id is None:
            ids = cache.engine_ids()
            if len(ids) != 1:
                raise UsageError("prepare-pairs: --engine-id is required when the cache holds several engines")
            engine_id = ids.pop()
        return CachedEngine(cache, engine_id=engine_id), None
    else:
        engine = ExternalEngine()
    return engine, cache


def cmd_prepare_pairs(args) -> str:
    if args.gold_spans == bool(args.checkpoint):
        raise UsageError("prepare-pairs: give exactly one of --checkpoint or --gold-spans")
    engine, cache = _make_engine(args)
    if args.gold_spans:
        sentences = _read_tokens(args.input, labeled=True)
        candidates = [[EntitySpan(s.start, s.end) for s in sent.spans] for sent in sentences]
    else:
        weak = Tagger.load(args.checkpoint)
        sentences = _read_tokens(args.input, labeled=False)
        candidates = [select_candidate_spans(weak, s.tokens) for s in sentences]
    pairs, dropped = build_corpus_pairs([s.tokens for s in sentences], candidates, engine, cache, args.workers)
    write_pairs(pairs, args.out)
    n_cand = sum(len(c) for c in candidates)
    drop_text = ", ".join(f"{k}={v}" for k, v in sorted(dropped.items())) or "none"
    return f"prepare-pairs: {len(pairs)} pairs from {n_cand} candidate spans in {len(sentences)} sentences; dropped: {drop_text}"


OVERRIDABLE = ("seed", "alpha", "beta", "mode", "divergence", "epochs", "lr", "dropout", "patience")


def _effective_config(args) -> TrainingConfig:
    """File values (or defaults) with explicit flags on top; bad flag values are usage errors."""
    base = TrainingConfig.read(args.config).to_dict() if args.config else TrainingConfig().to_dict()
    given = {name: getattr(args, name) for name in OVERRIDABLE if getattr(args, name) is not None}
    try:
        return TrainingConfig.from_dict({**base, **given})
    except InvalidConfigError as exc:
        if not given:
            raise
        try:
            TrainingConfig.from_dict(base)
        except InvalidConfigError:
            raise exc from None
        flags = " ".join(f"--{name}" for name in given)
        raise UsageError(f"xlner train: invalid value among {flags}: {exc}") from None


def cmd_train(args) -> str:
    config = _effective_config(args)
    label_space = LabelSpace(scan_entity_types(args.train))
    labeled = read_conll(args.train, label_space)
    dev = read_conll(args.dev, label_space)
    test = read_conll(args.test, label_space) if args.test else None
    pairs = read_pairs(args.pairs) if args.pairs else []
    unlabeled = [s.tokens for s in read_conll(args.unlabeled, has_labels=False)] if args.unlabeled else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train.log"
    log_path.write_text("", encoding="utf-8")
    config.write(out / "config.json")
    report, tagger = train_run(labeled, pairs, dev, test, config, label_space, unlabeled, log_path=log_path)
    tagger.save(out / "checkpoint.json")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    test_text = f" test_f1={report.test['f1']:.4f}" if report.test else ""
    return (f"train: mode={config.mode} alpha={config.alpha} beta={config.beta} epochs={report.epochs_completed} "
            f"selected_epoch={report.selected_epoch} dev_f1={report.best_dev_f1:.4f}{test_text}")


def cmd_eval(args) -> str:
    if args.checkpoint:
        tagger = Tagger.load(args.checkpoint)
        gold = read_conll(args.test, tagger.label_space)
        result = evaluate(tagger, gold)
    else:
        label_space = LabelSpace(sorted(set(scan_entity_types(args.test)) | set(scan_entity_types(args.pred))))
        gold = read_conll(args.test, label_space)
        pred = read_conll(args.pred, label_space)
        if [s.tokens for s in gold] != [s.tokens for s in pred]:
            raise InvalidInputError("gold and predicted files do not contain the same token sequences")
        result = micro_f1([s.spans for s in gold], [s.spans for s in pred], label_space.entity_types)
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return f"eval: precision={result.precision:.4f} recall={result.recall:.4f} f1={result.f1:.4f} ({len(gold)} sentences)"


def cmd_tag(args) -> str:
    tagger = Tagger.load(args.checkpoint)
    sentences = _read_tokens(args.input, args.labeled, tagger.label_space)
    out = [TaggedSentence(list(s.tokens), tagger.predict_tags(s.tokens), s.language) for s in sentences]
    write_conll(out, args.out, tagger.label_space)
    n_ent = sum(len(s.spans) for s in out)
    return f"tag: {len(out)} sentences, {n_ent} entities written to {args.out}"


COMMANDS = {
    "synth": cmd_synth,
    "prepare-pairs": cmd_prepare_pairs,
    "train": cmd_train,
    "eval": cmd_eval,
    "tag": cmd_tag,
}

RUNTIME_ERRORS = (OSError, InvalidInputError, InvalidConfigError, InvalidSpecError, ConllParseError,
                  EngineError, TrainingDivergedError, ValueError, KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"xlner {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
