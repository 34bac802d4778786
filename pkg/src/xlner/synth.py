"""Deterministic parallel synthetic languages with gold entity annotation.

The source language is sampled from slot templates. The target language is
its word-by-word lexicon image (some words become two-word phrases) with a
deterministic word-order rule applied, so entity spans move and change
length between the two. The same lexicon drives :class:`LexiconEngine`, so
translating target text back recovers the source twin exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .evaluation import TaggedSentence, write_conll
from .labels import EntitySpan, LabelSpace, encode_entities
from .translation import REORDER_RULES, Lexicon, LexiconEngine

SOURCE_CONSONANTS = "bdfgklmnprstv"
SOURCE_VOWELS = "aeiou"
TARGET_CONSONANTS = "cjqwxz"
TARGET_VOWELS = "aeiouy"
SOURCE_PUNCT = {".": ".", ",": ","}
TARGET_PUNCT = {".": "|", ",": ";"}

DEFAULT_TEMPLATES = (
    "TITLE PER VERB PREP_LOC LOC .",
    "PER VERB DET NOUN PREP_ORG ORG .",
    "DET ADJ NOUN PREP_LOC LOC VERB MISC .",
    "ORG VERB TITLE PER , DET NOUN VERB .",
    "PER , DET ADJ NOUN PREP_ORG ORG , VERB .",
    "DET NOUN VERB PREP_LOC LOC .",
    "DET MISC NOUN VERB TITLE PER .",
    "LOC VERB DET ADJ NOUN .",
    "PER VERB PREP_LOC LOC PREP_ORG ORG .",
    "DET NOUN PREP MISC VERB ADJ .",
    "TITLE PER PREP_ORG ORG VERB DET MISC NOUN .",
    "DET ADJ NOUN VERB PREP DET NOUN .",
)


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG", "MISC")
    names_per_type: int = 60
    entity_lengths: dict = field(default_factory=lambda: {
        "PER": {1: 0.4, 2: 0.6},
        "LOC": {1: 0.7, 2: 0.3},
        "ORG": {1: 0.3, 2: 0.4, 3: 0.3},
        "MISC": {1: 0.6, 2: 0.4},
    })
    plain_classes: dict = field(default_factory=lambda: {
        "DET": 6, "NOUN": 60, "VERB": 60, "ADJ": 40,
        "PREP": 6, "PREP_LOC": 5, "PREP_ORG": 5, "TITLE": 5,
    })
    templates: tuple[str, ...] = DEFAULT_TEMPLATES
    lexicon_seed: int = 1234
    reorder: str = "reverse"
    overlap: float = 0.0
    compound_rate: float = 0.15
    shared_names: int = 15

    def validate(self) -> None:
        if not self.entity_types or len(set(self.entity_types)) != len(self.entity_types):
            raise InvalidSpecError("entity types must be non-empty and unique")
        if self.names_per_type < 1:
            raise InvalidSpecError("names_per_type must be >= 1")
        if not 0 <= self.shared_names <= self.names_per_type:
            raise InvalidSpecError("shared_names must lie in [0, names_per_type]")
        if self.reorder not in REORDER_RULES:
            raise InvalidSpecError(f"unknown reorder rule {self.reorder!r}")
        if not 0.0 <= self.overlap <= 1.0 or not 0.0 <= self.compound_rate <= 1.0:
            raise InvalidSpecError("overlap and compound_rate must lie in [0, 1]")
        known = set(self.entity_types) | set(self.plain_classes) | set(SOURCE_PUNCT)
        for t in self.entity_types:
            lengths = self.entity_lengths.get(t)
            if not lengths or any(int(k) < 1 or w < 0 for k, w in lengths.items()) or sum(lengths.values()) <= 0:
                raise InvalidSpecError(f"entity type {t} needs a positive length distribution")
        for name, size in self.plain_classes.items():
            if size < 1:
                raise InvalidSpecError(f"word class {name} must have at least one word")
        if not self.templates:
            raise InvalidSpecError("need at least one template")
        for tpl in self.templates:
            for slot in tpl.split():
                if slot not in known:
                    raise InvalidSpecError(f"template {tpl!r} references undefined slot {slot!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["entity_lengths"] = {t: {str(k): v for k, v in ls.items()} for t, ls in self.entity_lengths.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticLanguageSpec":
        d = dict(d)
        d["entity_types"] = tuple(d["entity_types"])
        d["templates"] = tuple(d["templates"])
        d["entity_lengths"] = {t: {int(k): v for k, v in ls.items()} for t, ls in d["entity_lengths"].items()}
        return cls(**d)


SPECS = {"default": SyntheticLanguageSpec()}
DEFAULT_SIZES = (2000, 500, 2000, 500)


def _word_stream(consonants: str, vowels: str, rng: np.random.Generator):
    """Endless stream of distinct pseudo-words: all two-syllable words in random order, then three, ..."""
    syllables = [c + v for c, v in itertools.product(consonants, vowels)]
    for n_syll in itertools.count(2):
        combos = list(itertools.product(syllables, repeat=n_syll))
        for k in rng.permutation(len(combos)):
            yield "".join(combos[k])


@dataclass
class Vocabularies:
    """Source words per class and the lexicon linking them to target phrases."""

    words: dict[str, list[str]]
    lexicon: Lexicon


def build_lexicon(spec: SyntheticLanguageSpec) -> Vocabularies:
    spec.validate()
    rng = np.random.default_rng(spec.lexicon_seed)
    src_words = _word_stream(SOURCE_CONSONANTS, SOURCE_VOWELS, rng)
    tgt_words = _word_stream(TARGET_CONSONANTS, TARGET_VOWELS, rng)
    classes = [(t, spec.names_per_type) for t in spec.entity_types] + sorted(spec.plain_classes.items())
    words, entries = {}, []
    shared = [next(src_words).capitalize() for _ in range(spec.shared_names)]
    for w in shared:
        entries.append(((w,), _target_phrase(w, True, spec, rng, tgt_words)))
    for name, size in classes:
        is_entity = name in spec.entity_types
        words[name] = list(shared) if is_entity else []
        for _ in range(size - (len(shared) if is_entity else 0)):
            w = next(src_words)
            w = w.capitalize() if is_entity else w
            words[name].append(w)
            entries.append(((w,), _target_phrase(w, is_entity, spec, rng, tgt_words)))
    for mark, src in SOURCE_PUNCT.items():
        words[mark] = [src]
        entries.append(((src,), (TARGET_PUNCT[mark],)))
    return Vocabularies(words, Lexicon(entries, {"reorder": spec.reorder}))


def _target_phrase(word, is_entity, spec, rng, tgt_words) -> tuple[str, ...]:
    if rng.random() < spec.overlap:
        return (word,)
    if rng.random() < spec.compound_rate:
        target = (next(tgt_words), next(tgt_words))
    else:
        target = (next(tgt_words),)
    if is_entity:
        target = tuple(x.capitalize() for x in target)
    return target


@dataclass
class CorpusBundle:
    spec: SyntheticLanguageSpec
    seed: int
    label_space: LabelSpace
    lexicon: Lexicon
    source_train: list[TaggedSentence]
    source_dev: list[TaggedSentence]
    target_train: list[TaggedSentence]
    target_train_gold: list[TaggedSentence]
    target_test: list[TaggedSentence]
    target_train_twins: list[TaggedSentence]
    target_test_twins: list[TaggedSentence]

    def engine(self, direction: str = "backward", rho: float = 0.0, seed: int = 0) -> LexiconEngine:
        """Engine over the bundle lexicon; ``backward`` translates target text into the source language."""
        return LexiconEngine(self.lexicon, direction, self.spec.reorder, rho, seed)


class _Sampler:
    def __init__(self, spec: SyntheticLanguageSpec, vocab: Vocabularies, label_space: LabelSpace,
                 rng: np.random.Generator):
        self.spec, self.vocab, self.label_space, self.rng = spec, vocab, label_space, rng
        self.lengths = {}
        for t, dist in spec.entity_lengths.items():
            ks = sorted(dist)
            ps = np.array([dist[k] for k in ks], dtype=float)
            self.lengths[t] = (ks, ps / ps.sum())

    def sentence(self) -> TaggedSentence:
        tpl = self.spec.templates[self.rng.integers(len(self.spec.templates))]
        tokens, spans = [], []
        for slot in tpl.split():
            pool = self.vocab.words[slot]
            if slot in self.spec.entity_types:
                ks, ps = self.lengths[slot]
                length = ks[self.rng.choice(len(ks), p=ps)]
                start = len(tokens)
                tokens.extend(pool[i] for i in self.rng.integers(len(pool), size=length))
                spans.append(EntitySpan(start, len(tokens) - 1, self.label_space.type_index(slot)))
            else:
                tokens.append(pool[self.rng.integers(len(pool))])
        return TaggedSentence(tokens, encode_entities(len(tokens), spans), "src")


def project_sentence(sentence: TaggedSentence, engine: LexiconEngine, language: str = "tgt") -> TaggedSentence:
    """Translate a labeled sentence and carry each entity to the union of its tokens' output ranges."""
    text = " ".join(sentence.tokens)
    out = engine.translate(text).split()
    ranges = engine.ledger[text]
    spans = []
    for s in sentence.spans:
        cover = ranges[s.start:s.end + 1]
        spans.append(EntitySpan(min(r[0] for r in cover), max(r[1] for r in cover), s.type_index))
    return TaggedSentence(out, encode_entities(len(out), spans), language)


def generate_bundle(spec: SyntheticLanguageSpec | None = None, sizes=DEFAULT_SIZES, seed: int = 0) -> CorpusBundle:
    spec = spec or SPECS["default"]
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 4 or min(sizes) < 1:
        raise InvalidSpecError("sizes must be four positive counts: source train/dev, target train/test")
    vocab = build_lexicon(spec)
    label_space = LabelSpace(spec.entity_types)
    streams = np.random.SeedSequence(seed).spawn(4)
    samplers = [_Sampler(spec, vocab, label_space, np.random.default_rng(s)) for s in streams]
    forward = LexiconEngine(vocab.lexicon, "forward", spec.reorder)

    source_train = [samplers[0].sentence() for _ in range(sizes[0])]
    source_dev = [samplers[1].sentence() for _ in range(sizes[1])]
    train_twins = [samplers[2].sentence() for _ in range(sizes[2])]
    test_twins = [samplers[3].sentence() for _ in range(sizes[3])]
    target_train_gold = [project_sentence(s, forward) for s in train_twins]
    target_test = [project_sentence(s, forward) for s in test_twins]
    target_train = [TaggedSentence(list(s.tokens), None, "tgt") for s in target_train_gold]
    return CorpusBundle(spec, seed, label_space, vocab.lexicon, source_train, source_dev,
                        target_train, target_train_gold, target_test, train_twins, test_twins)


BUNDLE_FILES = {
    "source_train": "source_train.conll",
    "source_dev": "source_dev.conll",
    "target_train": "target_train.conll",
    "target_train_gold": "target_train.gold.conll",
    "target_test": "target_test.conll",
    "lexicon": "lexicon.tsv",
}


def write_bundle(bundle: CorpusBundle, out_dir, spec_name: str = "default") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ls = bundle.label_space
    write_conll(bundle.source_train, out / BUNDLE_FILES["source_train"], ls)
    write_conll(bundle.source_dev, out / BUNDLE_FILES["source_dev"], ls)
    write_conll(bundle.target_train, out / BUNDLE_FILES["target_train"])
    write_conll(bundle.target_train_gold, out / BUNDLE_FILES["target_train_gold"], ls)
    write_conll(bundle.target_test, out / BUNDLE_FILES["target_test"], ls)
    bundle.lexicon.write(out / BUNDLE_FILES["lexicon"], header="source\ttarget")
    manifest = {
        "spec_name": spec_name,
        "spec": bundle.spec.to_dict(),
        "seed": bundle.seed,
        "entity_types": list(ls.entity_types),
        "counts": {
            "source_train": len(bundle.source_train),
            "source_dev": len(bundle.source_dev),
            "target_train": len(bundle.target_train),
            "target_test": len(bundle.target_test),
            "lexicon_entries": len(bundle.lexicon),
        },
        "files": BUNDLE_FILES,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
