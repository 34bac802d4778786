"""Entity-level micro F1 and CoNLL-style corpus I/O."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConllParseError, IllegalSequenceError, InvalidInputError
from .labels import EntitySpan, LabelSpace, Tag, decode_tags, first_illegal_position

_FIELD_SPLIT = re.compile(r"\t| +")


@dataclass
class TaggedSentence:
    tokens: list[str]
    tags: list[Tag] | None = None
    language: str = ""

    def __post_init__(self):
        if self.tags is not None:
            if len(self.tags) != len(self.tokens):
                raise InvalidInputError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")
            decode_tags(self.tags, "strict")

    @property
    def spans(self) -> list[EntitySpan]:
        return decode_tags(self.tags, "strict") if self.tags is not None else []


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int
    per_type: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "correct": self.correct,
            "per_type": self.per_type,
        }


def _prf(correct: int, gold: int, predicted: int) -> tuple[float, float, float]:
    precision = correct / predicted if predicted else 0.0
    recall = correct / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def micro_f1(gold: Sequence[Iterable[EntitySpan]], pred: Sequence[Iterable[EntitySpan]],
             type_names: Sequence[str] | None = None) -> EvalResult:
    """Exact-match (boundaries and type) entity scoring, micro-averaged over sentences.

    Precision with no predictions is 0, so an empty tagger scores F1 = 0.
    """
    if len(gold) != len(pred):
        raise InvalidInputError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    n_gold, n_pred, n_correct = Counter(), Counter(), Counter()
    for g, p in zip(gold, pred):
        g, p = set(g), set(p)
        for s in g:
            n_gold[s.type_index] += 1
        for s in p:
            n_pred[s.type_index] += 1
        for s in g & p:
            n_correct[s.type_index] += 1

    per_type = {}
    for t in sorted(set(n_gold) | set(n_pred), key=lambda x: (x is None, x)):
        key = type_names[t] if type_names is not None and t is not None else str(t)
        p_, r_, f_ = _prf(n_correct[t], n_gold[t], n_pred[t])
        per_type[key] = {"precision": p_, "recall": r_, "f1": f_,
                         "gold": n_gold[t], "predicted": n_pred[t], "correct": n_correct[t]}
    total_c, total_g, total_p = sum(n_correct.values()), sum(n_gold.values()), sum(n_pred.values())
    precision, recall, f1 = _prf(total_c, total_g, total_p)
    return EvalResult(precision, recall, f1, total_g, total_p, total_c, per_type)


def score_sentences(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence],
                    label_space: LabelSpace | None = None) -> EvalResult:
    names = label_space.entity_types if label_space is not None else None
    return micro_f1([s.spans for s in gold], [s.spans for s in pred], names)


# CoNLL I/O -----------------------------------------------------------------

def _blocks(lines: Iterable[str]):
    """Yield ``(first_line_number, [(line_number, text)])`` per blank-line separated block."""
    block, start = [], None
    for number, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if block:
                yield start, block
                block = []
            continue
        if not block:
            start = number
        block.append((number, line))
    if block:
        yield start, block


def scan_entity_types(path) -> list[str]:
    """Entity type names found in a labeled CoNLL file, sorted."""
    types = set()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            fields = _FIELD_SPLIT.split(raw.strip())
            if len(fields) == 2 and fields[1] != "O" and "-" in fields[1]:
                types.add(fields[1].split("-", 1)[1])
    return sorted(types)


def read_conll(path, label_space: LabelSpace | None = None, has_labels: bool = True,
               language: str = "") -> list[TaggedSentence]:
    """Read ``token<TAB or spaces>tag`` lines (or bare tokens when ``has_labels`` is off)."""
    if has_labels and label_space is None:
        raise InvalidInputError("reading labeled data needs a label space")
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for index, (_, block) in enumerate(_blocks(fh)):
            tokens, tags = [], []
            for number, line in block:
                fields = _FIELD_SPLIT.split(line.strip())
                if has_labels:
                    if len(fields) != 2:
                        raise ConllParseError(f"expected 'token tag', got {line!r}", number)
                    try:
                        tags.append(label_space.parse(fields[1]))
                    except InvalidInputError as exc:
                        raise ConllParseError(str(exc), number) from None
                elif len(fields) != 1:
                    raise ConllParseError(f"expected a single token, got {line!r}", number)
                tokens.append(fields[0])
            if has_labels:
                bad = first_illegal_position(tags)
                if bad is not None:
                    raise IllegalSequenceError(
                        f"sentence {index}: illegal BIOES sequence at token {bad}", position=bad, sentence=index
                    )
            sentences.append(TaggedSentence(tokens, tags if has_labels else None, language))
    return sentences


def format_conll(sentences: Sequence[TaggedSentence], label_space: LabelSpace | None = None) -> str:
    chunks = []
    for s in sentences:
        if s.tags is None:
            lines = list(s.tokens)
        else:
            if label_space is None:
                raise InvalidInputError("writing labeled data needs a label space")
            lines = [f"{tok}\t{label_space.name(tag)}" for tok, tag in zip(s.tokens, s.tags)]
        chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)


def write_conll(sentences: Sequence[TaggedSentence], path, label_space: LabelSpace | None = None) -> None:
    Path(path).write_text(format_conll(sentences, label_space), encoding="utf-8")
