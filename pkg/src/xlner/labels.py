"""BIOES label space and conversions between entity spans and tag sequences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import IllegalSequenceError, InvalidInputError

PREFIXES = ("B", "I", "E", "S")
OUTSIDE = "O"


@dataclass(frozen=True)
class Tag:
    kind: str
    type_index: int | None = None

    def __post_init__(self):
        if self.kind == OUTSIDE:
            if self.type_index is not None:
                raise InvalidInputError("O tag cannot carry an entity type")
        elif self.kind in PREFIXES:
            if self.type_index is None or self.type_index < 0:
                raise InvalidInputError(f"{self.kind} tag needs a type index")
        else:
            raise InvalidInputError(f"unknown tag kind {self.kind!r}")


O = Tag(OUTSIDE)


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Inclusive token span ``[start, end]``; ``type_index`` may be None for boundary-only spans."""

    start: int
    end: int
    type_index: int | None = None

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class LabelSpace:
    """Tag inventory for a fixed, ordered entity-type set.

    Tags are laid out as ``B-T1, I-T1, E-T1, S-T1, B-T2, ..., O`` so that
    the size is always ``4 * N + 1`` and ``O`` is the last index.
    """

    def __init__(self, entity_types: Sequence[str]):
        types = tuple(entity_types)
        if not types:
            raise InvalidInputError("entity type set must be non-empty")
        if any(not isinstance(t, str) or not t for t in types):
            raise InvalidInputError("entity type names must be non-empty strings")
        if len(set(types)) != len(types):
            raise InvalidInputError(f"duplicate entity type names in {types}")
        if any("-" in t or any(c.isspace() for c in t) for t in types):
            raise InvalidInputError("entity type names may not contain '-' or whitespace")
        self.entity_types = types
        self.tags: tuple[Tag, ...] = tuple(
            Tag(kind, ti) for ti in range(len(types)) for kind in PREFIXES
        ) + (O,)
        self._index = {tag: i for i, tag in enumerate(self.tags)}
        self._allowed = self._build_allowed()

    @property
    def num_types(self) -> int:
        return len(self.entity_types)

    @property
    def size(self) -> int:
        return len(self.tags)

    @property
    def outside_index(self) -> int:
        return self.size - 1

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSpace) and other.entity_types == self.entity_types

    def __hash__(self) -> int:
        return hash(self.entity_types)

    def __repr__(self) -> str:
        return f"LabelSpace({list(self.entity_types)})"

    def index(self, tag: Tag) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise InvalidInputError(f"tag {tag} not in {self!r}") from None

    def tag_index(self, kind: str, type_index: int | None = None) -> int:
        return self.index(Tag(kind, type_index))

    def type_index(self, name: str) -> int:
        try:
            return self.entity_types.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown entity type {name!r}") from None

    def name(self, tag: Tag | int) -> str:
        if isinstance(tag, (int, np.integer)):
            tag = self.tags[tag]
        if tag.kind == OUTSIDE:
            return OUTSIDE
        return f"{tag.kind}-{self.entity_types[tag.type_index]}"

    def parse(self, text: str) -> Tag:
        if text == OUTSIDE:
            return O
        kind, sep, type_name = text.partition("-")
        if not sep or kind not in PREFIXES:
            raise InvalidInputError(f"malformed BIOES tag {text!r}")
        return Tag(kind, self.type_index(type_name))

    # legality --------------------------------------------------------------

    def _build_allowed(self) -> np.ndarray:
        """Boolean ``(size + 2, size + 2)`` transition mask; rows/cols ``size`` and ``size + 1`` are START/STOP."""
        n = self.size
        start, stop = n, n + 1
        allowed = np.zeros((n + 2, n + 2), dtype=bool)
        for i, prev in enumerate(self.tags):
            for j, nxt in enumerate(self.tags):
                allowed[i, j] = transition_ok(prev, nxt)
            allowed[i, stop] = prev.kind in (OUTSIDE, "E", "S")
        for j, nxt in enumerate(self.tags):
            allowed[start, j] = nxt.kind in (OUTSIDE, "B", "S")
        return allowed

    @property
    def allowed_transitions(self) -> np.ndarray:
        return self._allowed.copy()

    def transition_mask(self) -> np.ndarray:
        """Additive mask: 0 on legal transitions, -inf on illegal ones."""
        return np.where(self._allowed, 0.0, -np.inf)


def transition_ok(prev: Tag, nxt: Tag) -> bool:
    if prev.kind in ("B", "I"):
        return nxt.kind in ("I", "E") and nxt.type_index == prev.type_index
    return nxt.kind in (OUTSIDE, "B", "S")


def build_label_space(types: Iterable[str]) -> LabelSpace:
    return LabelSpace(list(types))


def span_tag_sequence(type_index: int, length: int) -> list[Tag]:
    """The only BIOES sequence that realises one entity of one type over ``length`` tokens."""
    if length < 1:
        raise InvalidInputError(f"span length must be >= 1, got {length}")
    if length == 1:
        return [Tag("S", type_index)]
    return [Tag("B", type_index)] + [Tag("I", type_index)] * (length - 2) + [Tag("E", type_index)]


def encode_entities(sentence_length: int, spans: Iterable[EntitySpan]) -> list[Tag]:
    tags = [O] * sentence_length
    taken = [False] * sentence_length
    for span in sorted(spans):
        if span.type_index is None:
            raise InvalidInputError(f"span {span} has no entity type")
        if not 0 <= span.start <= span.end < sentence_length:
            raise InvalidInputError(f"span {span} out of bounds for length {sentence_length}")
        if any(taken[span.start:span.end + 1]):
            raise InvalidInputError(f"span {span} overlaps another span")
        for offset, tag in enumerate(span_tag_sequence(span.type_index, span.length)):
            tags[span.start + offset] = tag
            taken[span.start + offset] = True
    return tags


def first_illegal_position(tags: Sequence[Tag]) -> int | None:
    """Index of the first tag that breaks BIOES, or None. ``len(tags)`` means an unterminated entity."""
    prev = None
    for i, tag in enumerate(tags):
        if prev is None:
            if tag.kind not in (OUTSIDE, "B", "S"):
                return i
        elif not transition_ok(prev, tag):
            return i
        prev = tag
    if prev is not None and prev.kind in ("B", "I"):
        return len(tags)
    return None


def decode_tags(tags: Sequence[Tag], mode: str = "strict") -> list[EntitySpan]:
    """Turn a tag sequence into entity spans.

    ``strict`` raises :class:`IllegalSequenceError` at the first offending
    position. ``lenient`` drops ill-formed fragments and keeps the rest;
    it is meant for inspecting raw model output, not for scoring.
    """
    if mode not in ("strict", "lenient"):
        raise InvalidInputError(f"unknown decode mode {mode!r}")
    if mode == "strict":
        bad = first_illegal_position(tags)
        if bad is not None:
            shown = tags[bad] if bad < len(tags) else "end of sentence"
            raise IllegalSequenceError(f"illegal BIOES sequence at position {bad} ({shown})", position=bad)

    spans = []
    open_start = None
    open_type = None
    for i, tag in enumerate(tags):
        if tag.kind == "S":
            spans.append(EntitySpan(i, i, tag.type_index))
            open_start = None
        elif tag.kind == "B":
            open_start, open_type = i, tag.type_index
        elif tag.kind == "I":
            if open_type != tag.type_index:
                open_start = None
        elif tag.kind == "E":
            if open_start is not None and open_type == tag.type_index:
                spans.append(EntitySpan(open_start, i, tag.type_index))
            open_start = None
        else:
            open_start = None
    return spans
