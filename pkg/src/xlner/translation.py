"""Alignment-free span projection through a translation engine.

For each candidate span the sentence is masked with a placeholder token,
the masked sentence and the bare span text are translated separately, and
the span translation is substituted back where the placeholder landed.
The resulting (original span, translated span) pair is a conjugate pair.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import string
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import EngineError, InvalidInputError, InvalidSpecError
from .labels import EntitySpan

PLACEHOLDER_PREFIX = "SPANX"
PLACEHOLDER_RE = re.compile(r"^SPANX\d{3}$", re.IGNORECASE)
PAIR_SCHEMA_VERSION = 1
LOST, DUPLICATED, EMPTY, ENGINE_FAILED = "placeholder-lost", "placeholder-duplicated", "empty-translation", "engine-error"
REORDER_RULES = ("identity", "reverse")


def placeholder(ordinal: int) -> str:
    if not 0 <= ordinal <= 999:
        raise InvalidInputError(f"placeholder ordinal must be in [0, 999], got {ordinal}")
    return f"{PLACEHOLDER_PREFIX}{ordinal:03d}"


def mask_span(tokens: Sequence[str], span: EntitySpan, span_ordinal: int) -> list[str]:
    if not 0 <= span.start <= span.end < len(tokens):
        raise InvalidInputError(f"span {span} out of bounds for {len(tokens)} tokens")
    return list(tokens[:span.start]) + [placeholder(span_ordinal)] + list(tokens[span.end + 1:])


def _placeholder_matches(tokens: Sequence[str], span_ordinal: int) -> list[tuple[int, str, str]]:
    """All ``(index, leading punct, trailing punct)`` where a token is the placeholder."""
    target = placeholder(span_ordinal).lower()
    found = []
    for i, tok in enumerate(tokens):
        lead = trail = ""
        core = tok
        if len(core) > 1 and core[0] in string.punctuation:
            lead, core = core[0], core[1:]
        if len(core) > 1 and core[-1] in string.punctuation:
            core, trail = core[:-1], core[-1]
        if core.lower() == target:
            found.append((i, lead, trail))
    return found


def locate_placeholder(translated_tokens: Sequence[str], span_ordinal: int) -> int | None:
    """Index of the placeholder in a translation, or None if it is missing or appears twice."""
    found = _placeholder_matches(translated_tokens, span_ordinal)
    return found[0][0] if len(found) == 1 else None


# engines -------------------------------------------------------------------

class TranslationEngine(Protocol):
    engine_id: str
    source_lang: str
    target_lang: str

    def translate(self, text: str) -> str: ...


class Lexicon:
    """Bijective phrase table between two languages; phrases are tuples of words."""

    def __init__(self, entries: Iterable[tuple[Sequence[str], Sequence[str]]], meta: dict | None = None):
        self.entries = [(tuple(s), tuple(t)) for s, t in entries]
        self.meta = dict(meta or {})
        self.forward = {}
        self.backward = {}
        for s, t in self.entries:
            if not s or not t:
                raise InvalidSpecError("lexicon entries must be non-empty on both sides")
            if s in self.forward:
                raise InvalidSpecError(f"duplicate source phrase {' '.join(s)!r}")
            if t in self.backward:
                raise InvalidSpecError(f"duplicate target phrase {' '.join(t)!r}")
            self.forward[s] = t
            self.backward[t] = s

    def __len__(self) -> int:
        return len(self.entries)

    def table(self, direction: str) -> dict:
        if direction == "forward":
            return self.forward
        if direction == "backward":
            return self.backward
        raise InvalidInputError(f"direction must be 'forward' or 'backward', got {direction!r}")

    @classmethod
    def read(cls, path) -> "Lexicon":
        entries, meta = [], {}
        with open(path, encoding="utf-8") as fh:
            for number, raw in enumerate(fh, 1):
                line = raw.rstrip("\r\n")
                if line.lstrip().startswith("#"):
                    key, sep, value = line.lstrip("# ").partition("=")
                    if sep and key and " " not in key:
                        meta[key] = value
                    continue
                if not line.strip():
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise InvalidSpecError(f"lexicon line {number}: expected two tab-separated columns")
                entries.append((cols[0].split(), cols[1].split()))
        return cls(entries, meta)

    def write(self, path, header: str | None = None) -> None:
        """Write the TSV; ``header`` lines and ``key=value`` metadata become ``#`` comments."""
        lines = [f"# {h}" for h in (header or "").splitlines()]
        lines += [f"# {k}={v}" for k, v in sorted(self.meta.items())]
        lines += [f"{' '.join(s)}\t{' '.join(t)}" for s, t in self.entries]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def reorder_units(units: list, rule: str) -> list:
    if rule == "identity":
        return list(units)
    if rule == "reverse":
        return list(reversed(units))
    raise InvalidSpecError(f"unknown reorder rule {rule!r}; expected one of {REORDER_RULES}")


class LexiconEngine:
    """Deterministic word-by-word translator over a :class:`Lexicon`.

    Input is segmented by greedy longest match over the input-side phrases;
    unknown words pass through. Units are then permuted by the reorder rule
    (the inverse permutation is used in the ``backward`` direction). Each
    placeholder survives with probability ``1 - rho``; otherwise it comes
    out mangled. Every call records, per input token, the output token range
    it produced in :attr:`ledger`.
    """

    def __init__(self, lexicon: Lexicon, direction: str = "forward", reorder: str = "identity",
                 rho: float = 0.0, seed: int = 0, source_lang: str = "src", target_lang: str = "tgt",
                 engine_id: str | None = None):
        if not 0.0 <= rho <= 1.0:
            raise InvalidInputError("rho must lie in [0, 1]")
        reorder_units([], reorder)
        self.table = lexicon.table(direction)
        self.max_len = max((len(k) for k in self.table), default=1)
        self.direction = direction
        self.reorder = reorder
        self.rho = rho
        self.seed = seed
        if direction == "backward":
            source_lang, target_lang = target_lang, source_lang
        self.source_lang, self.target_lang = source_lang, target_lang
        self.engine_id = engine_id or f"lexicon:{self.source_lang}-{self.target_lang}:{reorder}:rho={rho}"
        self.ledger: dict[str, tuple[tuple[int, int], ...]] = {}
        self._lock = threading.Lock()

    def _segment(self, tokens: list[str]) -> list[tuple[int, int]]:
        units, i = [], 0
        while i < len(tokens):
            for size in range(min(self.max_len, len(tokens) - i), 0, -1):
                if size == 1 or tuple(tokens[i:i + size]) in self.table:
                    units.append((i, i + size))
                    i += size
                    break
        return units

    def _render(self, words: tuple[str, ...], text: str, position: int) -> tuple[str, ...]:
        if len(words) == 1 and PLACEHOLDER_RE.match(words[0]):
            if self.rho > 0.0:
                rng = np.random.default_rng(_stable_seed(self.seed, text, position))
                if rng.random() < self.rho:
                    return (words[0][:4] + words[0][5:],)  # drops the X: no longer a placeholder
            return words
        return self.table.get(words, words)

    def translate(self, text: str) -> str:
        tokens = text.split()
        units = self._segment(tokens)
        rendered = [(span, self._render(tuple(tokens[span[0]:span[1]]), text, span[0])) for span in units]
        # both rules are involutions, so the backward direction uses the same permutation
        ordered = reorder_units(rendered, self.reorder)
        out, ranges = [], [None] * len(tokens)
        for (a, b), words in ordered:
            for i in range(a, b):
                ranges[i] = (len(out), len(out) + len(words) - 1)
            out.extend(words)
        with self._lock:
            self.ledger[text] = tuple(ranges)
        return " ".join(out)


class TranslationCache:
    """Append-only JSONL ledger of engine responses keyed by (engine id, sha256 of source text)."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._store: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._store[(rec["engine_id"], rec["key"])] = rec["translation"]

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def __len__(self) -> int:
        return len(self._store)

    def engine_ids(self) -> set[str]:
        return {engine_id for engine_id, _ in self._store}

    def get(self, engine_id: str, text: str) -> str | None:
        return self._store.get((engine_id, self.key(text)))

    def put(self, engine_id: str, text: str, translation: str) -> None:
        k = (engine_id, self.key(text))
        with self._lock:
            if k in self._store:
                return
            self._store[k] = translation
            if self.path is not None:
                rec = {"engine_id": engine_id, "key": k[1], "source": text, "translation": translation}
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


class CachedEngine:
    """Serves translations from a cache, falling back to ``engine`` on a miss (if given)."""

    def __init__(self, cache: TranslationCache, engine: TranslationEngine | None = None,
                 engine_id: str | None = None, source_lang: str = "", target_lang: str = ""):
        if engine is None and engine_id is None:
            raise InvalidInputError("a cache-only engine needs an explicit engine id")
        self.cache = cache
        self.engine = engine
        self.engine_id = engine.engine_id if engine is not None else engine_id
        self.source_lang = engine.source_lang if engine is not None else source_lang
        self.target_lang = engine.target_lang if engine is not None else target_lang

    def translate(self, text: str) -> str:
        hit = self.cache.get(self.engine_id, text)
        if hit is not None:
            return hit
        if self.engine is None:
            raise EngineError("translation not in cache", request=text)
        out = self.engine.translate(text)
        self.cache.put(self.engine_id, text, out)
        return out


class ExternalEngine:
    """Generic JSON-over-HTTP client with retries and a minimum request interval.

    Sends ``{"q", "source", "target"}`` and expects ``{"translation": ...}``.
    """

    def __init__(self, url: str | None = None, source_lang: str = "src", target_lang: str = "tgt",
                 retries: int = 3, min_interval: float = 0.2, timeout: float = 30.0):
        self.url = url or os.environ.get("CONNER_EXTERNAL_ENGINE_URL")
        if not self.url:
            raise InvalidInputError("external engine needs a URL (CONNER_EXTERNAL_ENGINE_URL)")
        self.source_lang, self.target_lang = source_lang, target_lang
        self.engine_id = f"external:{self.url}:{source_lang}-{target_lang}"
        self.retries = retries
        self.min_interval = min_interval
        self.timeout = timeout
        self._last = 0.0
        self._lock = threading.Lock()

    def translate(self, text: str) -> str:
        body = json.dumps({"q": text, "source": self.source_lang, "target": self.target_lang}).encode("utf-8")
        last_error = None
        for attempt in range(self.retries + 1):
            with self._lock:
                wait = self._last + self.min_interval - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
                self._last = time.monotonic()
            req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))["translation"]
            except (urllib.error.URLError, OSError, KeyError, ValueError) as exc:
                last_error = exc
                time.sleep(min(2.0 ** attempt * 0.5, 8.0))
        raise EngineError(f"external engine failed after {self.retries + 1} attempts: {last_error}", request=text)


# conjugate pairs -------------------------------------------------------------

@dataclass(frozen=True)
class ConjugatePair:
    sentence_id: int
    original_tokens: tuple[str, ...]
    original_span: tuple[int, int]
    translated_tokens: tuple[str, ...]
    translated_span: tuple[int, int]
    engine_id: str

    def __post_init__(self):
        for tokens, (a, b) in ((self.original_tokens, self.original_span),
                               (self.translated_tokens, self.translated_span)):
            if not 0 <= a <= b < len(tokens):
                raise InvalidInputError(f"span {(a, b)} out of bounds for {len(tokens)} tokens")

    @property
    def original_text(self) -> tuple[str, ...]:
        a, b = self.original_span
        return self.original_tokens[a:b + 1]

    @property
    def translated_text(self) -> tuple[str, ...]:
        a, b = self.translated_span
        return self.translated_tokens[a:b + 1]

    def to_json(self) -> str:
        rec = {"version": PAIR_SCHEMA_VERSION, **asdict(self)}
        rec["original_tokens"] = list(self.original_tokens)
        rec["translated_tokens"] = list(self.translated_tokens)
        rec["original_span"] = list(self.original_span)
        rec["translated_span"] = list(self.translated_span)
        return json.dumps(rec, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ConjugatePair":
        rec = json.loads(line)
        if rec.get("version") != PAIR_SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported pair schema version {rec.get('version')}")
        return cls(int(rec["sentence_id"]), tuple(rec["original_tokens"]), tuple(rec["original_span"]),
                   tuple(rec["translated_tokens"]), tuple(rec["translated_span"]), rec["engine_id"])


def write_pairs(pairs: Iterable[ConjugatePair], path) -> None:
    Path(path).write_text("".join(p.to_json() + "\n" for p in pairs), encoding="utf-8")


def read_pairs(path) -> list[ConjugatePair]:
    with open(path, encoding="utf-8") as fh:
        return [ConjugatePair.from_json(line) for line in fh if line.strip()]


def _check_candidates(spans: Sequence[EntitySpan], n: int) -> list[EntitySpan]:
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start <= prev.end:
            raise InvalidInputError(f"candidate spans {prev} and {cur} overlap")
    for s in ordered:
        if not 0 <= s.start <= s.end < n:
            raise InvalidInputError(f"candidate span {s} out of bounds")
    return ordered


def build_conjugate_pairs(tokens: Sequence[str], candidate_spans: Sequence[EntitySpan],
                          engine: TranslationEngine, cache: TranslationCache | None = None,
                          sentence_id: int = 0) -> tuple[list[ConjugatePair], Counter]:
    """Project each candidate span independently; returns the pairs and drop counts by reason.

    An :class:`EngineError` propagates to the caller untouched.
    """
    if cache is not None and not isinstance(engine, CachedEngine):
        engine = CachedEngine(cache, engine)
    pairs, dropped = [], Counter()
    for ordinal, span in enumerate(_check_candidates(candidate_spans, len(tokens))):
        masked = mask_span(tokens, span, ordinal)
        translated = engine.translate(" ".join(masked)).split()
        found = _placeholder_matches(translated, ordinal)
        if len(found) != 1:
            dropped[LOST if not found else DUPLICATED] += 1
            continue
        idx, lead, trail = found[0]
        span_out = engine.translate(" ".join(tokens[span.start:span.end + 1])).split()
        if not span_out:
            dropped[EMPTY] += 1
            continue
        new_tokens = (translated[:idx] + ([lead] if lead else []) + span_out
                      + ([trail] if trail else []) + translated[idx + 1:])
        start = idx + (1 if lead else 0)
        pairs.append(ConjugatePair(sentence_id, tuple(tokens), (span.start, span.end),
                                   tuple(new_tokens), (start, start + len(span_out) - 1), engine.engine_id))
    return pairs, dropped


def build_corpus_pairs(sentences: Sequence[Sequence[str]], candidates: Sequence[Sequence[EntitySpan]],
                       engine: TranslationEngine, cache: TranslationCache | None = None,
                       workers: int = 1) -> tuple[list[ConjugatePair], Counter]:
    """Run :func:`build_conjugate_pairs` over a corpus; sentence ids are list positions.

    A sentence whose engine call fails contributes no pairs and counts all
    its candidates under ``engine-error``. Output is sorted by sentence id
    then span start regardless of ``workers``.
    """
    if len(sentences) != len(candidates):
        raise InvalidInputError("need one candidate list per sentence")

    def one(i):
        try:
            return build_conjugate_pairs(sentences[i], candidates[i], engine, cache, sentence_id=i)
        except EngineError:
            return [], Counter({ENGINE_FAILED: len(candidates[i])})

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(len(sentences))))
    else:
        results = [one(i) for i in range(len(sentences))]
    pairs, dropped = [], Counter()
    for p, d in results:
        pairs.extend(p)
        dropped.update(d)
    pairs.sort(key=lambda p: (p.sentence_id, p.original_span))
    return pairs, dropped


def select_candidate_spans(weak_tagger, tokens: Sequence[str]) -> list[EntitySpan]:
    """Predicted entity boundaries from a frozen tagger; entity types are discarded."""
    return [EntitySpan(s.start, s.end) for s in weak_tagger.predict_spans(tokens)]
