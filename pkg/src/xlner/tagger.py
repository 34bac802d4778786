"""Small window-based tagger with a CRF head, written directly in numpy.

Architecture per token: concatenate the embeddings of a ``2w + 1`` window,
a tanh hidden layer, inverted dropout on the hidden output, a linear
emission layer. Emission softmaxes are the token distributions used by the
consistency losses; the CRF scores emissions plus BIOES-masked transitions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import crf
from .errors import InvalidConfigError, InvalidInputError
from .labels import EntitySpan, LabelSpace, Tag, decode_tags

UNK, PAD = "<unk>", "<pad>"
UNK_ID, PAD_ID = 0, 1
CHECKPOINT_FORMAT = "xlner-tagger"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("embedding", "hidden_w", "hidden_b", "output_w", "output_b", "transitions")


@dataclass(frozen=True)
class TaggerConfig:
    vocab_size: int
    d_emb: int = 32
    window: int = 1
    d_hid: int = 64
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_emb", "d_hid"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.window < 0:
            raise InvalidConfigError("window half-width must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


class Vocabulary:
    """Word-to-id table; id 0 is the unknown word and id 1 the window padding."""

    def __init__(self, words: Iterable[str] = ()):
        self.words: list[str] = [UNK, PAD]
        self._ids = {UNK: UNK_ID, PAD: PAD_ID}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self._ids:
            self._ids[word] = len(self.words)
            self.words.append(word)
        return self._ids[word]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self._ids.get(t, UNK_ID) for t in tokens), dtype=np.intp, count=len(tokens))

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        vocab = cls()
        for tokens in sentences:
            for t in tokens:
                vocab.add(t)
        return vocab


def init_parameters(config: TaggerConfig, label_space: LabelSpace, rng_seed: int | None = None) -> dict[str, np.ndarray]:
    """Uniform(-r, r) weights with ``r = 1 / sqrt(fan_in)``; zero biases and transitions."""
    rng = np.random.default_rng(config.seed if rng_seed is None else rng_seed)
    fan_window = (2 * config.window + 1) * config.d_emb
    n_tags = label_space.size

    def uniform(shape, fan_in):
        r = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-r, r, size=shape)

    return {
        "embedding": uniform((config.vocab_size, config.d_emb), config.d_emb),
        "hidden_w": uniform((config.d_hid, fan_window), fan_window),
        "hidden_b": np.zeros(config.d_hid),
        "output_w": uniform((n_tags, config.d_hid), config.d_hid),
        "output_b": np.zeros(n_tags),
        "transitions": np.zeros((n_tags + 2, n_tags + 2)),
    }


@dataclass
class ForwardCache:
    windows: np.ndarray
    inputs: np.ndarray
    hidden: np.ndarray
    mask: np.ndarray | None
    dropped: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
    return probs * (d_probs - np.sum(d_probs * probs, axis=-1, keepdims=True))


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def forward(params: dict, config: TaggerConfig, token_ids, dropout: bool = False,
            rng: np.random.Generator | None = None, mask: np.ndarray | None = None):
    """Token distributions for one sentence plus the cache needed for backprop.

    With ``dropout`` on, a fresh inverted-dropout mask is drawn from ``rng``
    unless ``mask`` is given explicitly (used to hold masks fixed in tests).
    """
    ids = np.asarray(token_ids, dtype=np.intp)
    n = ids.shape[0]
    if n == 0:
        raise InvalidInputError("cannot tag an empty sentence")
    ids = np.where((ids >= 0) & (ids < config.vocab_size), ids, UNK_ID)
    w = config.window
    padded = np.concatenate([np.full(w, PAD_ID), ids, np.full(w, PAD_ID)])
    windows = np.stack([padded[k:k + n] for k in range(2 * w + 1)], axis=1)
    inputs = params["embedding"][windows].reshape(n, -1)
    hidden = np.tanh(inputs @ params["hidden_w"].T + params["hidden_b"])
    if dropout and mask is None and config.dropout > 0.0:
        if rng is None:
            raise InvalidInputError("dropout needs a random generator")
        mask = dropout_mask(hidden.shape, config.dropout, rng)
    if not dropout:
        mask = None
    dropped = hidden if mask is None else hidden * mask
    logits = dropped @ params["output_w"].T + params["output_b"]
    probs = softmax(logits)
    return probs, ForwardCache(windows, inputs, hidden, mask, dropped, logits, probs)


def zero_grads(params: dict) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def backward(params: dict, cache: ForwardCache, d_logits: np.ndarray, grads: dict) -> None:
    """Accumulate parameter gradients for upstream ``d_logits`` into ``grads``."""
    grads["output_w"] += d_logits.T @ cache.dropped
    grads["output_b"] += d_logits.sum(axis=0)
    d_hidden = d_logits @ params["output_w"]
    if cache.mask is not None:
        d_hidden = d_hidden * cache.mask
    d_pre = d_hidden * (1.0 - cache.hidden ** 2)
    grads["hidden_w"] += d_pre.T @ cache.inputs
    grads["hidden_b"] += d_pre.sum(axis=0)
    d_inputs = (d_pre @ params["hidden_w"]).reshape(cache.windows.shape + (-1,))
    np.add.at(grads["embedding"], cache.windows, d_inputs)


@dataclass
class Tagger:
    config: TaggerConfig
    label_space: LabelSpace
    vocab: Vocabulary
    params: dict = field(repr=False)

    @classmethod
    def create(cls, config: TaggerConfig, label_space: LabelSpace, vocab: Vocabulary) -> "Tagger":
        if config.vocab_size != len(vocab):
            raise InvalidConfigError(f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}")
        return cls(config, label_space, vocab, init_parameters(config, label_space))

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return self.vocab.encode(tokens)

    def forward(self, tokens: Sequence[str], dropout: bool = False, rng=None, mask=None):
        return forward(self.params, self.config, self.encode(tokens), dropout, rng, mask)

    def constrained_transitions(self) -> np.ndarray:
        return self.params["transitions"] + self.label_space.transition_mask()

    def crf_loss(self, cache: ForwardCache, gold: Sequence[Tag]):
        """CRF NLL over legal paths; returns ``(loss, d_logits, d_transitions)``."""
        gold_idx = [self.label_space.index(t) for t in gold]
        loss, d_logits, d_trans = crf.crf_nll_and_gradient(cache.logits, self.constrained_transitions(), gold_idx)
        return loss, d_logits, d_trans

    def predict_tags(self, tokens: Sequence[str]) -> list[Tag]:
        _, cache = self.forward(tokens)
        return viterbi_tags(cache.logits, self.params["transitions"], self.label_space)

    def predict_spans(self, tokens: Sequence[str]) -> list[EntitySpan]:
        return decode_tags(self.predict_tags(tokens), "strict")

    def copy(self) -> "Tagger":
        return Tagger(self.config, self.label_space, self.vocab, {k: v.copy() for k, v in self.params.items()})

    # checkpoints -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "entity_types": list(self.label_space.entity_types),
            "vocab": self.vocab.words,
            "params": {
                name: {"shape": list(self.params[name].shape), "data": self.params[name].ravel().tolist()}
                for name in PARAM_NAMES
            },
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "Tagger":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError("not a tagger checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint version {data.get('version')}")
        vocab = Vocabulary()
        if data["vocab"][:2] != [UNK, PAD]:
            raise InvalidInputError("checkpoint vocabulary lacks reserved entries")
        for w in data["vocab"][2:]:
            vocab.add(w)
        params = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in data["params"].items()
        }
        return cls(TaggerConfig(**data["config"]), LabelSpace(data["entity_types"]), vocab, params)

    @classmethod
    def load(cls, path) -> "Tagger":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def viterbi_tags(emission_logits, transitions, label_space: LabelSpace) -> list[Tag]:
    """Viterbi over BIOES-legal paths only; the result always decodes cleanly."""
    best = crf.viterbi_decode(emission_logits, np.asarray(transitions) + label_space.transition_mask())
    return [label_space.tags[i] for i in best]
