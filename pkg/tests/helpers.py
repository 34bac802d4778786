"""Shared builders for small hand-set models."""

import numpy as np

from xlner.labels import LabelSpace
from xlner.tagger import Tagger, TaggerConfig, Vocabulary

NEG = -1000.0  # softmax of this underflows to exactly 0


def lookup_tagger(label_space: LabelSpace, logits_by_word: dict) -> Tagger:
    """Tagger whose emission logits for word ``w`` equal ``logits_by_word[w]`` (unknown words get zeros).

    One-hot embeddings feed a tanh layer; the output weights undo the tanh
    gain so the logits come out as given.
    """
    words = list(logits_by_word)
    vocab = Vocabulary(words)
    v = len(vocab)
    cfg = TaggerConfig(vocab_size=v, d_emb=v, window=0, d_hid=v, dropout=0.0)
    t = Tagger.create(cfg, label_space, vocab)
    t.params["embedding"] = np.eye(v) * 5.0
    t.params["hidden_w"] = np.eye(v)
    out = np.zeros((label_space.size, v))
    gain = np.tanh(5.0)
    for w, logits in logits_by_word.items():
        out[:, vocab.encode([w])[0]] = np.asarray(logits, dtype=float) / gain
    t.params["output_w"] = out
    return t


def logits_for(label_space: LabelSpace, probs: dict) -> np.ndarray:
    """Logits whose softmax puts ``probs[tag name]`` on the named tags and 0 elsewhere."""
    z = np.full(label_space.size, NEG)
    for name, p in probs.items():
        z[label_space.index(label_space.parse(name))] = np.log(p)
    return z
