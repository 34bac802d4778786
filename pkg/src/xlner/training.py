"""Supervised CRF loss plus dropout- and translation-based consistency losses.

Per optimizer step the objective is::

    mean over labeled batch (CE + alpha * drop) + beta * mean over pair batch (trans)

with the run mode deciding which terms are active and which data they see.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError
from .evaluation import EvalResult, TaggedSentence, micro_f1
from .labels import LabelSpace
from .optim import AdamW
from .spanprob import DIVERGENCES, kl_gradients, span_loss_gradient
from .tagger import Tagger, TaggerConfig, Vocabulary, backward, forward, softmax_backward, zero_grads
from .translation import ConjugatePair

log = logging.getLogger(__name__)

MODES = ("conner", "vanilla", "trans-unlabel", "dropout-label", "trans-label", "dropout-unlabel")
# which consistency terms each mode switches on, and where the dropout term is applied
_USES_TRANS = {"conner", "trans-unlabel", "trans-label"}
_DROP_ON_LABELED = {"conner", "dropout-label"}
_DROP_ON_UNLABELED = {"dropout-unlabel"}


@dataclass
class TrainingConfig:
    alpha: float = 0.5
    beta: float = 0.5
    divergence: str = "bi-kl"
    mode: str = "conner"
    labeled_batch_size: int = 16
    unlabeled_batch_size: int = 16
    epochs: int = 10
    lr: float = 0.05
    weight_decay: float = 0.01
    seed: int = 0
    patience: int = 3
    dropout: float = 0.1
    d_emb: int = 32
    d_hid: int = 64
    window: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfigError("alpha and beta must be non-negative")
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.divergence not in DIVERGENCES:
            raise InvalidConfigError(f"unknown divergence {self.divergence!r}; expected one of {DIVERGENCES}")
        if self.labeled_batch_size < 1 or self.unlabeled_batch_size < 1:
            raise InvalidConfigError("batch sizes must be >= 1")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        if self.patience < 0:
            raise InvalidConfigError("patience must be >= 0 (0 disables early stopping)")
        if not self.lr > 0:
            raise InvalidConfigError("learning rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def read(cls, path) -> "TrainingConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# individual loss terms -------------------------------------------------------

def token_bi_kl(p1: np.ndarray, p2: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over tokens of the symmetric KL between two ``(n, T)`` distribution blocks."""
    n = p1.shape[0]
    pc1, pc2 = np.clip(p1, 1e-12, 1.0), np.clip(p2, 1e-12, 1.0)
    log_ratio = np.log(pc1) - np.log(pc2)
    loss = 0.5 * float(np.sum((p1 - p2) * log_ratio)) / n
    d1a, d2a = kl_gradients(p1, p2)
    d2b, d1b = kl_gradients(p2, p1)
    return loss, 0.5 * (d1a + d1b) / n, 0.5 * (d2a + d2b) / n


def _dropout_pair(tagger: Tagger, ids, rng, masks=None):
    m1, m2 = (None, None) if masks is None else masks
    p1, c1 = forward(tagger.params, tagger.config, ids, True, rng, m1)
    p2, c2 = forward(tagger.params, tagger.config, ids, True, rng, m2)
    loss, d1, d2 = token_bi_kl(p1, p2)
    return loss, (c1, softmax_backward(p1, d1)), (c2, softmax_backward(p2, d2))


def dropout_consistency_loss(tagger: Tagger, tokens: Sequence[str], rng: np.random.Generator | None = None,
                             masks=None) -> tuple[float, dict]:
    """Symmetric KL between two dropout passes over the same sentence; labels are not used.

    ``masks`` pins both dropout masks (for gradient checks); otherwise they
    are drawn from ``rng``.
    """
    ids = tagger.encode(tokens)
    loss, (c1, g1), (c2, g2) = _dropout_pair(tagger, ids, rng, masks)
    grads = zero_grads(tagger.params)
    backward(tagger.params, c1, g1, grads)
    backward(tagger.params, c2, g2, grads)
    return loss, grads


def _trans_terms(tagger: Tagger, pair: ConjugatePair, mode: str):
    p_o, c_o = forward(tagger.params, tagger.config, tagger.encode(pair.original_tokens))
    p_t, c_t = forward(tagger.params, tagger.config, tagger.encode(pair.translated_tokens))
    (a0, a1), (b0, b1) = pair.original_span, pair.translated_span
    loss, g_a, g_b = span_loss_gradient(p_o[a0:a1 + 1], p_t[b0:b1 + 1], tagger.label_space, mode)
    out = []
    if mode != "kl-unlabel":
        d = np.zeros_like(p_o)
        d[a0:a1 + 1] = g_a
        out.append((c_o, softmax_backward(p_o, d)))
    if mode != "kl-trans":
        d = np.zeros_like(p_t)
        d[b0:b1 + 1] = g_b
        out.append((c_t, softmax_backward(p_t, d)))
    return loss, out


def translation_consistency_loss(tagger: Tagger, pair: ConjugatePair, mode: str = "bi-kl") -> tuple[float, dict]:
    """Span-level divergence between a conjugate pair, both sides forwarded without dropout.

    In ``kl-unlabel`` the original (unlabeled-side) span is the reference and
    receives no gradient; in ``kl-trans`` the translated span is.
    """
    loss, parts = _trans_terms(tagger, pair, mode)
    grads = zero_grads(tagger.params)
    for cache, d in parts:
        backward(tagger.params, cache, d, grads)
    return loss, grads


def combine_losses(ce: float, drop: float, trans: float, alpha: float, beta: float) -> float:
    return ce + alpha * drop + beta * trans


@dataclass
class StepResult:
    total: float
    ce: float
    drop: float
    trans: float
    grads: dict = field(repr=False)


def total_loss_step(tagger: Tagger, labeled: Sequence[TaggedSentence], pairs: Sequence[ConjugatePair],
                    config: TrainingConfig, rng: np.random.Generator,
                    unlabeled: Sequence[Sequence[str]] = ()) -> StepResult:
    """Loss and gradients for one step under ``config.mode``.

    ``pairs`` is ignored unless the mode uses translation consistency;
    ``unlabeled`` (token lists) is only read in ``dropout-unlabel`` mode.
    """
    mode = config.mode
    use_trans = mode in _USES_TRANS and config.beta > 0 and len(pairs) > 0
    drop_labeled = mode in _DROP_ON_LABELED and config.alpha > 0
    drop_unlabeled = mode in _DROP_ON_UNLABELED and config.alpha > 0 and len(unlabeled) > 0
    if not labeled and not use_trans and not drop_unlabeled:
        raise InvalidInputError("nothing to train on: both data streams are empty")

    params = tagger.params
    grads = zero_grads(params)
    ce_sum = drop_sum = trans_sum = unl_drop_sum = 0.0

    if labeled:
        scale = 1.0 / len(labeled)
        for sent in labeled:
            ids = tagger.encode(sent.tokens)
            if drop_labeled:
                drop, (c1, g1), (c2, g2) = _dropout_pair(tagger, ids, rng)
                drop_sum += drop
            else:
                _, c1 = forward(params, tagger.config, ids, True, rng)
                g1 = None
            ce, d_logits, d_trans = tagger.crf_loss(c1, sent.tags)
            ce_sum += ce
            grads["transitions"] += scale * d_trans
            if g1 is not None:
                d_logits = d_logits + config.alpha * g1
                backward(params, c2, scale * config.alpha * g2, grads)
            backward(params, c1, scale * d_logits, grads)

    if drop_unlabeled:
        scale = config.alpha / len(unlabeled)
        for tokens in unlabeled:
            drop, (c1, g1), (c2, g2) = _dropout_pair(tagger, tagger.encode(tokens), rng)
            unl_drop_sum += drop
            backward(params, c1, scale * g1, grads)
            backward(params, c2, scale * g2, grads)

    if use_trans:
        scale = config.beta / len(pairs)
        for pair in pairs:
            loss, parts = _trans_terms(tagger, pair, config.divergence)
            trans_sum += loss
            for cache, d in parts:
                backward(params, cache, scale * d, grads)

    n_lab = len(labeled) or 1
    ce = ce_sum / n_lab
    if drop_unlabeled:
        drop = unl_drop_sum / len(unlabeled)
    else:
        drop = drop_sum / n_lab
    trans = trans_sum / len(pairs) if use_trans else 0.0
    total = combine_losses(ce, drop, trans, config.alpha if (drop_labeled or drop_unlabeled) else 0.0,
                           config.beta if use_trans else 0.0)
    if not np.isfinite(total):
        raise TrainingDivergedError(f"non-finite loss {total}")
    return StepResult(total, ce, drop, trans, grads)


# training loop ---------------------------------------------------------------

class EarlyStopping:
    """Keeps the best epoch by dev score; signals a stop after ``patience`` epochs without gain."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = None
        self.since_best = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best_score:
            self.best_score, self.best_epoch, self.since_best = score, epoch, 0
            return True
        self.since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience > 0 and self.since_best >= self.patience


class _Cycler:
    """Endless batches over a list, reshuffled on every pass with its own generator."""

    def __init__(self, items: Sequence, batch_size: int, rng: np.random.Generator):
        self.items, self.batch_size, self.rng = list(items), batch_size, rng
        self._order, self._pos = [], 0

    def next(self) -> list:
        if not self.items:
            return []
        batch = []
        while len(batch) < self.batch_size:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(len(self.items))
                self._pos = 0
            take = self._order[self._pos:self._pos + self.batch_size - len(batch)]
            batch.extend(self.items[i] for i in take)
            self._pos += len(take)
            if len(self.items) < self.batch_size and self._pos >= len(self._order):
                break
        return batch


@dataclass
class TrainingReport:
    config: dict
    epochs: list[dict]
    dev_f1: list[float]
    selected_epoch: int
    best_dev_f1: float
    test: dict | None
    pair_count: int
    drop_counts: dict
    vocab_size: int

    @property
    def epochs_completed(self) -> int:
        return len(self.epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epochs_completed"] = self.epochs_completed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(tagger: Tagger, sentences: Sequence[TaggedSentence]) -> EvalResult:
    gold = [s.spans for s in sentences]
    pred = [tagger.predict_spans(s.tokens) for s in sentences]
    return micro_f1(gold, pred, tagger.label_space.entity_types)


def build_vocabulary(labeled: Sequence[TaggedSentence], pairs: Sequence[ConjugatePair] = (),
                     unlabeled: Sequence[Sequence[str]] = ()) -> Vocabulary:
    vocab = Vocabulary.from_sentences(s.tokens for s in labeled)
    for tokens in unlabeled:
        for t in tokens:
            vocab.add(t)
    for p in pairs:
        for t in p.original_tokens + p.translated_tokens:
            vocab.add(t)
    return vocab


def train_run(labeled: Sequence[TaggedSentence], pairs: Sequence[ConjugatePair],
              dev: Sequence[TaggedSentence], test: Sequence[TaggedSentence] | None,
              config: TrainingConfig, label_space: LabelSpace,
              unlabeled: Sequence[Sequence[str]] | None = None,
              drop_counts: dict | None = None, log_path=None) -> tuple[TrainingReport, Tagger]:
    """Train from scratch; returns the report and the best-on-dev tagger.

    The vocabulary covers every token of ``labeled``, ``unlabeled`` and both
    sides of ``pairs`` regardless of mode, so runs that differ only in mode
    or loss weights start from identical parameters. In ``dropout-unlabel``
    mode the dropout term is applied to ``unlabeled`` (or, if that is None,
    to the original sides of ``pairs``).
    """
    config.validate()
    if not labeled:
        raise InvalidInputError("labeled corpus is empty")
    if not dev:
        raise InvalidInputError("dev corpus is empty")
    if unlabeled is None:
        seen, unlabeled = set(), []
        for p in pairs:
            if p.sentence_id not in seen:
                seen.add(p.sentence_id)
                unlabeled.append(list(p.original_tokens))
    unlabeled = [list(u) for u in unlabeled]

    vocab = build_vocabulary(labeled, pairs, unlabeled)
    tagger_config = TaggerConfig(len(vocab), config.d_emb, config.window, config.d_hid, config.dropout, config.seed)
    tagger = Tagger.create(tagger_config, label_space, vocab)
    optimizer = AdamW(lr=config.lr, weight_decay=config.weight_decay)

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    shuffle_rng, dropout_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    pair_stream = _Cycler(pairs, config.unlabeled_batch_size, np.random.default_rng(seeds[2]))
    unlabeled_stream = _Cycler(unlabeled, config.unlabeled_batch_size, np.random.default_rng(seeds[3]))
    use_pairs = config.mode in _USES_TRANS and config.beta > 0
    use_unlabeled = config.mode in _DROP_ON_UNLABELED and config.alpha > 0

    stopper = EarlyStopping(config.patience)
    best = tagger.copy()
    history, dev_curve = [], []
    log_fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(labeled))
            sums = Counter()
            n_steps = 0
            for step, lo in enumerate(range(0, len(labeled), config.labeled_batch_size), 1):
                batch = [labeled[i] for i in order[lo:lo + config.labeled_batch_size]]
                pair_batch = pair_stream.next() if use_pairs else []
                unl_batch = unlabeled_stream.next() if use_unlabeled else []
                try:
                    res = total_loss_step(tagger, batch, pair_batch, config, dropout_rng, unl_batch)
                    optimizer.step(tagger.params, res.grads)
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(f"epoch {epoch} step {step}: {exc}", epoch, step) from exc
                sums.update(total=res.total, ce=res.ce, drop=res.drop, trans=res.trans)
                n_steps += 1
            dev_f1 = evaluate(tagger, dev).f1
            row = {"epoch": epoch, **{k: sums[k] / n_steps for k in ("total", "ce", "drop", "trans")},
                   "dev_f1": dev_f1}
            history.append(row)
            dev_curve.append(dev_f1)
            line = (f"epoch={epoch} total={row['total']:.6f} ce={row['ce']:.6f} drop={row['drop']:.6f} "
                    f"trans={row['trans']:.6f} dev_f1={dev_f1:.6f}")
            log.info(line)
            if log_fh is not None:
                log_fh.write(line + "\n")
            if stopper.update(epoch, dev_f1):
                best = tagger.copy()
            if stopper.should_stop:
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    test_result = evaluate(best, test).to_dict() if test else None
    report = TrainingReport(
        config=config.to_dict(),
        epochs=history,
        dev_f1=dev_curve,
        selected_epoch=stopper.best_epoch,
        best_dev_f1=stopper.best_score,
        test=test_result,
        pair_count=len(pairs),
        drop_counts=dict(sorted((drop_counts or {}).items())),
        vocab_size=len(vocab),
    )
    return report, best

