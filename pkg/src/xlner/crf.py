"""Linear-chain CRF: log-partition, negative log-likelihood with gradients, Viterbi.

Transition matrices are ``(T + 2, T + 2)``; index ``T`` is START and
``T + 1`` is STOP. ``-inf`` entries forbid a transition outright.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True)) + peak
    return np.squeeze(out, axis=axis)


def _split(transitions: np.ndarray, num_tags: int):
    trans = np.asarray(transitions, dtype=np.float64)
    if trans.shape != (num_tags + 2, num_tags + 2):
        raise InvalidInputError(f"transitions must be {(num_tags + 2,) * 2}, got {trans.shape}")
    return trans[:num_tags, :num_tags], trans[num_tags, :num_tags], trans[:num_tags, num_tags + 1]


def _forward(emissions: np.ndarray, inner, start, stop) -> np.ndarray:
    n = emissions.shape[0]
    alpha = np.empty_like(emissions)
    alpha[0] = start + emissions[0]
    for i in range(1, n):
        alpha[i] = _logsumexp(alpha[i - 1][:, None] + inner, axis=0) + emissions[i]
    return alpha


def _backward(emissions: np.ndarray, inner, stop) -> np.ndarray:
    n = emissions.shape[0]
    beta = np.empty_like(emissions)
    beta[-1] = stop
    for i in range(n - 2, -1, -1):
        beta[i] = _logsumexp(inner + (emissions[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def _as_emissions(emission_logits) -> np.ndarray:
    em = np.asarray(emission_logits, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] == 0:
        raise InvalidInputError("need at least one token of emission scores")
    return em


def crf_log_partition(emission_logits, transitions) -> float:
    em = _as_emissions(emission_logits)
    inner, start, stop = _split(transitions, em.shape[1])
    alpha = _forward(em, inner, start, stop)
    return float(_logsumexp(alpha[-1] + stop, axis=0))


def path_score(emission_logits, transitions, tags) -> float:
    em = _as_emissions(emission_logits)
    inner, start, stop = _split(transitions, em.shape[1])
    tags = np.asarray(tags, dtype=np.intp)
    score = start[tags[0]] + em[np.arange(len(tags)), tags].sum() + stop[tags[-1]]
    if len(tags) > 1:
        score += inner[tags[:-1], tags[1:]].sum()
    return float(score)


def crf_marginals(emission_logits, transitions):
    """Log-partition, per-token tag marginals ``(n, T)`` and expected transition counts ``(T+2, T+2)``."""
    em = _as_emissions(emission_logits)
    num_tags = em.shape[1]
    inner, start, stop = _split(transitions, num_tags)
    alpha = _forward(em, inner, start, stop)
    beta = _backward(em, inner, stop)
    log_z = float(_logsumexp(alpha[-1] + stop, axis=0))
    node = np.exp(alpha + beta - log_z)

    counts = np.zeros((num_tags + 2, num_tags + 2))
    counts[num_tags, :num_tags] = node[0]
    counts[:num_tags, num_tags + 1] = node[-1]
    for i in range(em.shape[0] - 1):
        pair = alpha[i][:, None] + inner + (em[i + 1] + beta[i + 1])[None, :]
        counts[:num_tags, :num_tags] += np.exp(pair - log_z)
    return log_z, node, counts


def crf_nll_and_gradient(emission_logits, transitions, gold_tags):
    """Negative log-likelihood of ``gold_tags`` and its gradients.

    Returns ``(loss, d_emissions, d_transitions)``. A gold path that uses a
    forbidden (``-inf``) transition is rejected.
    """
    em = _as_emissions(emission_logits)
    num_tags = em.shape[1]
    gold = np.asarray(gold_tags, dtype=np.intp)
    if gold.shape != (em.shape[0],):
        raise InvalidInputError(f"gold sequence length {gold.shape} does not match {em.shape[0]} tokens")
    if gold.min() < 0 or gold.max() >= num_tags:
        raise InvalidInputError("gold tag index out of range")
    gold_score = path_score(em, transitions, gold)
    if not np.isfinite(gold_score):
        raise InvalidInputError("gold sequence uses a forbidden transition")

    log_z, node, expected = crf_marginals(em, transitions)

    d_em = node.copy()
    d_em[np.arange(len(gold)), gold] -= 1.0
    observed = np.zeros_like(expected)
    observed[num_tags, gold[0]] += 1.0
    observed[gold[-1], num_tags + 1] += 1.0
    np.add.at(observed, (gold[:-1], gold[1:]), 1.0)
    return log_z - gold_score, d_em, expected - observed


def viterbi_decode(emission_logits, transitions) -> list[int]:
    """Highest-scoring tag index sequence; ties go to the lowest tag index."""
    em = _as_emissions(emission_logits)
    inner, start, stop = _split(transitions, em.shape[1])
    n = em.shape[0]
    score = start + em[0]
    back = np.zeros((n, em.shape[1]), dtype=np.intp)
    for i in range(1, n):
        cand = score[:, None] + inner
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(em.shape[1])] + em[i]
    best = [int(np.argmax(score + stop))]
    for i in range(n - 1, 0, -1):
        best.append(int(back[i, best[-1]]))
    return best[::-1]
