"""Token-to-span probability conversion and the KL family used by the consistency losses.

A span distribution has ``N + 2`` entries: one per entity type (in label
space order), then ``O``, then ``illegal``. The illegal entry absorbs every
tag assignment over the span that is not a single well-formed entity and
not all-``O``.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .labels import LabelSpace, span_tag_sequence

EPS = 1e-12
DIVERGENCES = ("bi-kl", "kl-unlabel", "kl-trans")


def _span_paths(length: int, label_space: LabelSpace) -> np.ndarray:
    """Tag index per (legal outcome, position): one row per type, then the all-O row."""
    rows = [
        [label_space.index(t) for t in span_tag_sequence(c, length)]
        for c in range(label_space.num_types)
    ]
    rows.append([label_space.outside_index] * length)
    return np.asarray(rows, dtype=np.intp)


def _check_token_dists(token_dists, label_space: LabelSpace) -> np.ndarray:
    dists = np.asarray(token_dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] == 0:
        raise InvalidInputError("span must contain at least one token distribution")
    if dists.shape[1] != label_space.size:
        raise InvalidInputError(
            f"token distributions have {dists.shape[1]} entries, label space has {label_space.size}"
        )
    return dists


def token_to_span(token_dists, label_space: LabelSpace) -> np.ndarray:
    """Collapse per-token tag distributions over a span into a span-level distribution."""
    dists = _check_token_dists(token_dists, label_space)
    paths = _span_paths(dists.shape[0], label_space)
    picked = dists[np.arange(dists.shape[0]), paths]  # (N + 1, L)
    legal = picked.prod(axis=1)
    return np.append(legal, 1.0 - legal.sum())


def _span_jacobian(dists: np.ndarray, label_space: LabelSpace) -> tuple[np.ndarray, np.ndarray]:
    """Span distribution and d span / d token entry, shape ``(N + 2, L, |Y|)``."""
    length = dists.shape[0]
    paths = _span_paths(length, label_space)
    picked = dists[np.arange(length), paths]
    legal = picked.prod(axis=1)
    jac = np.zeros((paths.shape[0] + 1, length, label_space.size))
    for k in range(paths.shape[0]):
        for u in range(length):
            others = np.delete(picked[k], u).prod()
            jac[k, u, paths[k, u]] = others
    jac[-1] = -jac[:-1].sum(axis=0)
    return np.append(legal, 1.0 - legal.sum()), jac


def _clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, EPS, 1.0)


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p, q) -> float:
    """``sum p * ln(p / q)`` with both arguments clamped to ``[EPS, 1]`` inside the log."""
    p, q = _check_pair(p, q)
    return float(np.sum(p * (np.log(_clamp(p)) - np.log(_clamp(q)))))


def kl_gradients(p, q) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of :func:`kl_divergence` with respect to ``p`` and ``q``."""
    p, q = _check_pair(p, q)
    pc, qc = _clamp(p), _clamp(q)
    p_inside = (p > EPS) & (p < 1.0)
    q_inside = (q > EPS) & (q < 1.0)
    dp = np.log(pc) - np.log(qc) + np.where(p_inside, p / pc, 0.0)
    dq = np.where(q_inside, -p / qc, 0.0)
    return dp, dq


def bi_kl_divergence(p, q) -> float:
    return 0.5 * (kl_divergence(p, q) + kl_divergence(q, p))


def divergence_and_gradients(p, q, mode: str) -> tuple[float, np.ndarray, np.ndarray]:
    """Divergence between span distributions ``p`` (original side) and ``q`` (translated side).

    ``kl-unlabel`` takes ``p`` as the reference and only ``q`` receives a
    gradient; ``kl-trans`` takes ``q`` as the reference and only ``p`` does.
    """
    if mode == "bi-kl":
        dp1, dq1 = kl_gradients(p, q)
        dq2, dp2 = kl_gradients(q, p)
        return bi_kl_divergence(p, q), 0.5 * (dp1 + dp2), 0.5 * (dq1 + dq2)
    if mode == "kl-unlabel":
        _, dq = kl_gradients(p, q)
        return kl_divergence(p, q), np.zeros_like(dq), dq
    if mode == "kl-trans":
        _, dp = kl_gradients(q, p)
        return kl_divergence(q, p), dp, np.zeros_like(dp)
    raise InvalidInputError(f"unknown divergence mode {mode!r}; expected one of {DIVERGENCES}")


def span_loss_gradient(token_dists_a, token_dists_b, label_space: LabelSpace, mode: str = "bi-kl"):
    """Span-level divergence between two token-distribution blocks and its gradient.

    Side ``a`` is the original-sentence span, side ``b`` its translation;
    the blocks may differ in length. Returns ``(loss, grad_a, grad_b)`` with
    gradients taken entrywise with respect to the token probabilities.
    """
    a = _check_token_dists(token_dists_a, label_space)
    b = _check_token_dists(token_dists_b, label_space)
    span_a, jac_a = _span_jacobian(a, label_space)
    span_b, jac_b = _span_jacobian(b, label_space)
    loss, g_a, g_b = divergence_and_gradients(span_a, span_b, mode)
    grad_a = np.tensordot(g_a, jac_a, axes=1)
    grad_b = np.tensordot(g_b, jac_b, axes=1)
    return loss, grad_a, grad_b
