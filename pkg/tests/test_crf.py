import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from xlner.crf import crf_log_partition, crf_marginals, crf_nll_and_gradient, path_score, viterbi_decode
from xlner.errors import InvalidInputError
from xlner.labels import LabelSpace, decode_tags
from xlner.tagger import viterbi_tags

from oracles import (best_path_by_enumeration, log_partition_by_enumeration, max_relative_error,
                     numeric_gradient)


def random_instance(rng, n, t, masked=False):
    em = rng.normal(size=(n, t)) * 2
    trans = rng.normal(size=(t + 2, t + 2))
    if masked:
        trans[rng.random(trans.shape) < 0.2] = -np.inf
        trans[t, 0] = trans[0, t + 1] = 0.0  # keep at least one finite path
        trans[0, 0] = 0.0
    return em, trans


def test_all_zero_scores_two_by_two():
    assert crf_log_partition(np.zeros((2, 2)), np.zeros((4, 4))) == pytest.approx(math.log(4), abs=1e-12)


def test_identity_emissions():
    oracle = log_partition_by_enumeration(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros((4, 4)))
    assert oracle == pytest.approx(2 * math.log(1 + math.e), abs=1e-12)
    assert oracle == pytest.approx(2.6265, abs=5e-5)
    assert crf_log_partition([[1.0, 0.0], [0.0, 1.0]], np.zeros((4, 4))) == pytest.approx(oracle, abs=1e-12)


def test_zero_score_nll_is_path_count():
    for n, t in [(2, 2), (3, 4), (1, 5)]:
        loss, _, _ = crf_nll_and_gradient(np.zeros((n, t)), np.zeros((t + 2, t + 2)), [0] * n)
        assert loss == pytest.approx(n * math.log(t), abs=1e-12)


def test_saturated_gold_has_tiny_loss(rng):
    em, trans = random_instance(rng, 4, 5)
    gold = [1, 3, 0, 2]
    em[np.arange(4), gold] += 50
    loss, _, _ = crf_nll_and_gradient(em, trans, gold)
    assert 0 <= loss < 1e-6


def test_random_instances_against_enumeration():
    rng = np.random.default_rng(0)
    for k in range(200):
        n, t = int(rng.integers(1, 6)), int(rng.integers(1, 10))
        if t ** n > 20000:
            n = max(1, int(math.log(20000) // math.log(t)))
        em, trans = random_instance(rng, n, t, masked=k % 3 == 0)
        assert abs(crf_log_partition(em, trans) - log_partition_by_enumeration(em, trans)) <= 1e-10
        best, best_score = best_path_by_enumeration(em, trans)
        got = viterbi_decode(em, trans)
        assert path_score(em, trans, got) == pytest.approx(best_score, abs=1e-10)
        assert got == best


def test_marginals_are_distributions(rng):
    em, trans = random_instance(rng, 5, 4)
    _, node, counts = crf_marginals(em, trans)
    np.testing.assert_allclose(node.sum(axis=1), 1.0, atol=1e-12)
    # one START edge, one STOP edge, n-1 inner edges
    assert counts.sum() == pytest.approx(5 + 1, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_nll_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, t = 4, 3
    em, trans = random_instance(rng, n, t)
    gold = list(rng.integers(0, t, size=n))
    _, d_em, d_trans = crf_nll_and_gradient(em, trans, gold)
    f = lambda: crf_nll_and_gradient(em, trans, gold)[0]
    assert max_relative_error(d_em, numeric_gradient(f, em)) <= 1e-4
    num = numeric_gradient(f, trans)
    # START column / STOP row never influence the score
    assert not d_trans[:, t].any() and not d_trans[t + 1, :].any()
    assert max_relative_error(d_trans, num) <= 1e-4


def test_forbidden_gold_path_rejected():
    trans = np.zeros((4, 4))
    trans[0, 1] = -np.inf
    with pytest.raises(InvalidInputError):
        crf_nll_and_gradient(np.zeros((2, 2)), trans, [0, 1])


def test_shape_checks():
    with pytest.raises(InvalidInputError):
        crf_log_partition(np.zeros((2, 3)), np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        crf_log_partition(np.zeros((0, 2)), np.zeros((4, 4)))


def test_viterbi_tie_goes_to_lowest_index():
    assert viterbi_decode(np.zeros((3, 4)), np.zeros((6, 6))) == [0, 0, 0]


def test_constrained_viterbi_follows_strong_emissions():
    ls = LabelSpace(["PER", "LOC"])
    em = np.zeros((3, ls.size))
    em[0, ls.tag_index("B", 0)] = 20
    em[1, ls.tag_index("E", 0)] = 20
    em[2, ls.outside_index] = 20
    tags = viterbi_tags(em, np.zeros((ls.size + 2,) * 2), ls)
    assert [ls.name(t) for t in tags] == ["B-PER", "E-PER", "O"]


@given(st.integers(1, 7), st.integers(0, 2 ** 32 - 1))
def test_constrained_viterbi_always_legal(n, seed):
    ls = LabelSpace(["PER", "LOC"])
    rng = np.random.default_rng(seed)
    tags = viterbi_tags(rng.normal(size=(n, ls.size)) * 5, rng.normal(size=(ls.size + 2,) * 2), ls)
    decode_tags(tags, "strict")
