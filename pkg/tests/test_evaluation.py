import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphshap.evaluation import (
    EvaluationError,
    aggregate_group,
    corrupt_and_score,
    corruption_study,
    coverage_prefix,
    normalize,
    ranking,
    spearman_rank,
)
from graphshap.explain import ExplainRequest, explain
from graphshap.game import Attribution, Method
from graphshap.validation import linear_instance
from oracles import rank_pearson


def attr(phi, method=Method.EXACT):
    return Attribution(phi, method)


# -- normalization and ranking ------------------------------------------------


def test_normalize_examples():
    assert normalize(attr([2.0, 1.0]), [1, 1]).phi.tolist() == [1.0, 0.5]
    assert normalize(attr([4.0, 1.0]), [4, 1]).phi.tolist() == [1.0, 1.0]
    neg = normalize(attr([-1.0, -2.0]), [1, 1])
    assert neg.phi.tolist() == [-1.0, -2.0]
    assert neg.extra["max_scaling_skipped"]


def test_normalize_rejects_bad_sizes():
    with pytest.raises(EvaluationError):
        normalize(attr([1.0, 2.0]), [1])
    with pytest.raises(EvaluationError):
        normalize(attr([1.0, 2.0]), [1, 0])


def test_ranking_ties_and_nan():
    assert ranking([0.1, 0.3, 0.3, np.nan, 0.2]) == [1, 2, 4, 0, 3]


@given(st.lists(st.floats(0.001, 100), min_size=1, max_size=12))
def test_normalize_keeps_ranking(phi):
    assert ranking(normalize(attr(phi), [1] * len(phi)).phi) == ranking(phi) or len(set(phi)) < len(phi)


def test_coverage_prefix_examples():
    phi = [0.5, 0.1, 0.3, 0.1]
    assert coverage_prefix(phi, 1.0) == [0, 2, 1, 3]
    assert coverage_prefix(phi, 0.5) == [0]
    assert coverage_prefix(phi, 0.6) == [0, 2]
    assert coverage_prefix(phi, 1e-9) == [0]
    with pytest.raises(EvaluationError):
        coverage_prefix([-1.0, 0.0], 0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=10), st.floats(0.01, 1), st.floats(0.01, 1))
def test_prefixes_are_nested(phi, c1, c2):
    if not any(v > 0 for v in phi):
        return
    lo, hi = sorted([c1, c2])
    a, b = coverage_prefix(phi, lo), coverage_prefix(phi, hi)
    assert b[: len(a)] == a


# -- corruption ---------------------------------------------------------------


def test_or_gate_full_coverage(or_oracle, or_cfg):
    a = explain(or_oracle, or_cfg, ExplainRequest("full"))
    rep = corrupt_and_score(or_oracle, or_cfg, a, 1.0, 1)
    assert rep.corrupted_features == (0, 1)
    assert rep.delta_prob == pytest.approx(0.25, abs=1e-15)
    assert rep.prob_before == 1.0 and rep.prob_after == 0.75


def test_tiny_coverage_corrupts_top_feature(or_oracle, or_cfg):
    rep = corrupt_and_score(or_oracle, or_cfg, [0.2, 0.7], 1e-6, 1)
    assert rep.corrupted_features == (1,)
    assert rep.delta_prob == 0.0  # x0 = 1 keeps the gate on


def test_width_mismatch(or_oracle, or_cfg):
    with pytest.raises(EvaluationError):
        corrupt_and_score(or_oracle, or_cfg, [1.0, 1.0, 1.0], 0.5, 1)


def test_corrupted_sets_nest_across_coverage():
    for seed in range(10):
        oracle, cfg = linear_instance(seed)
        t = int(np.argmax(oracle.predict(cfg.target)))
        a = explain(oracle, cfg, ExplainRequest("full"))
        sets = [set(corrupt_and_score(oracle, cfg, a, c, t).corrupted_features) for c in (0.1, 0.3, 0.6, 0.9, 1.0)]
        assert all(lo <= hi for lo, hi in zip(sets, sets[1:]))


def test_top_k_beats_random_k():
    rng = np.random.default_rng(0)
    oracle, cfg = linear_instance(3)
    t = int(np.argmax(oracle.predict(cfg.target)))
    a = explain(oracle, cfg, ExplainRequest("full"))
    top = corrupt_and_score(oracle, cfg, a, 0.5, t)
    k = len(top.corrupted_features)
    random_deltas = []
    for _ in range(100):
        phi = np.zeros(cfg.n_features)
        phi[rng.choice(cfg.n_features, k, replace=False)] = 1.0
        random_deltas.append(corrupt_and_score(oracle, cfg, phi, 1.0, t).delta_prob)
    assert top.delta_prob >= np.mean(random_deltas)


def test_corruption_study_with_labels(or_oracle, or_cfg):
    a = explain(or_oracle, or_cfg, ExplainRequest("full"))
    study = corruption_study(or_oracle, [or_cfg, or_cfg], [a, a], 1.0, [1, 1], labels=[1, 1])
    assert study.mean_delta_prob == pytest.approx(0.25)
    assert study.std_delta_prob == 0.0
    assert study.delta_acc == 0.0  # 0.75 still predicts class 1
    with pytest.raises(EvaluationError):
        corruption_study(or_oracle, [or_cfg], [a, a], 1.0, [1])


# -- aggregation --------------------------------------------------------------


def test_aggregate_examples():
    a = attr([1.0, 2.0])
    assert aggregate_group([a]).phi.tolist() == [1.0, 2.0]
    g = aggregate_group([a, a])
    assert g.phi.tolist() == [2.0, 4.0] and g.n_games == 2
    with pytest.raises(EvaluationError):
        aggregate_group([a, attr([1.0, 2.0], Method.CSVE)])
    with pytest.raises(EvaluationError):
        aggregate_group([a, attr([1.0])])
    with pytest.raises(EvaluationError):
        aggregate_group([])


@given(st.lists(st.lists(st.floats(-10, 10), min_size=3, max_size=3), min_size=2, max_size=6))
def test_aggregate_additive(rows):
    parts = [attr(r) for r in rows]
    whole = aggregate_group(parts).phi
    split = aggregate_group([aggregate_group(parts[:1]), aggregate_group(parts[1:])]).phi
    assert np.allclose(whole, split, rtol=0, atol=1e-12)


# -- rank agreement -----------------------------------------------------------


def test_spearman_examples():
    assert spearman_rank([1, 2, 3], [10, 20, 30]) == 1.0
    assert spearman_rank([1, 2, 3], [3, 2, 1]) == -1.0
    assert spearman_rank([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert rank_pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(EvaluationError):
        spearman_rank([1.0], [1.0])


def test_spearman_matches_rank_pearson_without_ties(rng):
    for _ in range(50):
        n = int(rng.integers(2, 12))
        a, b = rng.permutation(n).astype(float), rng.normal(size=n)
        assert spearman_rank(a, b) == pytest.approx(rank_pearson(a, b), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=2, max_size=10))
def test_spearman_bounded_and_symmetric(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    r = spearman_rank(a, b)
    assert -1 - 1e-12 <= r <= 1 + 1e-12
    assert r == spearman_rank(b, a)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12, unique=True), st.floats(0.1, 10))
def test_spearman_one_on_comonotone(a, c):
    b = [c * v + 1 for v in a]
    if len(set(b)) == len(b):
        assert spearman_rank(a, b) == 1.0
