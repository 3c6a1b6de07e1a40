from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stablepriv.concepts import (
    ConceptClass,
    Hypothesis,
    RealizableDistribution,
    Sample,
    draw_examples,
    empirical_loss,
    make_full_class,
    make_thresholds,
    population_loss,
    restrict,
)
from stablepriv.rng import Stream

from conftest import concept_classes


def test_thresholds_shape():
    H = make_thresholds(8)
    assert len(H) == 8
    assert H.members[0] == Hypothesis.constant(8, 1)
    assert H.members[7].labels == (-1,) * 7 + (1,)
    assert list(make_thresholds(1)) == [Hypothesis((1,))]


def test_threshold_definition_one_based():
    # member i (1-based) is +1 at j (1-based) iff i <= j
    H = make_thresholds(6)
    for i in range(1, 7):
        for j in range(1, 7):
            assert H.members[i - 1](j - 1) == (1 if i <= j else -1)


def test_restrict_thresholds_example():
    H = make_thresholds(4)
    assert set(restrict(H, 2, 1)) == set(H.members[:3])


def test_restrict_contradiction_is_empty():
    H = make_full_class(3)
    assert len(restrict(restrict(H, 1, 1), 1, -1)) == 0


@given(concept_classes(), st.data())
def test_restrict_partitions(H, data):
    x = data.draw(st.integers(0, H.domain_size - 1))
    pos, neg = restrict(H, x, 1), restrict(H, x, -1)
    assert len(pos) + len(neg) == len(H)
    assert pos.union(neg) == H


def test_restrict_rejects_bad_point():
    with pytest.raises(ValueError):
        restrict(make_thresholds(3), 3, 1)


def test_class_validation():
    h = Hypothesis((1, -1))
    with pytest.raises(ValueError):
        ConceptClass([h, h])
    with pytest.raises(ValueError):
        ConceptClass([h, Hypothesis((1,))])
    with pytest.raises(ValueError):
        Hypothesis((1, 0))


def test_hypothesis_codes_round_trip():
    for c in range(16):
        assert Hypothesis.from_code(c, 4).code == c
    h = Hypothesis.from_fingerprint("+-+")
    assert h.fingerprint == "+-+" and (-h).fingerprint == "-+-"
    assert h.with_label(1, 1).fingerprint == "+++"


def test_empirical_loss_examples():
    S = Sample((0, 1, 2, 3), (1, 1, -1, -1))
    h = Hypothesis((1, 1, -1, -1))
    assert empirical_loss(h, S) == 0
    assert empirical_loss(-h, S) == 1
    assert empirical_loss(h.with_label(0, -1), S) == Fraction(1, 4)
    with pytest.raises(ValueError):
        empirical_loss(h, Sample())


def test_population_loss_examples():
    t = make_thresholds(8).members[3]
    D = RealizableDistribution.uniform(t)
    assert population_loss(t, D) == 0
    assert population_loss(-t, D) == 1
    assert population_loss(t.with_label(0, 1).with_label(7, -1), D) == 0.25


def test_marginal_validation_and_renormalization():
    t = Hypothesis((1, -1))
    with pytest.raises(ValueError):
        RealizableDistribution(t, (0.5, 0.6))
    with pytest.raises(ValueError):
        RealizableDistribution(t, (1.0,))
    D = RealizableDistribution(t, (0.5, 0.5 + 1e-13))
    assert abs(sum(D.marginal) - 1) < 1e-15


def test_draw_examples_contract():
    D = RealizableDistribution.uniform(make_thresholds(5).members[2])
    assert len(draw_examples(D, 0, 1)) == 0
    a, b = draw_examples(D, 20, 7), draw_examples(D, 20, 7)
    assert a == b
    assert not any(a.tournament)
    point = RealizableDistribution(D.target, (0, 0, 1, 0, 0))
    assert set(draw_examples(point, 50, 3).points) == {2}


def test_draws_advance_the_stream():
    D = RealizableDistribution.uniform(make_thresholds(5).members[2])
    s = Stream(4)
    first, second = draw_examples(D, 10, s), draw_examples(D, 10, s)
    assert first + second == draw_examples(D, 20, 4)


@given(st.integers(0, 2**20))
def test_drawn_samples_are_realizable(seed):
    H = make_thresholds(6)
    D = RealizableDistribution.uniform(H.members[seed % 6])
    assert empirical_loss(D.target, draw_examples(D, 30, seed)) == 0


def test_empirical_loss_converges():
    H = make_thresholds(8)
    D = RealizableDistribution(H.members[4], tuple(np.linspace(1, 2, 8) / np.linspace(1, 2, 8).sum()))
    h = H.members[1]
    S = draw_examples(D, 100_000, 11)
    assert abs(float(empirical_loss(h, S)) - population_loss(h, D)) <= 0.02


def test_marginal_mapping_respects_zero_mass():
    t = Hypothesis((1, 1, 1, 1, 1, 1))
    D = RealizableDistribution(t, (0.2, 0, 0.3, 0, 0.5, 0))
    pts = draw_examples(D, 20_000, 2).points
    counts = np.bincount(pts, minlength=6) / 20_000
    assert counts[1] == counts[3] == counts[5] == 0
    assert np.allclose(counts[[0, 2, 4]], [0.2, 0.3, 0.5], atol=0.015)


def test_sample_concatenation_and_replace():
    S = Sample((0, 1), (1, -1), (False, True))
    T = Sample((2,), (1,))
    assert (S + T).points == (0, 1, 2)
    assert (S + T).tournament_positions == [1]
    assert S.replace(0, 3, -1)[0] == (3, -1)
    with pytest.raises(ValueError):
        Sample((0,), (1, 1))
