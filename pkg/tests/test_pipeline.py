import math
from fractions import Fraction

import numpy as np
import pytest

from stablepriv.concepts import ConceptClass, Hypothesis, RealizableDistribution, make_thresholds
from stablepriv.mechanisms import PrivacyParams, hist_accuracy_check
from stablepriv.pipeline import (
    InvariantViolation,
    batch_keys,
    m_params,
    private_learn,
    run_batches,
)
from stablepriv.rng import Stream
from stablepriv.stability import DistributionSource, stability_params


def _scan_k(eta, beta, priv):
    floor_k = 16 * math.log(3 / beta) / eta
    k = 1
    while k < floor_k or not hist_accuracy_check(k, eta / 8, beta / 3, priv.halve_epsilon()):
        k *= 2
    return k


def _scan_n_prime(alpha, beta, eta, eps):
    n = 0
    while (2 / eta) * math.exp(-eps * (alpha / 2) * n / 12) > beta / 6:
        n += 1
    return max(n, math.ceil(96 / alpha * math.log(24 / (eta * beta))))


@pytest.mark.parametrize("d", [0, 1])
@pytest.mark.parametrize("alpha,beta,eps,delta", [(0.5, 0.2, 1, 1e-6), (0.25, 0.1, 0.5, 1e-5), (1.0, 0.05, 2, 1e-9)])
def test_m_params_match_brute_force(d, alpha, beta, eps, delta):
    p = m_params(d, alpha, beta, eps, delta)
    eta = float(p.eta)
    assert p.k == _scan_k(eta, beta, PrivacyParams(eps, delta))
    assert p.n_prime == _scan_n_prime(alpha, beta, eta, eps)
    assert p.g_params == stability_params(d, Fraction(repr(alpha)) / 2)


def test_m_params_reference_values():
    p = m_params(1, 0.5, 0.2, 1, 1e-6)
    assert (p.g_params.n, p.g_params.N, p.m) == (32, 262144, 262176)
    assert p.eta == Fraction(1, 1024)
    assert (p.k, p.n_prime) == (2**20, 2251)
    assert p.total_n == 2**20 * 262176 + 2251
    p0 = m_params(0, 0.5, 0.2, 1, 1e-6)
    assert (p0.eta, p0.k, p0.n_prime) == (Fraction(1, 32), 32768, 1585)


def test_m_params_large_d_stays_exact():
    p = m_params(6, 0.5, 0.2, 1, 1e-6)
    assert isinstance(p.total_n, int) and p.total_n > 2**250
    assert p.k & (p.k - 1) == 0


@pytest.mark.parametrize("field,lo,hi", [("beta", 0.05, 0.3), ("epsilon", 0.5, 2.0), ("delta", 1e-9, 1e-3)])
def test_m_params_monotone(field, lo, hi):
    base = dict(d=1, alpha=0.5, beta=0.2, epsilon=1.0, delta=1e-6)
    a = m_params(**{**base, field: lo})
    b = m_params(**{**base, field: hi})
    assert a.k >= b.k
    assert a.n_prime >= b.n_prime


def test_m_params_budget_composes():
    p = m_params(1, 0.5, 0.2, 1, 1e-6)
    assert sum(b.epsilon for b in p.budget) == 1
    assert sum(b.delta for b in p.budget) == 1e-6
    assert [b.step for b in p.budget] == ["histogram", "exponential_mechanism"]


@pytest.mark.parametrize(
    "args", [(1, 0, 0.2, 1, 1e-6), (1, 1.5, 0.2, 1, 1e-6), (1, 0.5, 1, 1, 1e-6), (1, 0.5, 0.2, 0, 1e-6), (1, 0.5, 0.2, 1, 0)]
)
def test_m_params_reject_bad_input(args):
    with pytest.raises(ValueError):
        m_params(*args)


# ---------------------------------------------------------------- batches


def test_batch_keys_are_distinct_streams():
    data, coins, hist, em_data, em_coins = batch_keys(Stream(1), 100)
    assert len(set(data.tolist()) | set(coins.tolist())) == 200
    assert len({hist.key, em_data.key, em_coins.key}) == 3


def test_threads_do_not_change_results():
    H = make_thresholds(2)
    D = RealizableDistribution(H.members[1], (0.03, 0.97))
    p = stability_params(1, 0.25)
    data, coins, *_ = batch_keys(Stream(2), 300)
    over = {(7, 3): (0, -1), (250, 0): (1, 1)}
    a = run_batches(H, p, DistributionSource(D, data, over), coins, threads=1)
    b = run_batches(H, p, DistributionSource(D, data, over), coins, threads=3)
    assert (a.codes == b.codes).all() and (a.draws_used == b.draws_used).all()
    assert (a.k_chosen == b.k_chosen).all() and (a.failed == b.failed).all()


def test_changing_one_example_changes_at_most_one_batch():
    H = make_thresholds(2)
    D = RealizableDistribution(H.members[1], (0.03, 0.97))
    p = stability_params(1, 0.25)
    data, coins, *_ = batch_keys(Stream(3), 256)
    base = run_batches(H, p, DistributionSource(D, data), coins)
    rs = np.random.default_rng(0)
    for _ in range(10):
        lane, pos = int(rs.integers(256)), int(rs.integers(200))
        alt = run_batches(H, p, DistributionSource(D, data, {(lane, pos): (0, -1)}), coins)
        changed = np.flatnonzero((alt.codes != base.codes) | (alt.draws_used != base.draws_used))
        assert set(changed.tolist()) <= {lane}


# ---------------------------------------------------------------- learner


def _singleton():
    h = Hypothesis.from_fingerprint("+-+")
    return ConceptClass([h]), RealizableDistribution.uniform(h), h


def test_singleton_class_is_learned_exactly():
    H, D, h = _singleton()
    p = m_params(0, 0.5, 0.2, 1, 1e-6)
    r = private_learn(H, D, p, Stream(4))
    assert r.hypothesis == h and not r.failed
    assert r.batch_outputs_digest == {"+-+": p.k}
    assert r.released_list_size == r.pruned_list_size == 1
    assert r.histogram.estimates["+-+"] == pytest.approx(1, abs=1e-3)


def test_learner_rejects_mismatched_dimension():
    H, D, _ = _singleton()
    with pytest.raises(ValueError, match="d=1"):
        private_learn(H, D, m_params(1, 0.5, 0.2, 1, 1e-6), 0)


def test_learner_refuses_large_d_without_force():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    with pytest.raises(ValueError, match="force"):
        private_learn(H, D, m_params(2, 0.5, 0.2, 1, 1e-6), 0)


def test_invariant_violation_is_an_assertion():
    assert issubclass(InvariantViolation, AssertionError)


@pytest.mark.slow
def test_learner_on_thresholds_is_deterministic_and_accurate():
    H = make_thresholds(2)
    D = RealizableDistribution(H.members[1], (0.03, 0.97))
    p = m_params(1, 0.5, 0.2, 1, 1e-6)
    a = private_learn(H, D, p, Stream(5))
    b = private_learn(H, D, p, Stream(5), threads=2)
    assert a == b
    assert sum(a.batch_outputs_digest.values()) == p.k
    assert a.pruned_list_size <= math.floor(2 / float(p.eta)) + 1
    assert not a.failed
    assert a.hypothesis.fingerprint in a.batch_outputs_digest
