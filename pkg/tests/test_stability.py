from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stablepriv.concepts import ConceptClass, Hypothesis, RealizableDistribution, Sample, make_thresholds
from stablepriv.littlestone import ldim
from stablepriv.rng import Stream, hash64
from stablepriv.soa import soa_run
from stablepriv.stability import (
    ArraySource,
    DistributionSource,
    StabilityParams,
    algorithm_g,
    run_g_batch,
    sample_dk_mc,
    sample_level_batch,
    stability_params,
)

# ---------------------------------------------------------------- reference


class _Fail(Exception):
    pass


class NaiveLane:
    """Straight-line recursive sampler and G for one lane, built on the
    online SOA. Shares only the stream layout with the engine."""

    def __init__(self, H, params, source, coin_key):
        self.H, self.n, self.cap = H, params.n, params.N
        self.d = params.d
        self.source, self.coin_key = source, np.uint64(coin_key)
        self.cursor = 0
        self.ctr = 0

    def coin(self) -> int:
        u = int(hash64(self.coin_key, np.uint64(self.ctr)))
        self.ctr += 1
        return u

    def fresh(self, check_cap=True):
        if check_cap and self.cursor + self.n > self.cap:
            raise _Fail
        p, y = self.source.draw(np.array([0]), np.array([self.cursor]), self.n)
        self.cursor += self.n
        return Sample(tuple(p[0].tolist()), tuple(y[0].tolist()))

    def level(self, k) -> Sample:
        if k == 0:
            return Sample((), ())
        while True:
            S0 = self.level(k - 1)
            S1 = self.level(k - 1)
            A = S0 + self.fresh()
            B = S1 + self.fresh()
            f0 = soa_run(self.H, A).final_hypothesis
            f1 = soa_run(self.H, B).final_hypothesis
            if f0 == f1:
                continue
            x = min(i for i in range(self.H.domain_size) if f0(i) != f1(i))
            y = 1 if self.coin() >> 63 else -1
            chosen = A if f0(x) != y else B
            return chosen + Sample((x,), (y,), (True,))

    def g(self):
        u = self.coin()
        k = min(int((u >> 11) * 2.0**-53 * (self.d + 1)), self.d)
        try:
            S, failed = self.level(k), False
        except _Fail:
            S, failed = Sample((), ()), True
        T = self.fresh(check_cap=False)
        return soa_run(self.H, S + T).final_hypothesis, k, self.cursor, failed


def naive_g(H, params, D, data_key, coin_key):
    return NaiveLane(H, params, DistributionSource(D, [data_key]), coin_key).g()


# ---------------------------------------------------------------- parameters


def test_parameters_at_d0_and_d1():
    p0 = stability_params(0, Fraction(1, 2))
    assert (p0.n, p0.N, p0.m) == (8, 1024, 1032)
    assert p0.freq_threshold == Fraction(1, 16)
    assert p0.eta_guarantee == Fraction(1, 32)
    p1 = stability_params(1, 0.5)
    assert (p1.n, p1.N, p1.m) == (16, 131072, 131088)
    assert p1.freq_threshold == Fraction(1, 256)
    assert p1.eta_guarantee == Fraction(1, 1024)
    assert stability_params(1, 0.25).n == 32


def test_parameters_are_exact_integers():
    p = stability_params(3, Fraction(1, 3))
    assert p.n == 96
    assert p.N == 2**33 * 4**4 * 96
    assert isinstance(p.N, int)


@pytest.mark.parametrize("d,alpha", [(-1, 0.5), (1, 0), (1, 0.75), (0, -0.1)])
def test_parameters_reject_bad_input(d, alpha):
    with pytest.raises(ValueError):
        stability_params(d, alpha)


def test_custom_parameters():
    p = StabilityParams.custom(1, 4, 100)
    assert (p.n, p.N, p.m, p.alpha) == (4, 100, 104, None)
    with pytest.raises(ValueError):
        StabilityParams.custom(1, 0, 100)


# ---------------------------------------------------------------- sampler


def _keys(seed, count):
    s = Stream(seed)
    return s.spawn().lane_keys(count), s.spawn().lane_keys(count)


def test_level_zero_is_empty_and_free():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    r = sample_dk_mc(0, stability_params(2, 0.5), H, D, 1)
    assert r.outcome == Sample((), ())
    assert r.draws_used == 0


@pytest.mark.parametrize("k", [1, 2])
def test_level_sample_structure(k):
    H = make_thresholds(4)
    D = RealizableDistribution(H.members[2], (0.1, 0.2, 0.3, 0.4))
    p = StabilityParams.custom(2, 3, 2**14)
    data, coins = _keys(4, 300)
    res = sample_level_batch(k, p, H, DistributionSource(D, data), coins)
    assert res.ok.mean() > 0.9
    for i in np.flatnonzero(res.ok)[:50]:
        S = res.sample(int(i))
        assert len(S) == k * (p.n + 1)
        assert len(S.tournament_positions) == k
        # every tournament example is a mistake of the SOA on the prefix
        r = soa_run(H, S)
        assert set(S.tournament_positions) <= set(r.mistake_positions)
        assert r.mistake_count >= k


def test_level_above_d_rejected():
    H = make_thresholds(2)
    with pytest.raises(ValueError):
        sample_dk_mc(2, stability_params(1, 0.5), H, RealizableDistribution.uniform(H.members[0]), 0)


def test_cap_zero_fails_without_draws():
    H = make_thresholds(2)
    D = RealizableDistribution.uniform(H.members[1])
    data, coins = _keys(2, 20)
    res = sample_level_batch(1, StabilityParams.custom(1, 4, 0), H, DistributionSource(D, data), coins)
    assert not res.ok.any()
    assert (res.draws_used == 0).all()


def test_draws_never_exceed_cap():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    p = StabilityParams.custom(2, 4, 40)
    data, coins = _keys(3, 500)
    res = sample_level_batch(2, p, H, DistributionSource(D, data), coins)
    assert (res.draws_used <= p.N).all()
    assert not res.ok.all()


# ---------------------------------------------------------------- G vs the reference


@pytest.mark.parametrize(
    "H,marginal,params",
    [
        (make_thresholds(2), (0.5, 0.5), StabilityParams.custom(1, 3, 60)),
        (make_thresholds(2), (0.1, 0.9), stability_params(1, 0.5)),
        (make_thresholds(4), (0.25,) * 4, StabilityParams.custom(2, 2, 200)),
        (make_thresholds(4), (0.05, 0.05, 0.1, 0.8), StabilityParams.custom(2, 4, 4000)),
    ],
)
def test_engine_matches_reference(H, marginal, params):
    D = RealizableDistribution(H.members[len(H) // 2], marginal)
    data, coins = _keys(11, 120)
    out = run_g_batch(H, params, DistributionSource(D, data), coins)
    for i in range(len(out)):
        h, k, used, failed = naive_g(H, params, D, data[i], coins[i])
        assert out.hypothesis(i) == h
        assert (out.k_chosen[i], out.draws_used[i], out.failed[i]) == (k, used, failed)


@given(st.integers(0, 2**32), st.integers(1, 4))
def test_engine_matches_reference_random(seed, n):
    H = make_thresholds(4)
    rs = np.random.default_rng(seed)
    marg = rs.dirichlet(np.ones(4))
    D = RealizableDistribution(H.members[int(rs.integers(len(H)))], tuple(marg.tolist()))
    params = StabilityParams.custom(2, n, int(rs.integers(0, 300)))
    data, coins = _keys(seed, 8)
    out = run_g_batch(H, params, DistributionSource(D, data), coins)
    for i in range(8):
        h, k, used, failed = naive_g(H, params, D, data[i], coins[i])
        assert (out.hypothesis(i), int(out.k_chosen[i]), int(out.draws_used[i]), bool(out.failed[i])) == (
            h,
            k,
            used,
            failed,
        )


def test_lanes_do_not_interact():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[1])
    p = StabilityParams.custom(2, 3, 500)
    data, coins = _keys(5, 64)
    full = run_g_batch(H, p, DistributionSource(D, data), coins)
    for lo, hi in [(0, 1), (10, 13), (63, 64)]:
        part = run_g_batch(H, p, DistributionSource(D, data[lo:hi]), coins[lo:hi])
        assert (part.codes == full.codes[lo:hi]).all()
        assert (part.draws_used == full.draws_used[lo:hi]).all()


def test_override_changes_only_its_lane():
    H = make_thresholds(2)
    D = RealizableDistribution(H.members[1], (0.1, 0.9))
    p = stability_params(1, 0.5)
    data, coins = _keys(6, 32)
    base = run_g_batch(H, p, DistributionSource(D, data), coins)
    alt = run_g_batch(H, p, DistributionSource(D, data, {(3, 0): (0, 1)}), coins)
    same = np.ones(32, bool)
    same[3] = False
    assert (base.codes[same] == alt.codes[same]).all()
    assert (base.draws_used[same] == alt.draws_used[same]).all()


def test_force_k_keeps_stream_alignment():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    p = StabilityParams.custom(2, 3, 2000)
    data, coins = _keys(8, 200)
    free = run_g_batch(H, p, DistributionSource(D, data), coins)
    for k in range(3):
        pinned = run_g_batch(H, p, DistributionSource(D, data), coins, force_k=k)
        assert (pinned.k_chosen == k).all()
        hit = free.k_chosen == k
        assert (pinned.codes[hit] == free.codes[hit]).all()
    with pytest.raises(ValueError):
        run_g_batch(H, p, DistributionSource(D, data), coins, force_k=3)


def test_level_choice_is_uniform():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    data, coins = _keys(9, 3000)
    out = run_g_batch(H, StabilityParams.custom(2, 1, 0), DistributionSource(D, data), coins, check=False)
    freq = np.bincount(out.k_chosen, minlength=3) / 3000
    assert np.allclose(freq, 1 / 3, atol=0.04)


def test_failed_runs_fall_back_to_soa_on_t():
    H = make_thresholds(2)
    D = RealizableDistribution.uniform(H.members[1])
    data, coins = _keys(10, 200)
    p = StabilityParams.custom(1, 4, 0)
    out = run_g_batch(H, p, DistributionSource(D, data), coins, force_k=1)
    assert out.failed.all()
    assert (out.draws_used == 4).all()
    src = DistributionSource(D, data)
    for i in range(20):
        pts, labs = src.draw(np.array([i]), np.array([0]), 4)
        T = Sample(tuple(pts[0].tolist()), tuple(labs[0].tolist()))
        assert out.hypothesis(i) == soa_run(H, T).final_hypothesis


def test_singleton_class_always_returns_its_member():
    h = Hypothesis.from_fingerprint("+-+")
    H = ConceptClass([h])
    assert ldim(H) == 0
    for seed in range(5):
        g = algorithm_g(H, 0.5, RealizableDistribution.uniform(h), seed)
        assert g.hypothesis == h
        assert g.k_chosen == 0 and not g.failed
        assert g.draws_used == 8


def test_algorithm_g_is_deterministic():
    H = make_thresholds(4)
    D = RealizableDistribution.uniform(H.members[2])
    p = StabilityParams.custom(2, 3, 500)
    assert algorithm_g(H, None, D, 42, p) == algorithm_g(H, None, D, 42, p)


def test_array_source_matches_distribution_source():
    H = make_thresholds(2)
    D = RealizableDistribution(H.members[1], (0.1, 0.9))
    p = StabilityParams.custom(1, 4, 200)
    data, coins = _keys(12, 16)
    pts, labs = DistributionSource(D, data).draw(np.arange(16), np.zeros(16, np.int64), p.m)
    a = run_g_batch(H, p, DistributionSource(D, data), coins)
    b = run_g_batch(H, p, ArraySource(pts, labs), coins)
    assert (a.codes == b.codes).all() and (a.draws_used == b.draws_used).all()


def test_array_source_too_short():
    H = make_thresholds(2)
    with pytest.raises(ValueError):
        run_g_batch(H, StabilityParams.custom(1, 4, 10), ArraySource([[0, 1]], [[1, 1]]), np.array([1], np.uint64))


def test_uniform_marginal_makes_level_one_mostly_fail():
    """On two points with the uniform marginal, two fresh SOA runs agree so
    often that most level-1 attempts exhaust the cap at d=1, alpha=1/2."""
    H = make_thresholds(2)
    D = RealizableDistribution.uniform(H.members[1])
    p = stability_params(1, 0.5)
    data, coins = _keys(13, 200)
    res = sample_level_batch(1, p, H, DistributionSource(D, data), coins)
    assert res.ok.mean() < 0.5
    skew = sample_level_batch(
        1, p, H, DistributionSource(RealizableDistribution(H.members[1], (0.03, 0.97)), data), coins
    )
    assert skew.ok.all()
