"""Differentially private primitives: a stable histogram, the exponential
mechanism over a finite hypothesis list, and exact audits of both.

Laplace noise is drawn by inverse CDF from a 53-bit uniform taken from a
:class:`~stablepriv.rng.Stream`, so a seeded release replays bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .concepts import Hypothesis, Sample
from .rng import as_stream


@dataclass(frozen=True)
class PrivacyParams:
    """An ``(epsilon, delta)`` budget; ``delta == 0`` is pure DP."""

    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")

    def halve_epsilon(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon / 2, self.delta)


# --------------------------------------------------------------------- Laplace


def laplace(scale: float, rng, size: int) -> np.ndarray:
    """``size`` draws of Laplace(0, scale) by inverse CDF.

    The uniform is ``(w + 0.5) * 2**-53`` for the top 53 bits ``w`` of a
    stream word, so it never hits 0 or 1.
    """
    stream = as_stream(rng)
    u = stream.uniforms(size) + 2.0**-54
    return np.where(u < 0.5, scale * np.log(2 * u), -scale * np.log(2 * (1 - u)))


def laplace_sf(x: float, scale: float) -> float:
    """``Pr[Lap(scale) > x]``."""
    if x >= 0:
        return 0.5 * math.exp(-x / scale)
    return 1 - 0.5 * math.exp(x / scale)


# --------------------------------------------------------------------- histogram


@dataclass(frozen=True)
class HistogramOutput:
    """Released items with their noisy frequency estimates."""

    released: tuple
    estimates: Mapping[Hashable, float]
    k: int

    def __post_init__(self):
        if set(self.released) != set(self.estimates):
            raise ValueError("estimates must be defined exactly on the released items")


def release_threshold(priv: PrivacyParams) -> float:
    """Noisy-count threshold ``1 + 2 ln(2/delta) / epsilon``."""
    if priv.delta <= 0:
        raise ValueError("the stable histogram needs delta > 0")
    return 1 + 2 * math.log(2 / priv.delta) / priv.epsilon


def histogram_from_counts(items: Sequence, counts, k: int, priv: PrivacyParams, rng) -> HistogramOutput:
    """Stable histogram on precomputed counts.

    ``items`` must be distinct and in a canonical order: noise is drawn
    from ``rng`` in that order.
    """
    t = release_threshold(priv)
    counts = np.asarray(counts, dtype=np.float64)
    if len(items) != counts.size:
        raise ValueError("one count per item")
    if k < 1:
        raise ValueError("k must be >= 1")
    noisy = counts + laplace(2 / priv.epsilon, rng, counts.size)
    keep = np.flatnonzero(noisy > t)
    est = np.clip(noisy[keep] / k, 0.0, 1.0)
    released = tuple(items[i] for i in keep.tolist())
    return HistogramOutput(released, dict(zip(released, est.tolist())), int(k))


def stable_histogram(items: Sequence[Hashable], priv: PrivacyParams, rng) -> HistogramOutput:
    """Release the frequent items of ``items`` with noisy frequencies.

    Each distinct item's count gets Laplace(2/epsilon) noise and is released
    when the noisy count exceeds :func:`release_threshold`. Estimates are
    noisy count over ``len(items)``, clamped to [0, 1]. Distinct items are
    processed in sorted order.

    Raises:
        ValueError: if ``items`` is empty or ``priv.delta`` is 0.
    """
    release_threshold(priv)
    if len(items) == 0:
        raise ValueError("the histogram needs at least one item")
    tally: dict = {}
    for it in items:
        tally[it] = tally.get(it, 0) + 1
    distinct = sorted(tally)
    return histogram_from_counts(distinct, [tally[x] for x in distinct], len(items), priv, rng)


def hist_failure_bound(k: int, eta: float, priv: PrivacyParams) -> float:
    """Union bound on the probability that the histogram misses its contract.

    Contract: every item of frequency at least ``eta`` is released, and every
    released item has estimate error at most ``eta``. Misses come from at
    most ``1/eta`` heavy items falling below the threshold, or from any of
    at most ``k`` distinct items getting noise beyond ``eta * k``.
    Returns +inf when ``eta * k`` does not clear the threshold.
    """
    b = 2 / priv.epsilon
    t = release_threshold(priv)
    mass = eta * k
    if mass <= t:
        return math.inf
    log_heavy = -math.log(eta) + math.log(0.5) - (mass - t) / b
    log_noise = math.log(k) - mass / b
    return math.exp(log_heavy) + math.exp(log_noise)


def hist_accuracy_check(k: int, eta: float, beta: float, priv: PrivacyParams) -> bool:
    """True if ``k`` items suffice for the histogram contract w.p. ``1 - beta``."""
    if k < 1 or not 0 < eta <= 1 or not 0 < beta < 1:
        raise ValueError("need k >= 1, 0 < eta <= 1, 0 < beta < 1")
    return hist_failure_bound(k, eta, priv) <= beta


@dataclass(frozen=True)
class HistReleaseAudit:
    """Exact release probabilities of one item at neighbouring counts."""

    count: int
    probabilities: Mapping[int, float]
    priv: PrivacyParams
    passed: bool


def release_probability(count: int, priv: PrivacyParams) -> float:
    """``Pr[count + Lap(2/epsilon) > t]``; zero-count items never appear."""
    if count <= 0:
        return 0.0
    return laplace_sf(release_threshold(priv) - count, 2 / priv.epsilon)


def audit_hist_release_dp(count: int, k: int, priv: PrivacyParams) -> HistReleaseAudit:
    """Check ``p <= e^eps p' + delta`` both ways for counts ``c`` and ``c +/- 1``."""
    if not 0 <= count <= k:
        raise ValueError("need 0 <= count <= k")
    cs = [c for c in (count - 1, count, count + 1) if 0 <= c <= k]
    p = {c: release_probability(c, priv) for c in cs}
    bound = math.exp(priv.epsilon)
    ok = all(
        p[a] <= bound * p[b] + priv.delta * (1 + 1e-12) and p[b] <= bound * p[a] + priv.delta * (1 + 1e-12)
        for a, b in zip(cs, cs[1:])
    )
    return HistReleaseAudit(count, p, priv, ok)


# --------------------------------------------------------------------- exponential mechanism


@dataclass(frozen=True)
class EmDistribution:
    """Exponential-mechanism output distribution over ``support``."""

    support: tuple[Hypothesis, ...]
    probabilities: np.ndarray
    log_probabilities: np.ndarray


def _mistakes(Hs: Sequence[Hypothesis], S: Sample) -> np.ndarray:
    M = np.array([h.labels for h in Hs], dtype=np.int8)
    pts = np.asarray(S.points, dtype=np.intp)
    return (M[:, pts] != np.asarray(S.labels, dtype=np.int8)).sum(axis=1)


def em_exact_distribution(Hs: Sequence[Hypothesis], S: Sample, epsilon: float) -> EmDistribution:
    """Probabilities proportional to ``exp(-epsilon * n * loss_S(h) / 2)``.

    ``n * loss_S(h)`` is the integer mistake count, so scores are exact; the
    normalization uses log-sum-exp.
    """
    if not Hs:
        raise ValueError("the exponential mechanism needs a nonempty hypothesis list")
    if len(S) == 0:
        raise ValueError("the exponential mechanism needs a nonempty sample")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    scores = -0.5 * epsilon * _mistakes(Hs, S).astype(np.float64)
    logp = scores - logsumexp(scores)
    return EmDistribution(tuple(Hs), np.exp(logp), logp)


def sample_em(dist: EmDistribution, rng, size: int | None = None):
    """Inverse-CDF draws from ``dist``; one hypothesis, or an index array."""
    u = as_stream(rng).uniforms(1 if size is None else size)
    cdf = np.cumsum(dist.probabilities)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1)
    return dist.support[int(idx[0])] if size is None else idx


def generic_learner(Hs: Sequence[Hypothesis], S: Sample, epsilon: float, rng) -> Hypothesis:
    """One epsilon-DP selection from ``Hs`` by empirical loss on ``S``."""
    return sample_em(em_exact_distribution(Hs, S, epsilon), rng)


def neighbour_position(S: Sample, S2: Sample) -> int:
    """The single position where two equal-length samples differ.

    Raises:
        ValueError: if the samples are not neighbours.
    """
    if len(S) != len(S2):
        raise ValueError("neighbouring samples have equal length")
    diff = [i for i, (a, b) in enumerate(zip(S, S2)) if a != b]
    if len(diff) != 1:
        raise ValueError(f"samples differ in {len(diff)} positions, expected exactly 1")
    return diff[0]


def audit_em_dp(Hs: Sequence[Hypothesis], S: Sample, S_neighbor: Sample, epsilon: float) -> float:
    """Max over outputs of ``|ln p_S(h) - ln p_S'(h)|``, computed exactly."""
    neighbour_position(S, S_neighbor)
    a = em_exact_distribution(Hs, S, epsilon).log_probabilities
    b = em_exact_distribution(Hs, S_neighbor, epsilon).log_probabilities
    return float(np.max(np.abs(a - b)))
