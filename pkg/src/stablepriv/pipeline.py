"""The private learner: run G on many batches, release the frequent outputs
with a stable histogram, and pick among them with the exponential mechanism.

Parameter rules (all explicit sufficient conditions):

* ``eta`` and the batch size ``m`` come from :func:`stability_params` at
  accuracy ``alpha / 2``;
* ``k`` is the smallest power of two that passes
  :func:`~stablepriv.mechanisms.hist_accuracy_check` at
  ``(eta/8, beta/3, epsilon/2, delta)`` and is at least
  ``16 ln(3/beta) / eta``;
* ``n_prime`` is the smallest integer with
  ``(2/eta) exp(-epsilon (alpha/2) n' / 12) <= beta/6`` and
  ``n' >= (96/alpha) ln(24/(eta beta))``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .concepts import ConceptClass, Hypothesis, RealizableDistribution, draw_examples
from .littlestone import ldim
from .mechanisms import (
    HistogramOutput,
    PrivacyParams,
    generic_learner,
    histogram_from_counts,
)
from .rng import as_stream
from .stability import DistributionSource, GBatch, StabilityParams, _fraction, run_g_batch, stability_params

#: above this dimension the parameters are astronomically large
MAX_EXECUTABLE_D = 1


class InvariantViolation(AssertionError):
    """A pipeline guarantee that must hold on every run was broken."""


def _log(x) -> float:
    """Natural log of a positive Fraction or int, safe for huge or tiny values."""
    x = Fraction(x)
    return math.log(x.numerator) - math.log(x.denominator)


@dataclass(frozen=True)
class BudgetEntry:
    step: str
    epsilon: float
    delta: float


@dataclass(frozen=True)
class MParams:
    """Everything the private learner needs, with exact integers throughout."""

    d: int
    alpha: Fraction
    beta: float
    priv: PrivacyParams
    g_params: StabilityParams
    k: int
    n_prime: int

    @property
    def eta(self) -> Fraction:
        return self.g_params.eta_guarantee

    @property
    def m(self) -> int:
        return self.g_params.m

    @property
    def total_n(self) -> int:
        return self.k * self.m + self.n_prime

    @property
    def budget(self) -> tuple[BudgetEntry, ...]:
        half = self.priv.epsilon / 2
        return (BudgetEntry("histogram", half, self.priv.delta), BudgetEntry("exponential_mechanism", half, 0.0))

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "alpha": str(self.alpha),
            "beta": self.beta,
            "epsilon": self.priv.epsilon,
            "delta": self.priv.delta,
            "eta": str(self.eta),
            "g_alpha": str(self.g_params.alpha),
            "n": self.g_params.n,
            "N": self.g_params.N,
            "m": self.m,
            "k": self.k,
            "n_prime": self.n_prime,
            "total_n": self.total_n,
            "budget": [[b.step, b.epsilon, b.delta] for b in self.budget],
        }


def _hist_ok(k: int, eta: Fraction, beta: float, priv: PrivacyParams) -> bool:
    # eta may be far below float range; eta * k and log(1/eta) are not
    b = 2 / priv.epsilon
    t = 1 + 2 * math.log(2 / priv.delta) / priv.epsilon
    mass = float(eta * k)
    if mass <= t:
        return False
    log_heavy = -_log(eta) + math.log(0.5) - (mass - t) / b
    log_noise = _log(k) - mass / b
    return math.log(beta) >= np.logaddexp(log_heavy, log_noise)


def _smallest_k(eta: Fraction, beta: float, priv: PrivacyParams) -> int:
    """Smallest power of two passing the histogram check at
    ``(eta/8, beta/3, epsilon/2, delta)`` and at least ``16 ln(3/beta) / eta``."""
    h_eta, h_beta, h_priv = eta / 8, beta / 3, priv.halve_epsilon()
    t = 1 + 2 * math.log(2 / h_priv.delta) / h_priv.epsilon
    floor_k = math.ceil(Fraction(16) * Fraction(math.log(3 / beta)) / eta)
    # h_eta * k must clear the threshold, so start at the first power of two that does
    k = 1 << max(0, math.ceil(_log(Fraction(t) / h_eta) / math.log(2)) - 1)
    while k < floor_k or not _hist_ok(k, h_eta, h_beta, h_priv):
        k <<= 1
    return k


def _smallest_n_prime(alpha: Fraction, beta: float, eta: Fraction, epsilon: float) -> int:
    a = float(alpha)
    rate = epsilon * (a / 2) / 12
    log_lhs = _log(2 / eta)  # log((2/eta) exp(-rate n')) = log(2/eta) - rate n'
    target = math.log(beta / 6)
    n1 = max(0, math.ceil((log_lhs - target) / rate))
    while n1 > 0 and log_lhs - rate * (n1 - 1) <= target:
        n1 -= 1
    while log_lhs - rate * n1 > target:
        n1 += 1
    n2 = math.ceil((96 / a) * (math.log(24 / beta) - _log(eta)))
    return max(n1, n2)


def m_params(d: int, alpha, beta: float, epsilon: float, delta: float) -> MParams:
    """Parameters of the private learner at dimension ``d``.

    Raises:
        ValueError: for ``alpha`` outside (0, 1], ``beta`` outside (0, 1),
            non-positive ``epsilon`` or ``delta`` outside (0, 1).
    """
    a = _fraction(alpha)
    if not 0 < a <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    priv = PrivacyParams(epsilon, delta)
    if delta <= 0:
        raise ValueError("the private learner needs delta > 0")
    g = stability_params(d, a / 2)
    eta = g.eta_guarantee
    k = _smallest_k(eta, beta, priv)
    n_prime = _smallest_n_prime(a, beta, eta, epsilon)
    return MParams(d, a, float(beta), priv, g, k, n_prime)


# --------------------------------------------------------------------- learner


@dataclass(frozen=True)
class LearnResult:
    hypothesis: Hypothesis
    released_list_size: int
    pruned_list_size: int
    batch_outputs_digest: Mapping[str, int]
    failed: bool
    budget: tuple[BudgetEntry, ...]
    histogram: HistogramOutput = field(repr=False)
    batches: GBatch = field(repr=False, compare=False)


def _split(source: DistributionSource, coin_keys: np.ndarray, parts: int):
    B = coin_keys.size
    bounds = np.linspace(0, B, parts + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        over = {(lane - lo, j): v for (lane, j), v in source.overrides.items() if lo <= lane < hi}
        yield DistributionSource(source.D, source.keys[lo:hi], over), coin_keys[lo:hi]


def run_batches(
    H, params: StabilityParams, source: DistributionSource, coin_keys, threads: int = 1, check=True, force_k=None
) -> GBatch:
    """:func:`run_g_batch` split across worker threads; results are identical."""
    if threads <= 1 or coin_keys.size < 2:
        return run_g_batch(H, params, source, coin_keys, check, force_k)
    run = lambda sc: run_g_batch(H, params, sc[0], sc[1], check, force_k)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(run, _split(source, coin_keys, threads)))
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return GBatch(
        cat("codes"), cat("k_chosen"), cat("draws_used"), cat("failed"), cat("mistakes"), cat("rejections"), H.domain_size
    )


def batch_keys(rng, k: int):
    """Per-batch data and coin keys, plus the streams for the later steps."""
    stream = as_stream(rng)
    data, coins, hist, em_data, em_coins = (stream.spawn() for _ in range(5))
    return data.lane_keys(k), coins.lane_keys(k), hist, em_data, em_coins


def private_learn(
    H: ConceptClass,
    D: RealizableDistribution,
    params: MParams,
    rng,
    *,
    force: bool = False,
    threads: int = 1,
    overrides=None,
) -> LearnResult:
    """Learn privately from ``params.total_n`` examples of ``D``.

    Batch ``i`` is the ``i``-th lane of a :class:`DistributionSource`;
    ``overrides`` replaces individual examples (``(batch, position) ->
    (x, y)``) to build neighbouring inputs.

    Raises:
        ValueError: if ``params.d`` differs from the class dimension, or
            ``d`` exceeds :data:`MAX_EXECUTABLE_D` without ``force``.
        InvariantViolation: if the pruned list or the budget ledger
            breaks its guarantee.
    """
    d = ldim(H)
    if params.d != d:
        raise ValueError(f"parameters are for d={params.d}, class has d={d}")
    if d > MAX_EXECUTABLE_D and not force:
        raise ValueError(f"d={d} needs {params.total_n} examples; pass force=True to run anyway")
    data_keys, coin_keys, hist_stream, em_data, em_coins = batch_keys(rng, params.k)
    source = DistributionSource(D, data_keys, overrides)
    batches = run_batches(H, params.g_params, source, coin_keys, threads)

    codes, counts = np.unique(batches.codes, return_counts=True)
    fps = [Hypothesis.from_code(int(c), H.domain_size).fingerprint for c in codes]
    order = sorted(range(len(fps)), key=fps.__getitem__)
    items = [fps[i] for i in order]
    digest = {fps[i]: int(counts[i]) for i in order}
    hist_priv = PrivacyParams(params.budget[0].epsilon, params.budget[0].delta)
    hist = histogram_from_counts(items, counts[order], params.k, hist_priv, hist_stream)

    cut = float(Fraction(3, 4) * params.eta)
    pruned = [fp for fp in hist.released if hist.estimates[fp] >= cut]
    bound = math.floor(2 / params.eta) + 1
    if len(pruned) > bound:
        raise InvariantViolation(f"pruned list has {len(pruned)} items, bound is {bound}")

    budget = params.budget
    if sum(b.epsilon for b in budget) != params.priv.epsilon or sum(b.delta for b in budget) != params.priv.delta:
        raise InvariantViolation("sub-budgets do not compose to the total budget")

    if not pruned:
        out, failed = Hypothesis.constant(H.domain_size, 1), True
    else:
        S_prime = draw_examples(D, params.n_prime, em_data)
        cands = [Hypothesis.from_fingerprint(fp) for fp in pruned]
        out, failed = generic_learner(cands, S_prime, budget[1].epsilon, em_coins), False
    return LearnResult(out, len(hist.released), len(pruned), digest, failed, budget, hist, batches)
