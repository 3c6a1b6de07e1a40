"""Tournament sampler with a draw cap, and the globally-stable learner G.

The sampler builds a level-``k`` sample recursively: two level-``k-1``
samples each get ``n`` fresh examples appended, the SOA is run on both,
and if the two predictors differ a tournament example ``(x, y)`` is put
on whichever side ``y`` contradicts. Equal predictors restart the round.
Every example drawn from the distribution, in any recursive call, counts
against one cap ``N`` per top-level sample; exceeding it yields Fail.

G picks ``k`` uniformly from ``0..d``, samples ``S`` at level ``k`` and
returns ``SOA(S + T)`` for ``n`` fresh examples ``T``.

Everything runs on lanes: one lane is one independent sampler (or G run)
with its own data stream and coin stream (see :mod:`stablepriv.rng`).
A lane computes the same thing whether it runs alone or alongside
thousands of others, and a lane's data stream is exactly the input
sample G consumes, read left to right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .concepts import ConceptClass, Hypothesis, RealizableDistribution, Sample, points_from_words
from .littlestone import kernel_for, ldim
from .rng import as_stream, hash64
from .soa import soa_batch

#: lanes processed together; keeps the working set in cache
CHUNK = 4096
#: cursor arithmetic is int64; caps beyond this are never reached anyway
_CAP_LIMIT = 2**62


class ObservationViolation(AssertionError):
    """A generated sample broke a structural guarantee of the sampler."""


def _fraction(alpha) -> Fraction:
    if isinstance(alpha, Fraction):
        return alpha
    if isinstance(alpha, float):
        return Fraction(repr(alpha))
    return Fraction(alpha)


@dataclass(frozen=True)
class StabilityParams:
    """Sample sizes and thresholds of G for dimension ``d`` and accuracy ``alpha``."""

    d: int
    alpha: Fraction | None
    n: int
    N: int
    freq_threshold: Fraction
    eta_guarantee: Fraction

    @property
    def m(self) -> int:
        return self.N + self.n

    @classmethod
    def custom(cls, d: int, n: int, N: int) -> StabilityParams:
        """Hand-picked ``n`` and cap ``N`` (small-scale tests)."""
        if d < 0 or n < 1 or N < 0:
            raise ValueError("need d >= 0, n >= 1, N >= 0")
        base = stability_params(d, Fraction(1, 2))
        return cls(d, None, int(n), int(N), base.freq_threshold, base.eta_guarantee)

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "alpha": None if self.alpha is None else str(self.alpha),
            "n": self.n,
            "N": self.N,
            "m": self.m,
            "freq_threshold": str(self.freq_threshold),
            "eta_guarantee": str(self.eta_guarantee),
        }


def stability_params(d: int, alpha) -> StabilityParams:
    """Exact integer parameters of G.

    ``n = ceil(2**(d+2) / alpha)``, ``N = 2**(2**(d+2)+1) * 4**(d+1) * n``,
    ``m = N + n``; frequent-hypothesis threshold ``2**-(2**(d+2))`` and
    output-probability guarantee ``2**-(2**(d+2)+1) / (d+1)``.
    """
    if d < 0:
        raise ValueError("d must be >= 0")
    a = _fraction(alpha)
    if not 0 < a <= Fraction(1, 2):
        raise ValueError(f"alpha must lie in (0, 1/2], got {alpha}")
    e = 2 ** (d + 2)
    n = math.ceil(Fraction(e) / a)
    N = 2 ** (e + 1) * 4 ** (d + 1) * n
    return StabilityParams(d, a, n, N, Fraction(1, 2**e), Fraction(1, 2 ** (e + 1) * (d + 1)))


# --------------------------------------------------------------------- sources


class DistributionSource:
    """Per-lane virtual i.i.d. samples from ``D``.

    Example ``j`` of lane ``i`` is a fixed function of ``keys[i]`` and
    ``j``. ``overrides`` maps ``(lane, j)`` to a replacement example and
    exists to build neighbouring inputs.
    """

    capacity = None

    def __init__(self, D: RealizableDistribution, keys, overrides=None):
        self.D = D
        self.keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
        self.overrides = dict(overrides or {})

    def __len__(self):
        return self.keys.size

    def draw(self, lanes: np.ndarray, starts: np.ndarray, count: int):
        ctr = starts.astype(np.uint64)[:, None] + np.arange(count, dtype=np.uint64)
        pts = points_from_words(self.D, hash64(self.keys[lanes][:, None], ctr))
        labs = self.D.target_array[pts]
        if self.overrides:
            for row, lane in enumerate(lanes.tolist()):
                s = int(starts[row])
                for j in range(s, s + count):
                    hit = self.overrides.get((lane, j))
                    if hit is not None:
                        pts[row, j - s], labs[row, j - s] = hit
        return pts, labs


class ArraySource:
    """Explicit per-lane samples, consumed left to right."""

    def __init__(self, points, labels):
        self.points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        self.labels = np.atleast_2d(np.asarray(labels, dtype=np.int8))
        if self.points.shape != self.labels.shape:
            raise ValueError("points and labels must have the same shape")
        self.capacity = self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def draw(self, lanes, starts, count):
        idx = starts[:, None] + np.arange(count)
        return (
            np.take_along_axis(self.points[lanes], idx, axis=1),
            np.take_along_axis(self.labels[lanes], idx, axis=1),
        )


# --------------------------------------------------------------------- engine


@dataclass
class SamplerBatch:
    """Level-``k`` outcomes for a batch of lanes.

    Rows with ``ok`` false are Fail; their sample columns are meaningless.
    """

    k: int
    points: np.ndarray
    labels: np.ndarray
    tournament: np.ndarray
    ok: np.ndarray
    draws_used: np.ndarray
    rejections: np.ndarray

    def sample(self, i: int) -> Sample | None:
        if not self.ok[i]:
            return None
        return Sample.from_arrays(self.points[i], self.labels[i], self.tournament[i])


@dataclass
class GBatch:
    """Outputs of many independent runs of G."""

    codes: np.ndarray
    k_chosen: np.ndarray
    draws_used: np.ndarray
    failed: np.ndarray
    mistakes: np.ndarray
    rejections: np.ndarray
    domain_size: int = field(repr=False)

    def __len__(self):
        return self.codes.size

    def hypothesis(self, i: int) -> Hypothesis:
        return Hypothesis.from_code(int(self.codes[i]), self.domain_size)


class _Lanes:
    def __init__(self, H, params, source, coin_keys, check):
        self.H = H
        self.n = params.n
        cap = min(params.N, _CAP_LIMIT)
        if source.capacity is not None:
            if source.capacity < params.n:
                raise ValueError(f"G needs at least n={params.n} examples per input sample")
            cap = min(cap, source.capacity - params.n)
        self.cap = cap
        self.source = source
        self.coin_keys = np.asarray(coin_keys, dtype=np.uint64).reshape(-1)
        B = self.coin_keys.size
        if len(source) != B:
            raise ValueError("one data source lane per coin stream")
        self.cursor = np.zeros(B, dtype=np.int64)
        self.coin_ctr = np.zeros(B, dtype=np.uint64)
        self.rejections = np.zeros((B, params.d + 1), dtype=np.int64)
        self.check = check

    def coins(self, lanes) -> np.ndarray:
        u = hash64(self.coin_keys[lanes], self.coin_ctr[lanes])
        self.coin_ctr[lanes] += np.uint64(1)
        return u

    def draw(self, lanes):
        """``n`` examples per lane; lanes whose cap would be exceeded fail."""
        fits = self.cursor[lanes] + self.n <= self.cap
        good = lanes[fits]
        pts, labs = self.source.draw(good, self.cursor[good], self.n)
        self.cursor[good] += self.n
        return fits, pts, labs

    def level(self, k: int, lanes: np.ndarray):
        n = self.n
        A = lanes.size
        width = k * (n + 1)
        P = np.zeros((A, width), dtype=np.int64)
        Y = np.ones((A, width), dtype=np.int8)
        F = np.zeros((A, width), dtype=bool)
        ok = np.ones(A, dtype=bool)
        if k == 0 or A == 0:
            return P, Y, F, ok
        sub = (k - 1) * (n + 1)
        pending = np.arange(A)
        while pending.size:
            ln = lanes[pending]
            sides = []
            alive = np.ones(pending.size, dtype=bool)
            for _ in range(2):
                # S_b at level k-1; lanes that already failed skip it
                idx = np.flatnonzero(alive)
                p, y, f, good = self.level(k - 1, ln[idx])
                alive[idx] = good
                sides.append((idx, p, y, f))
            seqs = []
            for idx, p, y, f in sides:
                keep = alive[idx]
                idx, p, y, f = idx[keep], p[keep], y[keep], f[keep]
                fits, tp, ty = self.draw(ln[idx])
                alive[idx[~fits]] = False
                seqs.append((idx[fits], p[fits], y[fits], f[fits], tp, ty))
            # lanes alive after both T draws are exactly seqs[1]'s; align side 0 to them
            idx1 = seqs[1][0]
            pos0 = np.searchsorted(seqs[0][0], idx1)
            s0 = [a[pos0] for a in seqs[0][1:]]
            s1 = list(seqs[1][1:])
            seq0_p = np.concatenate([s0[0], s0[3]], axis=1)
            seq0_y = np.concatenate([s0[1], s0[4]], axis=1)
            seq1_p = np.concatenate([s1[0], s1[3]], axis=1)
            seq1_y = np.concatenate([s1[1], s1[4]], axis=1)
            f0 = soa_batch(self.H, seq0_p, seq0_y)
            f1 = soa_batch(self.H, seq1_p, seq1_y)
            diff = f0 != f1
            done = idx1[diff]
            if done.size:
                x_u = f0[diff] ^ f1[diff]
                low = x_u & (~x_u + np.uint64(1))
                x = np.log2(low.astype(np.float64)).astype(np.int64)
                y = np.where(self.coins(ln[done]) >> np.uint64(63), 1, -1).astype(np.int8)
                f0x = np.where((f0[diff] >> x.astype(np.uint64)) & np.uint64(1), 1, -1)
                take0 = f0x != y
                rows = pending[done]
                bp = np.where(take0[:, None], seq0_p[diff], seq1_p[diff])
                by = np.where(take0[:, None], seq0_y[diff], seq1_y[diff])
                bf = np.where(take0[:, None], s0[2][diff], s1[2][diff])
                P[rows, :width - 1] = bp
                Y[rows, :width - 1] = by
                F[rows, :sub] = bf
                P[rows, -1] = x
                Y[rows, -1] = y
                F[rows, -1] = True
            again = idx1[~diff]
            self.rejections[ln[again], k] += 1
            ok[pending[~alive]] = False
            pending = pending[again]
        return P, Y, F, ok


def _chunks(B: int):
    for start in range(0, B, CHUNK):
        yield np.arange(start, min(start + CHUNK, B))


def sample_level_batch(
    k: int, params: StabilityParams, H: ConceptClass, source, coin_keys
) -> SamplerBatch:
    """Level-``k`` tournament samples, one per lane."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > params.d:
        raise ValueError(f"k={k} exceeds d={params.d}")
    eng = _Lanes(H, params, source, coin_keys, check=False)
    B = eng.coin_keys.size
    width = k * (params.n + 1)
    P = np.zeros((B, width), dtype=np.int64)
    Y = np.ones((B, width), dtype=np.int8)
    F = np.zeros((B, width), dtype=bool)
    ok = np.ones(B, dtype=bool)
    for lanes in _chunks(B):
        P[lanes], Y[lanes], F[lanes], ok[lanes] = eng.level(k, lanes)
    return SamplerBatch(k, P, Y, F, ok, eng.cursor.copy(), eng.rejections)


def _check_observations(k, S_flags, T_pts, T_labs, codes, miss, ok):
    """Tournament examples are mistakes; the output agrees with T."""
    if k and ok.any():
        width = S_flags.shape[1]
        bad = ok & ~(miss[:, :width] | ~S_flags).all(axis=1)
        if bad.any():
            raise ObservationViolation(f"tournament example not a mistake in {int(bad.sum())} level-{k} sample(s)")
        if (miss[ok].sum(axis=1) < k).any():
            raise ObservationViolation(f"fewer than {k} mistakes on a level-{k} sample")
    bits = (codes[:, None] >> T_pts.astype(np.uint64)) & np.uint64(1)
    if (bits.astype(bool) != (T_labs > 0)).any():
        raise ObservationViolation("SOA(S+T) disagrees with T")


def run_g_batch(
    H: ConceptClass, params: StabilityParams, source, coin_keys, check: bool = True, force_k: int | None = None
) -> GBatch:
    """Run G once per lane.

    With ``check`` the tournament-mistake and suffix-consistency guarantees
    are asserted on every generated sample (raises
    :class:`ObservationViolation`). ``force_k`` pins the level instead of
    drawing it; the level coin is still consumed so the streams line up.
    """
    if force_k is not None and not 0 <= force_k <= params.d:
        raise ValueError(f"force_k must lie in 0..{params.d}")
    eng = _Lanes(H, params, source, coin_keys, check)
    B = eng.coin_keys.size
    d = params.d
    ks = np.empty(B, dtype=np.int64)
    codes = np.empty(B, dtype=np.uint64)
    failed = np.zeros(B, dtype=bool)
    mistakes = np.zeros(B, dtype=np.int64)
    for lanes in _chunks(B):
        u = eng.coins(lanes)
        # k uniform on 0..d from the top 53 bits
        kk = np.minimum(((u >> np.uint64(11)).astype(np.float64) * 2.0**-53 * (d + 1)).astype(np.int64), d)
        if force_k is not None:
            kk = np.full_like(kk, force_k)
        ks[lanes] = kk
        for k in np.unique(kk).tolist():
            grp = lanes[kk == k]
            P, Y, F, ok = eng.level(k, grp)
            failed[grp] = ~ok
            # T follows whatever S consumed; it always fits since cursor <= cap
            T_pts, T_labs = source.draw(grp, eng.cursor[grp], params.n)
            eng.cursor[grp] += params.n
            for good in (ok, ~ok):
                rows = np.flatnonzero(good)
                if not rows.size:
                    continue
                if good is ok:
                    sp = np.concatenate([P[rows], T_pts[rows]], axis=1)
                    sy = np.concatenate([Y[rows], T_labs[rows]], axis=1)
                    sf = F[rows]
                else:
                    sp, sy, sf = T_pts[rows], T_labs[rows], F[rows][:, :0]
                c, miss = soa_batch(H, sp, sy, mistakes=True)
                codes[grp[rows]] = c
                mistakes[grp[rows]] = miss.sum(axis=1)
                if check:
                    kk_eff = k if good is ok else 0
                    _check_observations(kk_eff, sf, T_pts[rows], T_labs[rows], c, miss, np.ones(rows.size, bool))
    return GBatch(codes, ks, eng.cursor.copy(), failed, mistakes, eng.rejections, H.domain_size)


# --------------------------------------------------------------------- single runs


@dataclass(frozen=True)
class SampleResult:
    """One draw from the capped sampler; ``outcome`` is None on Fail."""

    outcome: Sample | None
    draws_used: int
    rejection_rounds: tuple[int, ...]

    @property
    def failed(self) -> bool:
        return self.outcome is None


@dataclass(frozen=True)
class GOutput:
    hypothesis: Hypothesis
    k_chosen: int
    draws_used: int
    failed: bool


def _lane_keys(rng):
    stream = as_stream(rng)
    return np.array([stream.spawn().key], dtype=np.uint64), np.array([stream.spawn().key], dtype=np.uint64)


def sample_dk_mc(k: int, params: StabilityParams, H: ConceptClass, D: RealizableDistribution, rng) -> SampleResult:
    """One level-``k`` sample with the draw cap ``params.N``.

    ``rejection_rounds[j-1]`` counts restarts at level ``j`` (summed over
    all recursive calls at that level).
    """
    data, coins = _lane_keys(rng)
    res = sample_level_batch(k, params, H, DistributionSource(D, data), coins)
    return SampleResult(res.sample(0), int(res.draws_used[0]), tuple(res.rejections[0, 1 : k + 1].tolist()))


def algorithm_g(H: ConceptClass, alpha, D: RealizableDistribution, rng, params: StabilityParams | None = None) -> GOutput:
    """One run of G at accuracy ``alpha`` on examples from ``D``.

    If the level-``k`` sample fails, G falls back to ``SOA(T)`` and reports
    ``failed=True``.
    """
    if len(H) == 0:
        raise ValueError("G needs a nonempty concept class")
    if params is None:
        params = stability_params(ldim(H), alpha)
    data, coins = _lane_keys(rng)
    out = run_g_batch(H, params, DistributionSource(D, data), coins)
    return GOutput(out.hypothesis(0), int(out.k_chosen[0]), int(out.draws_used[0]), bool(out.failed[0]))
