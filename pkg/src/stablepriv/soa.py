"""The Standard Optimal Algorithm, extended to non-realizable sequences.

While the examples seen so far are realizable by the class, the learner
keeps the version space and predicts with the argmax-Ldim rule. On the
first example that no member can explain it switches to patch mode for
good: the current predictor is kept and overwritten at the offending
point, and every later example does the same.

Two implementations share the :class:`~stablepriv.littlestone.Kernel`
memo tables: the value-type :class:`SoaState` API, and :func:`soa_batch`,
which replays many equal-length sequences at once on bitset/code arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .concepts import ConceptClass, Hypothesis, Sample
from .littlestone import kernel_for


@dataclass(frozen=True)
class SoaState:
    """Immutable learner state; updates return a new state."""

    concept_class: ConceptClass
    members: int
    base_predictor: Hypothesis
    patches: Mapping[int, int]
    realizable: bool

    @property
    def version_space(self) -> ConceptClass:
        return self.concept_class.subset(self.members)

    @property
    def predictor(self) -> Hypothesis:
        return self.base_predictor


@dataclass(frozen=True)
class SoaRunResult:
    final_hypothesis: Hypothesis
    mistake_count: int
    mistake_positions: tuple[int, ...]


_NO_PATCHES = MappingProxyType({})


def soa_init(H: ConceptClass) -> SoaState:
    if len(H) == 0:
        raise ValueError("SOA needs a nonempty concept class")
    k = kernel_for(H)
    return SoaState(H, k.full, k.predictor(k.full), _NO_PATCHES, True)


def soa_predict(state: SoaState, x: int) -> int:
    return state.base_predictor(x)


def soa_update(state: SoaState, x: int, y: int) -> SoaState:
    if not 0 <= x < state.concept_class.domain_size:
        raise ValueError(f"point {x} outside the domain")
    k = kernel_for(state.concept_class)
    if state.realizable:
        bits = k.split(state.members, x, y)
        if bits:
            return replace(state, members=bits, base_predictor=k.predictor(bits))
    patches = dict(state.patches)
    patches[x] = y
    return replace(
        state,
        base_predictor=state.base_predictor.with_label(x, y),
        patches=MappingProxyType(patches),
        realizable=False,
    )


def soa_run(H: ConceptClass, S: Sample) -> SoaRunResult:
    """Predict, reveal, update over ``S`` in order."""
    state = soa_init(H)
    mistakes = []
    for t, (x, y) in enumerate(S):
        if soa_predict(state, x) != y:
            mistakes.append(t)
        state = soa_update(state, x, y)
    return SoaRunResult(state.base_predictor, len(mistakes), tuple(mistakes))


def soa_batch(H: ConceptClass, points: np.ndarray, labels: np.ndarray, mistakes: bool = False):
    """Run the SOA on many sequences of one length.

    Args:
        H: the concept class (at most 64 members, 63 points).
        points: ``(A, L)`` integer array of domain points.
        labels: ``(A, L)`` array of +1/-1 labels.
        mistakes: also return the ``(A, L)`` boolean mistake mask.

    Returns:
        Final predictor codes ``(A,)`` as uint64 (bit ``x`` set iff +1 at
        ``x``), and the mistake mask when requested.
    """
    k = kernel_for(H)
    A, L = points.shape
    init = np.uint64(k.predictor_code(k.full))
    if L == 0:
        codes = np.full(A, init, dtype=np.uint64)
        return (codes, np.zeros((A, 0), dtype=bool)) if mistakes else codes

    pos = labels > 0
    m = k.masks[points * 2 + pos]
    if not mistakes:
        final = np.bitwise_and.reduce(m, axis=1)
        if final.all():  # every sequence realizable
            return k.codes_for(final)
    cum = np.bitwise_and.accumulate(m, axis=1)
    alive = cum != 0
    # first example that breaks realizability (L if none)
    z = np.where(alive[:, -1], L, np.argmin(alive, axis=1))
    full = cum.dtype.type(k.full)
    last_real = np.where(z > 0, cum[np.arange(A), np.maximum(z - 1, 0)], full)
    codes = k.codes_for(last_real)

    if mistakes:
        prev = np.empty((A, L), dtype=np.uint64)
        prev[:, 0] = init
        if L > 1:
            prev[:, 1:] = k.codes_for(np.where(alive[:, :-1], cum[:, :-1], full))
        pred = (prev >> points.astype(np.uint64)) & np.uint64(1)
        miss = pred.astype(bool) != pos

    broken = np.flatnonzero(z < L)
    if broken.size:
        cur = codes[broken]
        zb = z[broken]
        pts = points[broken].astype(np.uint64)
        lab = pos[broken]
        one = np.uint64(1)
        for t in range(int(zb.min()), L):
            act = zb <= t
            bit = one << pts[:, t]
            if mistakes and t > 0:
                # beyond z, predictions come from the patched predictor
                late = act & (zb < t)
                if late.any():
                    p = ((cur & bit) != 0)
                    rows = broken[late]
                    miss[rows, t] = p[late] != lab[late, t]
            new = np.where(lab[:, t], cur | bit, cur & ~bit)
            cur = np.where(act, new, cur)
        codes[broken] = cur

    return (codes, miss) if mistakes else codes


def codes_to_hypotheses(codes, domain_size: int) -> list[Hypothesis]:
    return [Hypothesis.from_code(int(c), domain_size) for c in np.asarray(codes).ravel()]
