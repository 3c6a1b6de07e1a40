"""Finite domains, hypotheses, concept classes, samples and losses.

Domain points are the integers ``0 .. domain_size-1`` and labels are the
integers ``+1`` / ``-1``. A hypothesis is a dense label vector over the
whole domain, so equality is exact and population losses are finite sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .rng import as_stream, hash64

LABELS = (1, -1)


def _check_label(y) -> int:
    y = int(y)
    if y not in (1, -1):
        raise ValueError(f"labels are +1/-1, got {y}")
    return y


@dataclass(frozen=True)
class Hypothesis:
    """A total +1/-1 labeling of ``range(len(labels))``."""

    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(_check_label(y) for y in self.labels)
        if not labels:
            raise ValueError("a hypothesis needs a nonempty domain")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_fingerprint(cls, fp: str) -> Hypothesis:
        return cls(tuple(1 if c == "+" else -1 for c in fp))

    @classmethod
    def from_code(cls, code: int, domain_size: int) -> Hypothesis:
        """Inverse of :attr:`code`."""
        code = int(code)
        return cls(tuple(1 if (code >> x) & 1 else -1 for x in range(domain_size)))

    @classmethod
    def constant(cls, domain_size: int, label: int = 1) -> Hypothesis:
        return cls((label,) * domain_size)

    @property
    def domain_size(self) -> int:
        return len(self.labels)

    @cached_property
    def array(self) -> np.ndarray:
        a = np.array(self.labels, dtype=np.int8)
        a.flags.writeable = False
        return a

    @property
    def fingerprint(self) -> str:
        """The label vector written as a ``+``/``-`` string."""
        return "".join("+" if y > 0 else "-" for y in self.labels)

    @property
    def code(self) -> int:
        """Bit ``x`` set iff the label at ``x`` is +1."""
        return sum(1 << x for x, y in enumerate(self.labels) if y > 0)

    def __call__(self, x: int) -> int:
        return self.labels[x]

    def __neg__(self) -> Hypothesis:
        return Hypothesis(tuple(-y for y in self.labels))

    def with_label(self, x: int, y: int) -> Hypothesis:
        labels = list(self.labels)
        labels[x] = _check_label(y)
        return Hypothesis(tuple(labels))

    def __str__(self):
        return self.fingerprint


class ConceptClass:
    """A finite set of distinct hypotheses over one domain.

    Member order is preserved (it fixes the bit positions used by the
    version-space bitsets in :mod:`stablepriv.littlestone`).
    """

    def __init__(self, members: Iterable[Hypothesis], domain_size: int | None = None):
        members = tuple(members)
        sizes = {h.domain_size for h in members}
        if domain_size is None:
            if not sizes:
                raise ValueError("an empty class needs an explicit domain_size")
            domain_size = sizes.pop() if len(sizes) == 1 else -1
        if any(s != domain_size for s in sizes) or domain_size < 1:
            raise ValueError("all members must share one domain")
        if len(set(members)) != len(members):
            raise ValueError("duplicate members in concept class")
        self.members = members
        self.domain_size = int(domain_size)

    @classmethod
    def from_matrix(cls, matrix) -> ConceptClass:
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise ValueError("expected a (members, domain) matrix")
        return cls((Hypothesis(tuple(int(v) for v in row)) for row in matrix), matrix.shape[1])

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, h):
        return h in self._index

    def __eq__(self, other):
        if not isinstance(other, ConceptClass):
            return NotImplemented
        return self.domain_size == other.domain_size and set(self.members) == set(other.members)

    def __hash__(self):
        return hash((self.domain_size, frozenset(self.members)))

    def __repr__(self):
        return f"ConceptClass(|H|={len(self)}, |X|={self.domain_size})"

    @cached_property
    def _index(self) -> dict[Hypothesis, int]:
        return {h: i for i, h in enumerate(self.members)}

    def index(self, h: Hypothesis) -> int:
        return self._index[h]

    @cached_property
    def matrix(self) -> np.ndarray:
        m = np.array([h.labels for h in self.members], dtype=np.int8).reshape(len(self), self.domain_size)
        m.flags.writeable = False
        return m

    def subset(self, bits: int) -> ConceptClass:
        """Members whose index bit is set in ``bits``."""
        return ConceptClass((h for i, h in enumerate(self.members) if bits >> i & 1), self.domain_size)

    def union(self, other: ConceptClass) -> ConceptClass:
        seen = dict.fromkeys(self.members)
        seen.update(dict.fromkeys(other.members))
        return ConceptClass(seen, self.domain_size)

    @property
    def kernel(self):
        # deferred import: littlestone depends on this module
        from .littlestone import kernel_for

        return kernel_for(self)


def make_thresholds(domain_size: int) -> ConceptClass:
    """Thresholds ``t_1 .. t_N`` with ``t_i(j) = +1`` iff ``i <= j`` (1-based).

    Zero-based: member ``i`` is +1 exactly on points ``x >= i``.
    """
    if domain_size < 1:
        raise ValueError("domain_size must be >= 1")
    return ConceptClass(
        (Hypothesis(tuple(1 if x >= i else -1 for x in range(domain_size))) for i in range(domain_size)),
        domain_size,
    )


def make_full_class(domain_size: int) -> ConceptClass:
    """All ``2**domain_size`` labelings."""
    if not 1 <= domain_size <= 16:
        raise ValueError("full class limited to 1..16 points")
    return ConceptClass(
        (Hypothesis.from_code(c, domain_size) for c in range(2**domain_size)), domain_size
    )


def restrict(H: ConceptClass, x: int, b: int) -> ConceptClass:
    """The members ``h`` of ``H`` with ``h(x) == b``."""
    if not 0 <= x < H.domain_size:
        raise ValueError(f"point {x} outside domain of size {H.domain_size}")
    b = _check_label(b)
    return ConceptClass((h for h in H if h(x) == b), H.domain_size)


@dataclass(frozen=True)
class Sample:
    """An ordered sequence of labeled examples.

    ``tournament`` flags the synthetic examples inserted by the tournament
    sampler; examples drawn from a distribution carry ``False``.
    """

    points: tuple[int, ...] = ()
    labels: tuple[int, ...] = ()
    tournament: tuple[bool, ...] = field(default=None)

    def __post_init__(self):
        points = tuple(int(x) for x in self.points)
        labels = tuple(_check_label(y) for y in self.labels)
        flags = (False,) * len(points) if self.tournament is None else tuple(bool(f) for f in self.tournament)
        if len(points) != len(labels) or len(flags) != len(points):
            raise ValueError("points, labels and tournament flags must have equal length")
        if any(x < 0 for x in points):
            raise ValueError("domain points are non-negative integers")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "tournament", flags)

    @classmethod
    def from_arrays(cls, points, labels, tournament=None) -> Sample:
        return cls(
            tuple(np.asarray(points).tolist()),
            tuple(np.asarray(labels).tolist()),
            None if tournament is None else tuple(np.asarray(tournament).tolist()),
        )

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(zip(self.points, self.labels))

    def __add__(self, other: Sample) -> Sample:
        """Concatenation ``S + T`` appends ``T`` after ``S``."""
        if not isinstance(other, Sample):
            return NotImplemented
        return Sample(self.points + other.points, self.labels + other.labels, self.tournament + other.tournament)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Sample(self.points[item], self.labels[item], self.tournament[item])
        return self.points[item], self.labels[item]

    @property
    def tournament_positions(self) -> list[int]:
        return [i for i, f in enumerate(self.tournament) if f]

    def replace(self, position: int, x: int, y: int) -> Sample:
        """A neighbouring sample with one example swapped."""
        points = list(self.points)
        labels = list(self.labels)
        points[position] = x
        labels[position] = y
        return Sample(tuple(points), tuple(labels), self.tournament)


@dataclass(frozen=True)
class RealizableDistribution:
    """Marginal over the domain plus a target hypothesis labeling every point."""

    target: Hypothesis
    marginal: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.marginal, dtype=np.float64)
        if p.shape != (self.target.domain_size,):
            raise ValueError("marginal length must equal the domain size")
        if (p < 0).any() or not np.isfinite(p).all():
            raise ValueError("marginal must be non-negative")
        total = p.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"marginal sums to {total!r}, not 1")
        object.__setattr__(self, "marginal", tuple((p / total).tolist()))

    @classmethod
    def uniform(cls, target: Hypothesis) -> RealizableDistribution:
        n = target.domain_size
        return cls(target, tuple([1.0 / n] * n))

    @property
    def domain_size(self) -> int:
        return self.target.domain_size

    @cached_property
    def cdf_words(self) -> np.ndarray:
        """Cumulative marginal scaled to 64-bit integer thresholds.

        A raw 64-bit word ``z`` maps to the point ``searchsorted(cdf_words, z,
        'right')``; points with zero mass are never produced.
        """
        edges = np.cumsum(np.asarray(self.marginal, dtype=np.float64))[:-1]
        words = [min(int(Fraction(e) * 2**64), 2**64 - 1) for e in edges.tolist()]
        return np.array(words, dtype=np.uint64)

    @cached_property
    def target_array(self) -> np.ndarray:
        return np.asarray(self.target.labels, dtype=np.int8)


def empirical_loss(h: Hypothesis, S: Sample) -> Fraction:
    """Fraction of examples in ``S`` that ``h`` mislabels."""
    if len(S) == 0:
        raise ValueError("empirical loss of an empty sample is undefined")
    wrong = sum(1 for x, y in S if h(x) != y)
    return Fraction(wrong, len(S))


def population_loss(h: Hypothesis, D: RealizableDistribution) -> float:
    """Exact marginal mass of the points where ``h`` disagrees with the target."""
    if h.domain_size != D.domain_size:
        raise ValueError("hypothesis and distribution live on different domains")
    # math.fsum keeps the exact cases (0, 1, sums of dyadics) exact
    return math.fsum(p for p, a, b in zip(D.marginal, h.labels, D.target.labels) if a != b)


def points_from_words(D: RealizableDistribution, words: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to domain points by inverse CDF."""
    edges = D.cdf_words
    if edges.size <= 4:
        # a few compares beat a binary search on tiny domains
        out = np.zeros(words.shape, dtype=np.intp)
        for e in edges:
            out += words >= e
        return out
    return np.searchsorted(edges, words, side="right").astype(np.intp)


def draw_examples(D: RealizableDistribution, n: int, rng) -> Sample:
    """``n`` i.i.d. examples ``(x, target(x))`` with ``x`` from the marginal."""
    if n < 0:
        raise ValueError("n must be non-negative")
    stream = as_stream(rng)
    words = hash64(np.uint64(stream.key), np.arange(stream.counter, stream.counter + n, dtype=np.uint64))
    stream.counter += n
    points = points_from_words(D, words)
    return Sample(tuple(points.tolist()), tuple(D.target_array[points].tolist()))


def consistent(h: Hypothesis, S: Sample | Sequence[tuple[int, int]]) -> bool:
    return all(h(x) == y for x, y in S)
