"""Littlestone dimension, mistake trees, and the SOA prediction rule.

Subsets of a concept class are handled as Python-int bitsets over member
indices. :class:`Kernel` holds the per-point split masks of one class and
memoizes both the dimension and the SOA predictor of every subset it has
seen, so repeated restrictions (as the SOA performs them) cost a dict
lookup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .concepts import ConceptClass, Hypothesis

#: classes up to this size get a dense subset -> predictor table
DENSE_LIMIT = 12


class Kernel:
    """Bitset view of a concept class with memoized dimension/predictor."""

    def __init__(self, H: ConceptClass):
        self.H = H
        self.size = len(H)
        self.domain_size = H.domain_size
        self.full = (1 << self.size) - 1
        pos, neg = [], []
        for x in range(self.domain_size):
            p = sum(1 << i for i, h in enumerate(H.members) if h(x) == 1)
            pos.append(p)
            neg.append(self.full & ~p)
        self.pos = pos
        self.neg = neg
        self._ldim: dict[int, int] = {0: -1}
        self._code: dict[int, int] = {}
        self._dense: np.ndarray | None = None

    def split(self, bits: int, x: int, y: int) -> int:
        return bits & (self.pos[x] if y > 0 else self.neg[x])

    def ldim(self, bits: int) -> int:
        memo = self._ldim
        got = memo.get(bits)
        if got is not None:
            return got
        count = bits.bit_count()
        if count == 1:
            memo[bits] = 0
            return 0
        ceiling = count.bit_length() - 1  # floor(log2 |V|)
        best = 0
        for x in range(self.domain_size):
            a = bits & self.pos[x]
            if not a or a == bits:
                continue
            b = bits ^ a
            if min(a.bit_count(), b.bit_count()).bit_length() <= best:
                continue  # 1 + floor(log2 min) cannot beat best
            cand = 1 + min(self.ldim(a), self.ldim(b))
            if cand > best:
                best = cand
                if best == ceiling:
                    break
        memo[bits] = best
        return best

    def predictor_code(self, bits: int) -> int:
        """SOA rule on version space ``bits``: argmax-Ldim label, ties to +1."""
        code = self._code.get(bits)
        if code is None:
            code = 0
            for x in range(self.domain_size):
                if self.ldim(bits & self.pos[x]) >= self.ldim(bits & self.neg[x]):
                    code |= 1 << x
            self._code[bits] = code
        return code

    def predictor(self, bits: int) -> Hypothesis:
        return Hypothesis.from_code(self.predictor_code(bits), self.domain_size)

    # vectorized helpers used by the batch engine

    @property
    def masks(self) -> np.ndarray:
        """Flat split masks: entry ``2*x + 1`` holds the members with +1 at
        ``x``, entry ``2*x`` those with -1. The dtype is the narrowest
        unsigned type that fits the class."""
        m = getattr(self, "_masks", None)
        if m is None:
            if self.size > 64:
                raise ValueError("batch engine supports classes of at most 64 members")
            dtype = next(t for t in (np.uint8, np.uint16, np.uint32, np.uint64) if np.iinfo(t).bits >= self.size)
            m = np.array([v for p, n in zip(self.pos, self.neg) for v in (n, p)], dtype=dtype)
            self._masks = m
        return m

    def codes_for(self, bits: np.ndarray) -> np.ndarray:
        """Predictor codes for an array of version-space bitsets."""
        if self.domain_size > 63:
            raise ValueError("batch engine supports domains of at most 63 points")
        if self.size <= DENSE_LIMIT:
            if self._dense is None:
                self._dense = np.array(
                    [self.predictor_code(v) for v in range(1 << self.size)], dtype=np.uint64
                )
            return self._dense[bits.astype(np.int64)]
        flat = bits.ravel()
        uniq, inv = np.unique(flat, return_inverse=True)
        table = np.array([self.predictor_code(int(v)) for v in uniq], dtype=np.uint64)
        return table[inv].reshape(bits.shape)


def kernel_for(H: ConceptClass) -> Kernel:
    # cached per instance: equal classes may order members differently
    k = H.__dict__.get("_kernel")
    if k is None:
        k = H.__dict__["_kernel"] = Kernel(H)
    return k


def ldim(H: ConceptClass) -> int:
    """Exact Littlestone dimension; -1 for the empty class."""
    if len(H) == 0:
        return -1
    k = kernel_for(H)
    return k.ldim(k.full)


@dataclass(frozen=True)
class MistakeTree:
    """Complete binary tree with a domain point at each internal node.

    ``left`` is followed on label -1 and ``right`` on label +1. A leaf is
    the tree of depth 0 (``point is None``).
    """

    point: int | None = None
    left: MistakeTree | None = None
    right: MistakeTree | None = None

    def __post_init__(self):
        if self.point is None:
            if self.left is not None or self.right is not None:
                raise ValueError("a leaf has no children")
        elif self.left is None or self.right is None:
            raise ValueError("internal nodes need two children")
        elif self.left.depth != self.right.depth:
            raise ValueError("mistake trees are complete")

    @property
    def depth(self) -> int:
        return 0 if self.point is None else 1 + self.left.depth

    def paths(self) -> Iterator[tuple[tuple[int, int], ...]]:
        """Each root-to-leaf path as its labeled example sequence."""
        if self.point is None:
            yield ()
            return
        for y, child in ((-1, self.left), (1, self.right)):
            for rest in child.paths():
                yield ((self.point, y),) + rest

    def points(self) -> Iterator[int]:
        if self.point is not None:
            yield self.point
            yield from self.left.points()
            yield from self.right.points()

    def render(self, indent: str = "  ") -> str:
        lines: list[str] = []

        def walk(node, depth, edge):
            tag = f"{edge} " if edge else ""
            if node.point is None:
                lines.append(f"{indent * depth}{tag}leaf")
                return
            lines.append(f"{indent * depth}{tag}x={node.point}")
            walk(node.left, depth + 1, "[-1]")
            walk(node.right, depth + 1, "[+1]")

        walk(self, 0, "")
        return "\n".join(lines)


LEAF = MistakeTree()


def verify_shattered(H: ConceptClass, T: MistakeTree) -> bool:
    """True iff every root-to-leaf path of ``T`` is realized by a member of ``H``."""
    for x in T.points():
        if not 0 <= x < H.domain_size:
            raise ValueError(f"tree point {x} outside the domain")
    M = H.matrix
    if len(H) == 0:
        return False
    for path in T.paths():
        ok = np.ones(len(H), dtype=bool)
        for x, y in path:
            ok &= M[:, x] == y
        if not ok.any():
            return False
    return True


def find_shattered_tree(H: ConceptClass, depth: int) -> MistakeTree | None:
    """Exhaustive depth-first search for a shattered tree of exactly ``depth``.

    Works directly on member-index sets (not on :func:`ldim`) so it can serve
    as an independent check of the dimension.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    M = H.matrix

    def search(idx: np.ndarray, d: int) -> MistakeTree | None:
        if d == 0:
            return LEAF if idx.size else None
        if idx.size < 1 << d:  # a depth-d tree needs 2**d distinct paths
            return None
        for x in range(H.domain_size):
            col = M[idx, x]
            neg, pos = idx[col == -1], idx[col == 1]
            if neg.size < 1 << (d - 1) or pos.size < 1 << (d - 1):
                continue
            left = search(neg, d - 1)
            if left is None:
                continue
            right = search(pos, d - 1)
            if right is not None:
                return MistakeTree(x, left, right)
        return None

    return search(np.arange(len(H)), depth)


def ldim_by_search(H: ConceptClass) -> int:
    """Largest depth with a shattered tree, by :func:`find_shattered_tree`."""
    if len(H) == 0:
        return -1
    d = 0
    while find_shattered_tree(H, d + 1) is not None:
        d += 1
    return d
