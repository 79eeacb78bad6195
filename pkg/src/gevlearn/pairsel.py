"""Ordered class-pair enumeration strategies.

Detectors are extracted per ordered pair (numerator class, denominator
class).  For small k the full k(k-1) sweep is affordable; for many classes
the hypercube strategy scales as O(k log k) while keeping both directions of
every selected pair, and random strategies give a feature budget knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PairPlan:
    pairs: tuple
    k: int
    strategy: str
    seed: int | None = field(default=None)

    def __post_init__(self):
        seen = set()
        for i, j in self.pairs:
            if i == j:
                raise ValueError(f"pair ({i},{i}) has equal classes")
            if not (1 <= i <= self.k and 1 <= j <= self.k):
                raise ValueError(f"pair ({i},{j}) outside 1..{self.k}")
            if (i, j) in seen:
                raise ValueError(f"duplicate pair ({i},{j})")
            seen.add((i, j))

    def __len__(self) -> int:
        return len(self.pairs)


def all_pairs(k: int) -> PairPlan:
    """All k(k-1) ordered pairs, lexicographic."""
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    pairs = tuple((i, j) for i in range(1, k + 1) for j in range(1, k + 1) if j != i)
    return PairPlan(pairs=pairs, k=k, strategy="all")


def hypercube_pairs(k: int, seed: int) -> PairPlan:
    """Place classes on random vertices of a hypercube; pair Hamming-1 neighbors.

    With b = ceil(log2 k), the k classes occupy a random k-subset of the
    2^b vertices.  Every pair of classes at Hamming distance 1 yields both
    ordered pairs.  An occupied vertex with no occupied neighbor is paired
    with its nearest occupied vertex (ties broken by smallest class label),
    so every class always appears in the plan.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    b = max(1, math.ceil(math.log2(k)))
    rng = np.random.default_rng(seed)
    verts = rng.choice(2**b, size=k, replace=False)
    vertex_of = {label: int(verts[label - 1]) for label in range(1, k + 1)}
    label_of = {v: label for label, v in vertex_of.items()}

    pairs = set()
    for label in range(1, k + 1):
        u = vertex_of[label]
        neighbors = [label_of[u ^ (1 << t)] for t in range(b) if (u ^ (1 << t)) in label_of]
        if neighbors:
            for other in neighbors:
                pairs.add((label, other))
                pairs.add((other, label))
        else:
            # isolated vertex: nearest occupied vertex by Hamming distance
            best = None
            for other, w in vertex_of.items():
                if other == label:
                    continue
                dist = (u ^ w).bit_count()
                if best is None or dist < best[0] or (dist == best[0] and other < best[1]):
                    best = (dist, other)
            pairs.add((label, best[1]))
            pairs.add((best[1], label))
    return PairPlan(pairs=tuple(sorted(pairs)), k=k, strategy="hypercube", seed=seed)


def _pair_from_index(m: int, k: int) -> tuple[int, int]:
    # ordered pairs (i, j != i) enumerated lexicographically
    i = m // (k - 1) + 1
    r = m % (k - 1)
    j = r + 1 if r + 1 < i else r + 2
    return i, j


def random_pairs(k: int, count: int, seed: int, stratified: bool = False) -> PairPlan:
    """Sample `count` distinct ordered pairs.

    Uniform mode draws without replacement from all k(k-1) ordered pairs.
    Stratified mode balances how often every class appears as numerator and
    as denominator (each within +-1 of count/k): it takes whole rounds of a
    randomly relabeled cyclic-shift schedule, where one round uses each class
    exactly once on both sides, plus a random partial round for the
    remainder.  Any count in 1..k(k-1) is feasible.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    limit = k * (k - 1)
    if not 1 <= count <= limit:
        feasible = min(max(count, 1), limit)
        raise ValueError(
            f"count {count} out of range 1..{limit}; closest feasible count is {feasible}"
        )
    rng = np.random.default_rng(seed)
    if not stratified:
        idx = rng.choice(limit, size=count, replace=False)
        pairs = sorted(_pair_from_index(int(m), k) for m in idx)
        return PairPlan(pairs=tuple(pairs), k=k, strategy="random", seed=seed)

    relabel = rng.permutation(k) + 1
    shifts = rng.permutation(k - 1) + 1
    full, rem = divmod(count, k)
    pairs = []
    for s in shifts[:full]:
        for pos in range(k):
            pairs.append((int(relabel[pos]), int(relabel[(pos + s) % k])))
    if rem:
        s = shifts[full]
        for pos in rng.choice(k, size=rem, replace=False):
            pairs.append((int(relabel[pos]), int(relabel[(int(pos) + s) % k])))
    return PairPlan(pairs=tuple(sorted(pairs)), k=k, strategy="stratified", seed=seed)


def save_plan(plan: PairPlan, path) -> None:
    """Write one ``i j`` line per ordered pair."""
    with open(path, "w") as fh:
        for i, j in plan.pairs:
            fh.write(f"{i} {j}\n")


def load_plan(path, k: int | None = None) -> PairPlan:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j'")
            pairs.append((int(parts[0]), int(parts[1])))
    if not pairs:
        raise ValueError(f"{path}: empty pair plan")
    if k is None:
        k = max(max(i, j) for i, j in pairs)
    return PairPlan(pairs=tuple(pairs), k=k, strategy="file")
