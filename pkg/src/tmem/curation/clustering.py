"""Average-linkage agglomerative clustering with an exact merge rule.

Pairwise cosine similarities are quantized to integer multiples of 2**-32.
Cluster-to-cluster linkage is then a ratio of integers (sum of member
similarities over the number of member pairs), so the best pair, ties and the
stopping test are decided exactly and do not depend on floating-point
summation order. Ties go to the pair whose smallest member ids are
lexicographically smallest.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from fractions import Fraction

import numpy as np

from tmem import errors
from tmem.models import Embedding
from tmem.similarity import exact_dot

QUANTUM_BITS = 32
_SCALE = float(2**QUANTUM_BITS)
# numpy products are within ~1e-15 of the exact dot; only values this close
# to a rounding boundary are recomputed exactly
_BOUNDARY = 1e-4


def check_threshold(threshold: float) -> float:
    if not (isinstance(threshold, (int, float)) and 0.0 < threshold <= 1.0):
        raise errors.ConfigError(f"clustering threshold must be in (0, 1], got {threshold!r}")
    return float(threshold)


def quantize(similarity: float) -> int:
    """Nearest multiple of 2**-32 (halves round up), as an integer count."""
    return math.floor(similarity * _SCALE + 0.5)


def quantized_similarities(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    """Symmetric int64 matrix of quantized pairwise dot products."""
    n = len(vectors)
    if n == 0:
        return np.zeros((0, 0), dtype=np.int64)
    m = np.asarray(vectors, dtype=np.float64)
    scaled = (m @ m.T) * _SCALE
    q = np.floor(scaled + 0.5)
    frac = scaled - np.floor(scaled)
    for i, j in zip(*np.nonzero(np.abs(frac - 0.5) < _BOUNDARY)):
        if i <= j:
            exact = quantize(exact_dot(vectors[i], vectors[j]))
            q[i, j] = q[j, i] = exact
    out = q.astype(np.int64)
    # symmetrize explicitly; BLAS does not promise q[i, j] == q[j, i]
    upper = np.triu(out, 1)
    return upper + upper.T + np.diag(np.diag(out))


def _threshold_fraction(threshold: float) -> Fraction:
    return Fraction(threshold) * 2**QUANTUM_BITS


def agglomerate(ids: Sequence[str], sims: np.ndarray, threshold: float) -> list[list[str]]:
    """Cluster ``ids`` given their quantized similarity matrix.

    Returns groups of ids, each sorted, ordered by their smallest id.
    """
    threshold = check_threshold(threshold)
    n = len(ids)
    if len(set(ids)) != n:
        raise errors.DuplicateId("clustering input has repeated ids")
    order = sorted(range(n), key=lambda i: ids[i])
    ids = [ids[i] for i in order]
    sums = sims[np.ix_(order, order)].astype(np.int64).copy()
    thr = _threshold_fraction(threshold)
    sizes = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    members: list[list[int]] = [[i] for i in range(n)]
    upper = np.triu(np.ones((n, n), dtype=bool), 1)

    while active.sum() > 1:
        live = np.outer(active, active) & upper
        avg = np.full((n, n), -np.inf)
        pairs = np.nonzero(live)
        avg[pairs] = sums[pairs] / (sizes[pairs[0]] * sizes[pairs[1]])
        best = avg.max()
        if best < float(thr) - 1.0:
            break
        # float averages are within a few ulps of the exact ratio
        slack = abs(best) * 1e-12 + 1e-6
        cand = np.argwhere(avg >= best - slack)
        exact = {(int(i), int(j)): Fraction(int(sums[i, j]), int(sizes[i] * sizes[j])) for i, j in cand}
        top = max(exact.values())
        if top < thr:
            break
        # cluster index i is its smallest member (ids are sorted), so index
        # order is id order
        i, j = min(p for p, v in exact.items() if v == top)
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        sizes[i] += sizes[j]
        active[j] = False
        members[i].extend(members[j])
        members[j] = []

    return [sorted(ids[m] for m in members[i]) for i in range(n) if active[i]]


def cluster_embeddings(items: Sequence[tuple[str, Embedding]], threshold: float) -> list[list[str]]:
    """Average-linkage clusters of ``(id, embedding)`` pairs at ``threshold``."""
    check_threshold(threshold)
    if not items:
        return []
    dims = {e.dim for _, e in items}
    if len(dims) != 1:
        raise errors.DimensionMismatch(f"mixed embedding dimensions {sorted(dims)}")
    ids = [i for i, _ in items]
    sims = quantized_similarities([e.vector for _, e in items])
    return agglomerate(ids, sims, threshold)
