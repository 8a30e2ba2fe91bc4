"""Cosine scoring over unit-norm embeddings.

A score is the exact dot product correctly rounded to a float. Each
elementwise product is split into two floats that sum to it exactly, and
``math.fsum`` rounds the total once. That makes a score independent of
summation order and of the BLAS build, so equal similarities compare equal
and id tie-breaks are stable. A fast matrix product is used only to discard
rows that cannot reach a floor.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

# Bound on |approximate - exact| for unit vectors; far above float64 error
# for any practical dimension.
_APPROX_SLACK = 1e-9


_SPLITTER = 134217729.0  # 2**27 + 1


def _split(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def exact_products(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(p, e)`` with ``p + e == a * b`` exactly, elementwise (Dekker)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def exact_dot(a: Sequence[float], b: Sequence[float]) -> float:
    p, e = exact_products(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return math.fsum(p.tolist() + e.tolist())


def score_matrix(
    matrix: np.ndarray, query: np.ndarray, floor: float | None = None
) -> list[tuple[int, float]]:
    """``(row, score)`` for every row, or only rows scoring at least ``floor``."""
    if matrix.shape[0] == 0:
        return []
    if floor is None:
        rows = np.arange(matrix.shape[0])
    else:
        rows = np.flatnonzero(matrix @ query >= floor - _APPROX_SLACK)
        if rows.size == 0:
            return []
    p, e = exact_products(matrix[rows], query[np.newaxis, :])
    out = [(int(r), math.fsum(pr + er)) for r, pr, er in zip(rows.tolist(), p.tolist(), e.tolist())]
    if floor is not None:
        out = [(r, s) for r, s in out if s >= floor]
    return out


def rank(scored: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score, ascending id on ties."""
    return sorted(scored, key=lambda item: (-item[1], item[0]))
