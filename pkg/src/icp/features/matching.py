"""Nearest-neighbour descriptor matching with Lowe's ratio test."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionMismatch


def match_descriptors(
    desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.8
) -> list[tuple[int, int, float]]:
    """Match rows of desc_a to rows of desc_b.

    Returns (index_a, index_b, distance) triples, sorted by ascending
    distance (ties broken by index_a then index_b). A match is kept when the
    best distance is below ratio * second-best distance; with a single
    candidate the second-best is treated as infinite, so a lone neighbour
    always passes the ratio test.
    """
    a = np.asarray(desc_a, dtype=np.float32)
    b = np.asarray(desc_b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionMismatch("descriptor arrays must be 2-d")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return []
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(
            f"descriptor widths differ: {a.shape[1]} vs {b.shape[1]}"
        )

    # |a-b|^2 = |a|^2 - 2ab + |b|^2, in float64 to keep distances stable
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    d2 = (
        np.sum(a64 * a64, axis=1)[:, None]
        - 2.0 * (a64 @ b64.T)
        + np.sum(b64 * b64, axis=1)[None, :]
    )
    np.maximum(d2, 0.0, out=d2)

    matches: list[tuple[int, int, float]] = []
    single = b.shape[0] == 1
    for i in range(a.shape[0]):
        row = d2[i]
        j = int(np.argmin(row))
        best = float(row[j])
        if single:
            matches.append((i, j, math.sqrt(best)))
            continue
        second = float(np.min(np.delete(row, j)))
        if second <= 0.0:
            continue  # duplicate candidates: ambiguous, reject
        if best < (ratio * ratio) * second:
            matches.append((i, j, math.sqrt(best)))
    matches.sort(key=lambda m: (m[2], m[0], m[1]))
    return matches
