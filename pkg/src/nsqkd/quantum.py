"""Singlet statistics in the real basis family X_r.

X_r is the basis rotated by angle r*pi/(2N); X_{r+N} holds the same vectors
with the outcome labels swapped, so any integer r is meaningful.
"""

from __future__ import annotations

import math

import numpy as np

from .boxes import BipartiteBox, mix, uniform_box


def singlet_anticorr_prob(r_a: int, r_b: int, N: int) -> float:
    """P(a != b) when the singlet is measured in X_{r_a} (Alice) and X_{r_b} (Bob).

    cos^2 has period pi, so reducing indices mod 2N changes nothing, and a
    shift by N (a quarter turn) sends cos^2 to sin^2, i.e. p -> 1 - p.
    """
    if N < 1:
        raise ValueError("N must be positive")
    d = (r_a - r_b) % (2 * N)
    return math.cos(d * math.pi / (2 * N)) ** 2


def singlet_box(N: int) -> BipartiteBox:
    """Honest-device box: singlet pairs measured in X_x and X_y, x, y in 0..N-1."""
    if N < 1:
        raise ValueError("N must be positive")
    x = np.arange(N)
    delta = (x[:, None] - x[None, :]) * np.pi / (2 * N)
    anti = np.cos(delta) ** 2 / 2
    same = np.sin(delta) ** 2 / 2
    probs = np.empty((N, N, 2, 2))
    probs[..., 0, 1] = probs[..., 1, 0] = anti
    probs[..., 0, 0] = probs[..., 1, 1] = same
    return BipartiteBox(probs)


def depolarized_singlet_box(N: int, visibility: float) -> BipartiteBox:
    """Singlet mixed with white noise. Convenience for robustness experiments only."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    return mix([singlet_box(N), uniform_box(N)], [visibility, 1.0 - visibility])


def sample_outcomes(box: BipartiteBox, x: int, y: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw one (a, b) from P(., . | x, y)."""
    cdf = np.cumsum(box.probs[x, y].ravel())
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, 3)
    return k >> 1, k & 1
