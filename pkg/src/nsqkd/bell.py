"""The chained Bell statistic t and its local and quantum reference values.

t averages P(a != b) over the 3N cells (i, c), c in {-1, 0, 1}: Alice in X_i
and Bob in X_{i+c}. Bob only ever measures X_0..X_{N-1}, so the two
wrap-around cells read his outcome reversed: X_N is X_0 and X_{-1} is
X_{N-1}, each with the labels swapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .boxes import BipartiteBox

if TYPE_CHECKING:
    from .protocol import Transcript

EXACT = "exact_from_box"
EMPIRICAL = "empirical_from_transcript"


class EmptyStatisticError(ValueError):
    """No announced neighbouring-or-identical pairs to estimate t from."""


@dataclass(frozen=True)
class Cell:
    i: int
    c: int
    x: int
    y: int
    reversed: bool


def chained_cells(N: int) -> list[Cell]:
    """The 3N (i, c) cells in the order c = -1, 0, 1, then i."""
    cells = []
    for c in (-1, 0, 1):
        for i in range(N):
            j = i + c
            cells.append(Cell(i, c, i, j % N, not 0 <= j < N))
    return cells


def pair_geometry(x, y, N: int):
    """Classify setting pairs for the protocol's test.

    Returns ``(qualifying, reversed)`` boolean arrays. A pair qualifies when its
    bases are neighbouring or identical; ``reversed`` marks the wrap-around
    pairs whose Bob outcome is read with the labels swapped. At N = 2 the pair
    (0, 1) is both a direct and a wrap-around neighbour; it is read directly.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    d = np.abs(x - y)
    qualifying = np.minimum(d, N - d) <= 1
    reversed_ = qualifying & (d > 1)
    return qualifying, reversed_


@dataclass(frozen=True)
class ChainedStatistic:
    N: int
    value: float
    source: str
    sample_count: int = 0
    stderr: float = 0.0
    per_cell_counts: tuple[int, ...] = field(default_factory=tuple)
    empty_cells: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not -1e-12 <= self.value <= 1 + 1e-12:
            raise ValueError(f"t must lie in [0, 1], got {self.value}")

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "value": self.value,
            "source": self.source,
            "sample_count": self.sample_count,
            "stderr": self.stderr,
            "per_cell_counts": list(self.per_cell_counts),
            "empty_cells": [list(c) for c in self.empty_cells],
        }


def t_value(box: BipartiteBox) -> float:
    N = box.N
    probs = box.probs
    total = 0.0
    for cell in chained_cells(N):
        p = probs[cell.x, cell.y]
        anti = p[0, 1] + p[1, 0]
        total += (1.0 - anti) if cell.reversed else anti
    return total / (3 * N)


def t_exact(box: BipartiteBox) -> ChainedStatistic:
    if box.N < 2:
        raise ValueError("the chained statistic needs N >= 2")
    value = min(max(t_value(box), 0.0), 1.0)
    return ChainedStatistic(box.N, value, EXACT)


def local_bound(N: int) -> float:
    if N < 2:
        raise ValueError("N must be at least 2")
    return 1.0 - 2.0 / (3 * N)


def quantum_value(N: int) -> float:
    """t for honest singlets: N identical cells give 1, 2N neighbours give cos^2(pi/2N)."""
    if N < 2:
        raise ValueError("N must be at least 2")
    return 1.0 - (2.0 / 3.0) * math.sin(math.pi / (2 * N)) ** 2


def has_quantum_violation(N: int) -> bool:
    # at N = 2 the two values coincide exactly
    return N >= 3


def t_from_pairs(N: int, x, y, a, b) -> ChainedStatistic:
    """Equal-weight estimate of t from announced (x, y, a, b) samples.

    Each cell's anticorrelation frequency is averaged with equal weight; cells
    without samples are dropped from the average and listed in ``empty_cells``.
    """
    x, y, a, b = (np.asarray(v, dtype=int).ravel() for v in (x, y, a, b))
    freqs, counts, empty = [], [], []
    used = np.zeros(x.shape, dtype=bool)
    for cell in chained_cells(N):
        sel = (x == cell.x) & (y == cell.y)
        n = int(sel.sum())
        counts.append(n)
        if n == 0:
            empty.append((cell.i, cell.c))
            continue
        used |= sel
        anti = a[sel] != b[sel]
        if cell.reversed:
            anti = ~anti
        freqs.append(anti.mean())
    if not freqs:
        raise EmptyStatisticError("no announced neighbouring-or-identical pairs")
    value = float(np.mean(freqs))
    n_used = int(used.sum())
    stderr = math.sqrt(value * (1.0 - value) / n_used)
    return ChainedStatistic(N, value, EMPIRICAL, n_used, stderr, tuple(counts), tuple(empty))


def t_empirical(transcript: "Transcript") -> ChainedStatistic:
    """Estimate t from the announced pairs of one protocol transcript."""
    mask = transcript.announced & transcript.qualifying
    return t_from_pairs(
        transcript.params.N,
        transcript.x[mask],
        transcript.y[mask],
        transcript.a[mask],
        transcript.b[mask],
    )
