"""Finite-alphabet correlation tables ("boxes") and no-signalling checks.

Alice and Bob always have binary outcomes. A bipartite box stores
``probs[x, y, a, b] = P(a, b | x, y)``; a tripartite box adds Eve's outcome
as a trailing axis, ``probs[x, y, a, b, e]``, with Eve holding a single
fixed measurement.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NS_TOL = 1e-9
CLAMP_TOL = 1e-12

BOX_FORMAT = "nsbox"
BOX_FORMAT_VERSION = 1


class BoxShapeError(ValueError):
    """Table dimensions disagree with the declared settings/outcomes."""


class BoxFormatError(ValueError):
    """A serialized box could not be parsed."""


def _freeze(probs: np.ndarray) -> np.ndarray:
    probs = np.array(probs, dtype=float)
    # tiny negatives are rounding noise; anything larger is left for validate_ns
    probs[(probs < 0) & (probs >= -CLAMP_TOL)] = 0.0
    probs.setflags(write=False)
    return probs


@dataclass(frozen=True, eq=False)
class BipartiteBox:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 4 or probs.shape[2:] != (2, 2):
            raise BoxShapeError(f"bipartite table must have shape (Na, Nb, 2, 2), got {probs.shape}")
        if probs.shape[0] < 1 or probs.shape[1] < 1:
            raise BoxShapeError("setting counts must be positive")
        object.__setattr__(self, "probs", _freeze(probs))

    @property
    def num_settings_a(self) -> int:
        return self.probs.shape[0]

    @property
    def num_settings_b(self) -> int:
        return self.probs.shape[1]

    @property
    def N(self) -> int:
        if self.num_settings_a != self.num_settings_b:
            raise BoxShapeError("box has different setting counts for Alice and Bob")
        return self.num_settings_a

    def p_anticorrelated(self, x: int, y: int) -> float:
        return float(self.probs[x, y, 0, 1] + self.probs[x, y, 1, 0])

    def __eq__(self, other):
        if not isinstance(other, BipartiteBox):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.array_equal(self.probs, other.probs))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TripartiteBox:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 5 or probs.shape[2:4] != (2, 2):
            raise BoxShapeError(f"tripartite table must have shape (Na, Nb, 2, 2, K), got {probs.shape}")
        if min(probs.shape[0], probs.shape[1], probs.shape[4]) < 1:
            raise BoxShapeError("setting and outcome counts must be positive")
        object.__setattr__(self, "probs", _freeze(probs))

    @property
    def num_settings_a(self) -> int:
        return self.probs.shape[0]

    @property
    def num_settings_b(self) -> int:
        return self.probs.shape[1]

    @property
    def num_eve_outcomes(self) -> int:
        return self.probs.shape[4]

    @property
    def N(self) -> int:
        if self.num_settings_a != self.num_settings_b:
            raise BoxShapeError("box has different setting counts for Alice and Bob")
        return self.num_settings_a

    def __eq__(self, other):
        if not isinstance(other, TripartiteBox):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.array_equal(self.probs, other.probs))

    __hash__ = None


@dataclass(frozen=True)
class DeterministicLocalBox:
    """Outcomes fixed by each party's own setting: ``a = assignment_a[x]``."""

    assignment_a: tuple[int, ...]
    assignment_b: tuple[int, ...]

    def __post_init__(self):
        for name in ("assignment_a", "assignment_b"):
            values = tuple(int(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(v not in (0, 1) for v in values):
                raise ValueError(f"{name} entries must be 0 or 1")
            object.__setattr__(self, name, values)
        if len(self.assignment_a) != len(self.assignment_b):
            raise ValueError("assignments must have the same length")

    @property
    def N(self) -> int:
        return len(self.assignment_a)

    def to_box(self) -> BipartiteBox:
        return deterministic_box(self.assignment_a, self.assignment_b)


@dataclass(frozen=True)
class Violation:
    family: str
    indices: dict
    residual: float

    def __str__(self):
        where = ", ".join(f"{k}={v}" for k, v in self.indices.items())
        return f"{self.family}[{where}]: residual {self.residual:.3e}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        # truthy when something is wrong, like a non-empty list
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def families(self) -> set[str]:
        return {v.family for v in self.violations}

    def max_residual(self) -> float:
        return max((v.residual for v in self.violations), default=0.0)


def _check_common(probs, outcome_axes, tol, out):
    neg = np.argwhere(probs < -tol)
    for idx in neg:
        out.append(Violation("positivity", {"index": tuple(int(i) for i in idx)}, float(-probs[tuple(idx)])))
    totals = probs.sum(axis=outcome_axes)
    for x, y in zip(*np.nonzero(np.abs(totals - 1.0) > tol)):
        out.append(Violation("normalization", {"x": int(x), "y": int(y)}, float(abs(totals[x, y] - 1.0))))


def _marginal_spread(marginal, setting_axis):
    """Largest deviation of a marginal from its value at setting 0, per fixed index."""
    ref = np.take(marginal, [0], axis=setting_axis)
    return np.abs(marginal - ref)


def _signalling(out, family, marginal, setting_axis, names, tol):
    spread = _marginal_spread(marginal, setting_axis)
    # one violation per fixed index, reporting the worst alternative setting
    worst = spread.max(axis=setting_axis)
    for idx in np.argwhere(worst > tol):
        labels = [n for i, n in enumerate(names) if i != setting_axis]
        out.append(Violation(family, dict(zip(labels, (int(i) for i in idx))), float(worst[tuple(idx)])))


def validate_ns(box: BipartiteBox | TripartiteBox, tol: float = NS_TOL) -> ValidationReport:
    """Check positivity, normalization and every no-signalling marginal.

    Returns an empty report when the box is a valid no-signalling box.
    """
    out: list[Violation] = []
    probs = box.probs
    if isinstance(box, BipartiteBox):
        _check_common(probs, (2, 3), tol, out)
        # Bob's marginal P(b|x,y), axes (x, y, b); must not depend on x
        _signalling(out, "b_marginal_depends_on_x", probs.sum(axis=2), 0, ("x", "y", "b"), tol)
        _signalling(out, "a_marginal_depends_on_y", probs.sum(axis=3), 1, ("x", "y", "a"), tol)
    elif isinstance(box, TripartiteBox):
        _check_common(probs, (2, 3, 4), tol, out)
        ae = probs.sum(axis=3)  # (x, y, a, e)
        be = probs.sum(axis=2)  # (x, y, b, e)
        _signalling(out, "ae_marginal_depends_on_y", ae, 1, ("x", "y", "a", "e"), tol)
        _signalling(out, "be_marginal_depends_on_x", be, 0, ("x", "y", "b", "e"), tol)
        _signalling(out, "b_marginal_depends_on_x", be.sum(axis=3), 0, ("x", "y", "b"), tol)
        _signalling(out, "a_marginal_depends_on_y", ae.sum(axis=3), 1, ("x", "y", "a"), tol)
        e = probs.sum(axis=(2, 3))  # (x, y, e)
        flat = e.reshape(-1, e.shape[-1])
        worst = np.abs(flat - flat[0]).max(axis=0)
        for k in np.nonzero(worst > tol)[0]:
            out.append(Violation("e_marginal_depends_on_xy", {"e": int(k)}, float(worst[k])))
    else:
        raise TypeError(f"not a box: {type(box).__name__}")
    return ValidationReport(tuple(out))


def deterministic_box(assignment_a: Sequence[int], assignment_b: Sequence[int]) -> BipartiteBox:
    assignment_a = [int(v) for v in assignment_a]
    assignment_b = [int(v) for v in assignment_b]
    if not assignment_a or len(assignment_a) != len(assignment_b):
        raise ValueError("assignments must be non-empty and of equal length")
    if any(v not in (0, 1) for v in assignment_a + assignment_b):
        raise ValueError("assignment entries must be 0 or 1")
    n = len(assignment_a)
    probs = np.zeros((n, n, 2, 2))
    for x, y in itertools.product(range(n), repeat=2):
        probs[x, y, assignment_a[x], assignment_b[y]] = 1.0
    return BipartiteBox(probs)


def all_deterministic_boxes(N: int):
    """Yield every local deterministic box with N settings per party (4**N of them)."""
    for a in itertools.product((0, 1), repeat=N):
        for b in itertools.product((0, 1), repeat=N):
            yield DeterministicLocalBox(a, b)


def uniform_box(N: int) -> BipartiteBox:
    return BipartiteBox(np.full((N, N, 2, 2), 0.25))


def mix(boxes: Sequence[BipartiteBox], weights: Sequence[float], tol: float = NS_TOL) -> BipartiteBox:
    """Convex combination of boxes sharing one shape."""
    if len(boxes) == 0 or len(boxes) != len(weights):
        raise ValueError("need one weight per box and at least one box")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    shape = boxes[0].probs.shape
    if any(b.probs.shape != shape for b in boxes):
        raise BoxShapeError("cannot mix boxes of different shapes")
    stacked = np.stack([b.probs for b in boxes])
    return type(boxes[0])(np.tensordot(w, stacked, axes=1))


def ab_marginal(box: TripartiteBox) -> BipartiteBox:
    return BipartiteBox(box.probs.sum(axis=4))


def product_with_eve(box: BipartiteBox, eve_dist: Sequence[float] = (1.0,)) -> TripartiteBox:
    """Tripartite box in which Eve's outcome is independent of everything."""
    r = np.asarray(eve_dist, dtype=float)
    return TripartiteBox(box.probs[..., None] * r)


# -- serialization -----------------------------------------------------------


def box_to_dict(box: BipartiteBox | TripartiteBox) -> dict:
    if isinstance(box, TripartiteBox):
        parties, settings = 3, [box.num_settings_a, box.num_settings_b, 1]
        outcomes = [2, 2, box.num_eve_outcomes]
    else:
        parties, settings, outcomes = 2, [box.num_settings_a, box.num_settings_b], [2, 2]
    return {
        "format": BOX_FORMAT,
        "version": BOX_FORMAT_VERSION,
        "parties": parties,
        "settings": settings,
        "outcomes": outcomes,
        "probs": box.probs.tolist(),
    }


def box_from_dict(data: dict) -> BipartiteBox | TripartiteBox:
    try:
        parties = data["parties"]
        settings = list(data["settings"])
        outcomes = list(data["outcomes"])
        raw = data["probs"]
    except (KeyError, TypeError) as exc:
        raise BoxFormatError(f"missing or malformed field: {exc}") from None
    if data.get("format", BOX_FORMAT) != BOX_FORMAT:
        raise BoxFormatError(f"unknown format {data.get('format')!r}")
    if parties == 2:
        if len(settings) != 2 or outcomes != [2, 2]:
            raise BoxFormatError("bipartite box needs two setting counts and outcomes [2, 2]")
        expected = (settings[0], settings[1], 2, 2)
    elif parties == 3:
        if len(settings) != 3 or settings[2] != 1 or len(outcomes) != 3 or outcomes[:2] != [2, 2]:
            raise BoxFormatError("tripartite box needs settings [Na, Nb, 1] and outcomes [2, 2, K]")
        expected = (settings[0], settings[1], 2, 2, outcomes[2])
    else:
        raise BoxFormatError(f"parties must be 2 or 3, got {parties!r}")
    try:
        probs = np.array(raw, dtype=float)
    except (ValueError, TypeError) as exc:
        raise BoxFormatError(f"probs is not a rectangular numeric array: {exc}") from None
    if probs.shape != expected:
        raise BoxFormatError(f"probs has shape {probs.shape}, declared {expected}")
    return BipartiteBox(probs) if parties == 2 else TripartiteBox(probs)


def dumps_box(box) -> str:
    return json.dumps(box_to_dict(box), indent=1)


def loads_box(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BoxFormatError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise BoxFormatError("top level must be an object")
    return box_from_dict(data)


def save_box(box, path) -> None:
    Path(path).write_text(dumps_box(box) + "\n")


def load_box(path):
    return loads_box(Path(path).read_text())
