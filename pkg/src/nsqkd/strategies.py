"""Sources for protocol runs, i.e. what Eve hands to Alice and Bob.

Every source implements ``sample(x, y, rng) -> (a, b, e)`` on whole batches of
runs: ``x`` and ``y`` are integer arrays of shape (runs, pairs) and ``e`` is
Eve's record per pair, or ``None`` when Eve keeps nothing. Sources that model
an eavesdropper also provide ``eve_guess(e, x)``, Eve's guess of Alice's
outcome given her record and the announced setting.

The i.i.d. kinds (one box reused for every pair) expose the tripartite box
they induce. ``PlantedCorrelation`` and ``RunMixture`` act on a run as a whole
and have no per-pair box; they exist to exercise the abort logic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bell import pair_geometry
from .boxes import (
    NS_TOL,
    BipartiteBox,
    DeterministicLocalBox,
    TripartiteBox,
    ab_marginal,
    deterministic_box,
    product_with_eve,
    uniform_box,
    validate_ns,
)
from .quantum import singlet_box

HONEST = "honest_singlet"
DETERMINISTIC = "deterministic_local"
LHV_MIXTURE = "lhv_mixture"
TRIPARTITE = "explicit_tripartite"
BOX = "box"
PLANTED = "planted_correlation"
RUN_MIXTURE = "run_mixture"


class StrategyError(ValueError):
    pass


def _sample_table(table: np.ndarray, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a flat outcome index per pair from ``table[x, y, :]`` (last axis sums to 1)."""
    cdf = np.cumsum(table, axis=-1)
    u = rng.random(x.shape)
    k = (u[..., None] >= cdf[x, y]).sum(axis=-1)
    return np.minimum(k, table.shape[-1] - 1)


class _IidSource:
    N: int
    kind: str

    def eve_guess(self, e, x):
        return None

    def induced_box(self) -> TripartiteBox:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class BoxSource(_IidSource):
    """Every pair drawn independently from one bipartite box; Eve keeps nothing."""

    box: BipartiteBox
    label: str = BOX

    def __post_init__(self):
        report = validate_ns(self.box)
        if report:
            raise StrategyError(f"source box is not a valid no-signalling box: {report.violations[0]}")

    @property
    def N(self) -> int:
        return self.box.N

    @property
    def kind(self) -> str:
        return self.label

    def sample(self, x, y, rng):
        k = _sample_table(self.box.probs.reshape(self.N, self.N, 4), x, y, rng)
        return k >> 1, k & 1, None

    def induced_box(self) -> TripartiteBox:
        return product_with_eve(self.box)


def honest_singlet(N: int) -> BoxSource:
    return BoxSource(singlet_box(N), HONEST)


@dataclass(frozen=True)
class DeterministicLocal(_IidSource):
    """Eve prepares every pair with the same fixed local assignment and knows it."""

    assignment: DeterministicLocalBox
    kind = DETERMINISTIC

    @property
    def N(self) -> int:
        return self.assignment.N

    def sample(self, x, y, rng):
        a = np.asarray(self.assignment.assignment_a)[x]
        b = np.asarray(self.assignment.assignment_b)[y]
        return a, b, np.zeros_like(a)

    def eve_guess(self, e, x):
        return np.asarray(self.assignment.assignment_a)[x]

    def induced_box(self) -> TripartiteBox:
        return product_with_eve(self.assignment.to_box())


@dataclass(frozen=True, eq=False)
class LhvMixture(_IidSource):
    """Each pair drawn from a randomly chosen component box.

    With ``eve_knows_component`` Eve records the component index and guesses
    Alice's more likely outcome under that component.
    """

    components: tuple[BipartiteBox, ...]
    weights: tuple[float, ...]
    eve_knows_component: bool = True
    kind = LHV_MIXTURE

    def __post_init__(self):
        comps = tuple(c.to_box() if isinstance(c, DeterministicLocalBox) else c for c in self.components)
        w = tuple(float(v) for v in self.weights)
        if not comps or len(comps) != len(w):
            raise StrategyError("need one weight per component")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > NS_TOL:
            raise StrategyError("weights must be nonnegative and sum to 1")
        if len({c.probs.shape for c in comps}) != 1:
            raise StrategyError("components must share one shape")
        for c in comps:
            if validate_ns(c):
                raise StrategyError("every component must be a valid no-signalling box")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.components[0].N

    def sample(self, x, y, rng):
        comp = rng.choice(len(self.weights), size=x.shape, p=np.asarray(self.weights) / sum(self.weights))
        table = np.stack([c.probs.reshape(self.N, self.N, 4) for c in self.components])
        # fold the component index into Alice's setting axis for a single lookup
        flat = table.reshape(len(self.components) * self.N, self.N, 4)
        k = _sample_table(flat, comp * self.N + x, y, rng)
        return k >> 1, k & 1, (comp if self.eve_knows_component else None)

    def eve_guess(self, e, x):
        if e is None:
            return None
        # Alice's marginal does not depend on y, so read it at y = 0
        p_a1 = np.array([c.probs[:, 0, 1, :].sum(axis=-1) for c in self.components])
        return (p_a1[e, x] > 0.5).astype(int)

    def induced_box(self) -> TripartiteBox:
        stacked = np.stack([w * c.probs for c, w in zip(self.components, self.weights)], axis=-1)
        if self.eve_knows_component:
            return TripartiteBox(stacked)
        return TripartiteBox(stacked.sum(axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class ExplicitTripartite(_IidSource):
    """Pairs drawn from a tripartite box; Eve's guess of Alice's bit is ``e mod 2``."""

    box: TripartiteBox
    kind = TRIPARTITE

    def __post_init__(self):
        report = validate_ns(self.box)
        if report:
            raise StrategyError(f"tripartite box is not no-signalling: {report.violations[0]}")

    @property
    def N(self) -> int:
        return self.box.N

    def sample(self, x, y, rng):
        k_e = self.box.num_eve_outcomes
        k = _sample_table(self.box.probs.reshape(self.N, self.N, 4 * k_e), x, y, rng)
        ab, e = np.divmod(k, k_e)
        return ab >> 1, ab & 1, e

    def eve_guess(self, e, x):
        return None if e is None else np.asarray(e) % 2

    def induced_box(self) -> TripartiteBox:
        return self.box

    def ab_box(self) -> BipartiteBox:
        return ab_marginal(self.box)


@dataclass(frozen=True)
class PlantedCorrelation:
    """Run-level fixture with exactly one correlated qualifying pair per run.

    Alice always outputs 0 and Bob answers so that every qualifying pair passes
    the anticorrelation test, except one qualifying pair chosen uniformly at
    random in each run. Bob's answers depend on Alice's setting, so this is
    not a no-signalling box; it only drives the protocol's combinatorics.
    """

    N: int
    kind = PLANTED

    def sample(self, x, y, rng):
        qualifying, reversed_ = pair_geometry(x, y, self.N)
        m = qualifying.sum(axis=-1)
        pick = rng.integers(0, np.maximum(m, 1))
        rank = np.cumsum(qualifying, axis=-1) - 1
        planted = qualifying & (rank == pick[..., None])
        a = np.zeros_like(x)
        # Bob's bit as read in the test convention: 1 means anticorrelated with a = 0
        b_read = np.where(planted, 0, 1)
        return a, b_read ^ reversed_.astype(int), None

    def eve_guess(self, e, x):
        return None


@dataclass(frozen=True, eq=False)
class RunMixture:
    """Pick one whole-run source per run with the given weights."""

    sources: tuple
    weights: tuple[float, ...]
    kind = RUN_MIXTURE

    def __post_init__(self):
        if not self.sources or len(self.sources) != len(self.weights):
            raise StrategyError("need one weight per source")
        if len({s.N for s in self.sources}) != 1:
            raise StrategyError("sources must share N")
        w = tuple(float(v) for v in self.weights)
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > NS_TOL:
            raise StrategyError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.sources[0].N

    def sample(self, x, y, rng):
        runs = x.shape[0]
        which = rng.choice(len(self.sources), size=runs, p=np.asarray(self.weights) / sum(self.weights))
        a = np.zeros_like(x)
        b = np.zeros_like(x)
        for k, source in enumerate(self.sources):
            rows = np.nonzero(which == k)[0]
            if rows.size:
                a[rows], b[rows], _ = source.sample(x[rows], y[rows], rng)
        return a, b, None

    def eve_guess(self, e, x):
        return None


def chained_pr_box(N: int) -> BipartiteBox:
    """No-signalling box that passes every chained-anticorrelation test (t = 1 for N >= 3).

    Outcomes are uniform; on qualifying pairs Bob's bit is fixed by Alice's so
    that the pair reads as anticorrelated, and otherwise the two are independent.
    """
    x = np.arange(N)
    qualifying, reversed_ = pair_geometry(x[:, None], x[None, :], N)
    probs = np.full((N, N, 2, 2), 0.25)
    anti = qualifying & ~reversed_
    same = qualifying & reversed_
    probs[anti] = [[0.0, 0.5], [0.5, 0.0]]
    probs[same] = [[0.5, 0.0], [0.0, 0.5]]
    return BipartiteBox(probs)


def parse_bits(text: str, N: int, name: str) -> tuple[int, ...]:
    text = text.strip()
    if len(text) != N or set(text) - {"0", "1"}:
        raise StrategyError(f"{name} must be a string of {N} binary digits, got {text!r}")
    return tuple(int(ch) for ch in text)


def parse_deterministic(spec: str, N: int) -> DeterministicLocalBox:
    """Parse ``a=010,b=101`` (the part after ``det:``)."""
    fields = {}
    for part in spec.split(","):
        key, sep, value = part.partition("=")
        if not sep or key.strip() not in ("a", "b"):
            raise StrategyError(f"expected 'a=...,b=...', got {spec!r}")
        fields[key.strip()] = value
    if set(fields) != {"a", "b"}:
        raise StrategyError(f"expected both a= and b= in {spec!r}")
    return DeterministicLocalBox(parse_bits(fields["a"], N, "a"), parse_bits(fields["b"], N, "b"))


def lhv_from_dict(data: dict, N: int) -> LhvMixture:
    """Mixture file: ``{"components": [{"a": "010", "b": "101"} | box-dict, ...], "weights": [...]}``."""
    from .boxes import box_from_dict

    comps = []
    try:
        raw_components = data["components"]
        weights = data["weights"]
    except (KeyError, TypeError):
        raise StrategyError("mixture needs 'components' and 'weights'") from None
    for item in raw_components:
        if isinstance(item, dict) and "a" in item and "b" in item:
            comps.append(deterministic_box(parse_bits(item["a"], N, "a"), parse_bits(item["b"], N, "b")))
        else:
            box = box_from_dict(item)
            if not isinstance(box, BipartiteBox):
                raise StrategyError("mixture components must be bipartite")
            comps.append(box)
    if any(c.N != N for c in comps):
        raise StrategyError(f"mixture components must have N = {N}")
    return LhvMixture(tuple(comps), tuple(weights), bool(data.get("eve_knows_component", True)))


def builtin_box(name: str, N: int) -> BipartiteBox:
    """Named bipartite boxes: singlet, uniform, chained-pr, det:a=...,b=..."""
    if name in ("singlet", "honest"):
        return singlet_box(N)
    if name == "uniform":
        return uniform_box(N)
    if name == "chained-pr":
        return chained_pr_box(N)
    if name.startswith("det:"):
        return parse_deterministic(name[4:], N).to_box()
    raise StrategyError(f"unknown box {name!r}")


def random_lhv_box(N: int, rng: np.random.Generator, num_components: int = 4) -> BipartiteBox:
    """Random convex mixture of local deterministic boxes."""
    comps = []
    for _ in range(num_components):
        a = rng.integers(0, 2, N)
        b = rng.integers(0, 2, N)
        comps.append(deterministic_box(a, b).probs)
    w = rng.dirichlet(np.ones(num_components))
    return BipartiteBox(np.tensordot(w, np.stack(comps), axes=1))


def mixture_of_sources(sources: Sequence, weights: Sequence[float]) -> RunMixture:
    return RunMixture(tuple(sources), tuple(weights))
