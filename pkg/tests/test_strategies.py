import json

import numpy as np
import pytest

from nsqkd.bell import local_bound, pair_geometry, t_exact
from nsqkd.boxes import BipartiteBox, deterministic_box, dumps_box, product_with_eve, uniform_box, validate_ns
from nsqkd.protocol import ProtocolParams, monte_carlo
from nsqkd.quantum import singlet_box
from nsqkd.strategies import (
    BoxSource,
    LhvMixture,
    PlantedCorrelation,
    RunMixture,
    StrategyError,
    builtin_box,
    chained_pr_box,
    honest_singlet,
    lhv_from_dict,
    parse_deterministic,
    random_lhv_box,
)


def empirical_box(source, N, draws, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, N, draws)
    y = rng.integers(0, N, draws)
    a, b, _ = source.sample(x, y, rng)
    counts = np.zeros((N, N, 2, 2))
    np.add.at(counts, (x, y, a, b), 1)
    return counts / counts.sum(axis=(2, 3), keepdims=True)


@pytest.mark.parametrize("N", [3, 4, 5, 8])
def test_chained_pr_box(N):
    box = chained_pr_box(N)
    assert validate_ns(box).ok
    assert t_exact(box).value == pytest.approx(1.0)


def test_parse_deterministic():
    d = parse_deterministic("a=010,b=101", 3)
    assert d.assignment_a == (0, 1, 0) and d.assignment_b == (1, 0, 1)
    for bad in ("a=01,b=101", "a=012,b=101", "a=010", "x=010,b=101", "a010,b101"):
        with pytest.raises(StrategyError):
            parse_deterministic(bad, 3)


def test_builtin_box():
    assert builtin_box("singlet", 3) == singlet_box(3)
    assert builtin_box("uniform", 2) == uniform_box(2)
    assert builtin_box("det:a=01,b=10", 2) == deterministic_box([0, 1], [1, 0])
    with pytest.raises(StrategyError):
        builtin_box("other", 3)


def test_box_source_rejects_signalling_box():
    probs = np.zeros((2, 2, 2, 2))
    for x in range(2):
        probs[x, :, 0, x] = 1.0
    with pytest.raises(StrategyError):
        BoxSource(BipartiteBox(probs))


@pytest.mark.parametrize("box", [singlet_box(3), chained_pr_box(4), random_lhv_box(3, np.random.default_rng(1))])
def test_sampling_reproduces_box(box):
    N = box.N
    emp = empirical_box(BoxSource(box), N, 400_000, 2)
    # 5 sigma for a cell probability with about 400000 / N^2 draws per setting pair
    tol = 5 * np.sqrt(0.25 / (400_000 / N**2))
    assert np.max(np.abs(emp - box.probs)) < tol


def test_random_lhv_boxes_are_local():
    rng = np.random.default_rng(3)
    for N in (2, 3, 5):
        for _ in range(10):
            box = random_lhv_box(N, rng)
            assert validate_ns(box).ok
            assert t_exact(box).value <= local_bound(N) + 1e-12


def test_lhv_mixture_eve_knows_component():
    comps = (deterministic_box([0, 1, 1], [1, 0, 0]), deterministic_box([1, 1, 0], [0, 0, 1]))
    mixture = LhvMixture(comps, (0.3, 0.7))
    rng = np.random.default_rng(0)
    x = rng.integers(0, 3, 5000)
    y = rng.integers(0, 3, 5000)
    a, _, e = mixture.sample(x, y, rng)
    assert np.array_equal(mixture.eve_guess(e, x), a)
    induced = mixture.induced_box()
    assert validate_ns(induced).ok
    blind = LhvMixture(comps, (0.3, 0.7), eve_knows_component=False)
    assert blind.sample(x, y, rng)[2] is None
    assert blind.induced_box().num_eve_outcomes == 1


def test_lhv_mixture_validation():
    d = deterministic_box([0, 1], [1, 0])
    with pytest.raises(StrategyError):
        LhvMixture((d,), (0.5,))
    with pytest.raises(StrategyError):
        LhvMixture((d, deterministic_box([0, 1, 0], [1, 0, 1])), (0.5, 0.5))


def test_lhv_from_dict():
    data = {
        "components": [{"a": "000", "b": "111"}, json.loads(dumps_box(uniform_box(3)))],
        "weights": [0.9, 0.1],
    }
    m = lhv_from_dict(data, 3)
    assert len(m.components) == 2 and m.eve_knows_component
    with pytest.raises(StrategyError):
        lhv_from_dict({"components": []}, 3)
    with pytest.raises(StrategyError):
        lhv_from_dict(data, 4)
    tri = json.loads(dumps_box(product_with_eve(uniform_box(3))))
    with pytest.raises(StrategyError):
        lhv_from_dict({"components": [tri], "weights": [1.0]}, 3)


@pytest.mark.parametrize("N", [3, 4, 6])
def test_planted_correlation_has_one_failure(N):
    rng = np.random.default_rng(N)
    x = rng.integers(0, N, (200, 5 * N * N))
    y = rng.integers(0, N, (200, 5 * N * N))
    a, b, _ = PlantedCorrelation(N).sample(x, y, rng)
    qualifying, reversed_ = pair_geometry(x, y, N)
    failures = (qualifying & (a == (b ^ reversed_))).sum(axis=1)
    assert np.all(failures == 1)


def test_run_mixture_validation():
    with pytest.raises(StrategyError):
        RunMixture((honest_singlet(3), honest_singlet(4)), (0.5, 0.5))
    with pytest.raises(StrategyError):
        RunMixture((honest_singlet(3),), (0.5,))


def test_run_mixture_picks_whole_runs():
    source = RunMixture((BoxSource(chained_pr_box(3)), PlantedCorrelation(3)), (0.5, 0.5))
    stats = monte_carlo(ProtocolParams(3, 2), source, 2000, seed=0)
    # every run is either all-pass (E3) or one-failure (E2): never a blend
    assert stats.event_counts[0] == stats.event_counts[1] == 0
