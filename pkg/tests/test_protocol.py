import json
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import binom

from conftest import exact_event_probs
from nsqkd.boxes import DeterministicLocalBox, TripartiteBox, deterministic_box, mix, uniform_box
from nsqkd.protocol import (
    Event,
    ProtocolParams,
    RunStats,
    Transcript,
    Verdict,
    choose_parameters,
    classify_event,
    iter_transcripts,
    lemma_bound,
    lemma_check,
    monte_carlo,
    qualifying_fraction,
    run_protocol,
    step4_abort_probability,
)
from nsqkd.strategies import (
    BoxSource,
    DeterministicLocal,
    ExplicitTripartite,
    PlantedCorrelation,
    chained_pr_box,
    honest_singlet,
    mixture_of_sources,
)


def noisy_pr(N, w=0.9):
    return mix([chained_pr_box(N), uniform_box(N)], [w, 1 - w])


def test_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(1, 4)
    with pytest.raises(ValueError):
        ProtocolParams(3, 0)
    p = ProtocolParams(3, 4)
    assert (p.n, p.threshold) == (36, 24)


def test_qualifying_fraction():
    assert qualifying_fraction(2) == 1
    assert qualifying_fraction(3) == 1
    for N in range(4, 12):
        assert qualifying_fraction(N) == Fraction(3, N)


def test_source_dimension_mismatch():
    with pytest.raises(ValueError):
        run_protocol(ProtocolParams(4, 2), honest_singlet(3), 0)


@pytest.mark.parametrize("source_factory", [honest_singlet, lambda N: BoxSource(noisy_pr(N)), PlantedCorrelation])
@pytest.mark.parametrize("N,M", [(3, 4), (4, 1), (5, 2)])
def test_transcript_consistency(source_factory, N, M):
    params = ProtocolParams(N, M)
    for t in iter_transcripts(params, source_factory(N), 60, seed=5):
        assert classify_event(t) is t.event_class
        assert t.m == int(t.qualifying.sum())
        if t.event_class in (Event.E0, Event.E1):
            assert t.verdict is not Verdict.PASSED
        if t.event_class is Event.E3:
            assert t.verdict is Verdict.PASSED
        if t.event_class is Event.E0:
            assert t.verdict is Verdict.ABORTED_STEP4 and t.secret_index is None
            assert not t.announced.any()
            continue
        s = t.secret_index
        assert t.qualifying[s] and not t.announced[s]
        assert t.announced.sum() == params.n - 1
        if t.passed:
            assert t.alice_bit == t.a[s]
            assert t.bob_bit == 1 - (t.b[s] ^ int(t.reversed[s]))
        else:
            assert t.alice_bit is None


def test_run_protocol_is_seeded():
    params = ProtocolParams(3, 4)
    first = run_protocol(params, honest_singlet(3), 123)
    second = run_protocol(params, honest_singlet(3), np.random.default_rng(123))
    assert first.to_json() == second.to_json()


def test_transcript_round_trip():
    params = ProtocolParams(4, 2)
    for t in iter_transcripts(params, BoxSource(noisy_pr(4)), 20, seed=8):
        back = Transcript.from_dict(json.loads(t.to_json()))
        assert back.to_json() == t.to_json()
        assert classify_event(back) is t.event_class
    records = t.records
    assert len(records) == params.n and records[3].x == t.x[3]


def test_chained_pr_always_passes_and_agrees():
    stats = monte_carlo(ProtocolParams(3, 4), BoxSource(chained_pr_box(3)), 4000, seed=1)
    assert stats.pass_count == stats.runs == stats.key_agreement_count
    assert stats.event_counts == [0, 0, 0, stats.runs]


def test_identical_outcomes_abort():
    # a = b = 0 fails every non-wrapped qualifying pair
    source = DeterministicLocal(DeterministicLocalBox((0, 0, 0), (0, 0, 0)))
    stats = monte_carlo(ProtocolParams(3, 4), source, 4000, seed=2)
    assert stats.pass_count == 0
    assert stats.event_counts[3] == stats.event_counts[2] == 0


def test_constant_anticorrelated_box_fails_wrapped_pairs():
    """a = 0, b = 1 reads as correlated on the two wrapped settings pairs at N = 3."""
    t = run_protocol(ProtocolParams(3, 4), DeterministicLocal(DeterministicLocalBox((0, 0, 0), (1, 1, 1))), 4)
    wrapped = t.reversed & t.qualifying
    anti = t.a != (t.b ^ t.reversed)
    assert np.array_equal(anti[t.qualifying], ~wrapped[t.qualifying])


@pytest.mark.parametrize(
    "name,box,N,M",
    [
        ("noisy-pr", noisy_pr(3), 3, 4),
        ("noisy-pr", noisy_pr(4, 0.95), 4, 1),
        ("det-anti", deterministic_box([0, 0, 0, 0], [1, 1, 1, 1]), 4, 1),
        ("singlet", None, 3, 1),
    ],
)
def test_monte_carlo_matches_exact_oracle(name, box, N, M):
    source = honest_singlet(N) if box is None else BoxSource(box)
    box = source.box
    exact = exact_event_probs(box, N, M)
    runs = 40_000
    stats = monte_carlo(ProtocolParams(N, M), source, runs, seed=99)
    for k in range(4):
        p = exact["q"][k]
        sigma = math.sqrt(max(p * (1 - p), 1e-12) / runs)
        assert abs(stats.q[k] - p) <= 5 * sigma + 1e-12, (k, stats.q[k], p)
    p = exact["p_pass"]
    assert abs(stats.p_pass - p) <= 5 * math.sqrt(p * (1 - p) / runs) + 1e-12
    if stats.pass_count > 50:
        agree = exact["p_agree_and_pass"] / exact["p_pass"]
        se = math.sqrt(agree * (1 - agree) / stats.pass_count)
        assert abs(stats.p_agree_given_pass - agree) <= 5 * se + 1e-12


def test_honest_n3_exact_values():
    exact = exact_event_probs(honest_singlet(3).box, 3, 4)
    assert exact["q"][0] == 0.0
    assert exact["p_pass"] == pytest.approx((5 / 6) ** 35, rel=1e-12)
    assert exact["p_agree_and_pass"] / exact["p_pass"] == pytest.approx(5 / 6, rel=1e-12)


def test_jobs_do_not_change_results():
    params = ProtocolParams(3, 4)
    one = monte_carlo(params, BoxSource(noisy_pr(3)), 5000, seed=42, jobs=1)
    two = monte_carlo(params, BoxSource(noisy_pr(3)), 5000, seed=42, jobs=2)
    assert one.to_dict() == two.to_dict()


def test_iter_transcripts_reproduces_monte_carlo():
    params = ProtocolParams(4, 1)
    source = BoxSource(noisy_pr(4))
    stats = monte_carlo(params, source, 2500, seed=3, chunk_size=1000)
    ts = list(iter_transcripts(params, source, 2500, seed=3, chunk_size=1000))
    assert sum(t.passed for t in ts) == stats.pass_count
    counts = [sum(t.event_class is e for t in ts) for e in Event]
    assert counts == stats.event_counts
    agree = sum(t.passed and t.alice_bit == t.bob_bit for t in ts)
    assert agree == stats.key_agreement_count


def test_monte_carlo_needs_seed_and_runs():
    with pytest.raises(ValueError):
        monte_carlo(ProtocolParams(3, 1), honest_singlet(3), 10)
    with pytest.raises(ValueError):
        monte_carlo(ProtocolParams(3, 1), honest_singlet(3), 0, seed=1)


def test_planted_source_is_always_e2():
    N, M = 3, 4
    stats = monte_carlo(ProtocolParams(N, M), PlantedCorrelation(N), 20_000, seed=4)
    assert stats.event_counts == [0, 0, stats.runs, 0]
    # m = 36 qualifying pairs every run at N = 3, so the pass rate is 1/36
    p = 1 / 36
    assert abs(stats.p_pass_given(Event.E2) - p) <= 5 * math.sqrt(p * (1 - p) / stats.runs)
    assert stats.key_agreement_count == 0


def test_run_mixture():
    N = 3
    source = mixture_of_sources([BoxSource(chained_pr_box(N)), PlantedCorrelation(N)], [0.75, 0.25])
    stats = monte_carlo(ProtocolParams(N, 4), source, 20_000, seed=6)
    p3 = stats.q[3]
    assert abs(p3 - 0.75) <= 5 * math.sqrt(0.75 * 0.25 / stats.runs)
    assert stats.q[2] == pytest.approx(1 - p3)


def test_eve_guess_recorded_for_tripartite_source():
    # Eve holds the hidden variable of a two-component local model; e equals Alice's constant outcome
    comps = [deterministic_box([0, 0, 0], [1, 1, 1]), deterministic_box([1, 1, 1], [0, 0, 0])]
    probs = np.stack([0.5 * comps[0].probs, 0.5 * comps[1].probs], axis=-1)
    source = ExplicitTripartite(TripartiteBox(probs))
    stats = monte_carlo(ProtocolParams(3, 1), source, 3000, seed=7)
    assert stats.pass_count > 0
    assert stats.eve_guess_correct == stats.pass_count


def test_run_stats_addition_and_dict():
    a = RunStats(10, 2, 1, 7, [1, 7, 1, 1], [0, 0, 1, 1], 1, None)
    b = RunStats(5, 1, 0, 4, [0, 4, 0, 1], [0, 0, 0, 1], 1, 1)
    c = a + b
    assert c.runs == 15 and c.event_counts == [1, 11, 1, 2] and c.eve_guess_correct == 1
    d = RunStats(3, 0, 3, 0, [3, 0, 0, 0], [0, 0, 0, 0], 0).to_dict()
    assert d["p_agree_given_pass"] is None
    json.dumps(d)


def test_step4_tail_matches_scipy():
    for N in range(3, 9):
        for M in range(1, 6):
            n, thr = M * N * N, 2 * M * N
            expected = binom.cdf(thr - 1, n, min(3 / N, 1.0))
            assert step4_abort_probability(N, M) == pytest.approx(expected, rel=1e-9, abs=1e-300)


def test_lemma_bound_and_check():
    assert lemma_bound(3, 4, 0.3) == pytest.approx(1 - 1 / 7.2)
    params = ProtocolParams(3, 4)
    stats = RunStats(1000, 500, 0, 500, [0, 500, 0, 500], [0, 0, 0, 500], 500)
    check = lemma_check(stats, params, 0.3)
    assert check.applicable and check.holds
    bad = RunStats(1000, 500, 0, 500, [0, 500, 0, 500], [0, 0, 0, 500], 250)
    assert not lemma_check(bad, params, 0.3).holds
    rare = RunStats(1000, 10, 0, 990, [0, 990, 0, 10], [0, 0, 0, 10], 0)
    assert lemma_check(rare, params, 0.3).holds and not lemma_check(rare, params, 0.3).applicable


@pytest.mark.parametrize("N,M,eps", [(16, 8, 0.5), (256, 64, 0.25), (81, 27, 1 / 3), (2, 2, 2**-0.25)])
def test_choose_parameters(N, M, eps):
    choice = choose_parameters(N)
    assert choice.M == M
    assert choice.epsilon == pytest.approx(eps, rel=1e-15)
    assert choice.m_not_small == (M >= N)


def test_choose_parameters_is_exact_ceiling():
    for N in range(2, 3000):
        M = choose_parameters(N).M
        assert M**4 >= N**3 > (M - 1) ** 4
