"""One-bit key distribution run: sampling, abort tests, secret bit, event class.

A run shares ``n = M*N**2`` pairs. Both parties pick settings uniformly from
0..N-1, then:

* abort (step 4) when fewer than ``2*M*N`` pairs have neighbouring or
  identical settings;
* keep one such pair secret, chosen uniformly, and announce all others;
* abort (step 6) if any announced qualifying pair fails the anticorrelation
  test, reading Bob's outcome reversed on wrap-around pairs;
* otherwise Alice's bit is her secret outcome and Bob's is the opposite of his
  (again in the test's reading).

Every run is also assigned one of four events from the qualifying count ``m``
and the number of qualifying pairs that pass the test, ``#C``: E0 ``m < 2MN``,
E1 ``#C < m - 1``, E2 ``#C = m - 1``, E3 ``#C = m``.

Monte Carlo batches draw their randomness from ``SeedSequence(seed,
spawn_key=(chunk,))`` with a fixed chunk size, so results depend on the seed
only and not on how many workers ran them.
"""

from __future__ import annotations

import enum
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np

from .bell import pair_geometry

CHUNK_SIZE = 2000


class Verdict(str, enum.Enum):
    ABORTED_STEP4 = "aborted_step4"
    ABORTED_STEP6 = "aborted_step6"
    PASSED = "passed"


class Event(str, enum.Enum):
    E0 = "E0"
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"


EVENTS = tuple(Event)


@dataclass(frozen=True)
class ProtocolParams:
    N: int
    M: int
    seed: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")

    @property
    def n(self) -> int:
        return self.M * self.N**2

    @property
    def threshold(self) -> int:
        return 2 * self.M * self.N

    @property
    def expected_qualifying(self) -> float:
        return self.n * qualifying_fraction(self.N)

    def to_dict(self) -> dict:
        return {"N": self.N, "M": self.M, "n": self.n, "threshold": self.threshold, "seed": self.seed}


def qualifying_fraction(N: int) -> Fraction:
    """Probability that two uniform settings are neighbouring or identical (3/N for N >= 3)."""
    s = np.arange(N)
    qualifying, _ = pair_geometry(s[:, None], s[None, :], N)
    return Fraction(int(qualifying.sum()), N * N)


@dataclass(frozen=True)
class PairRecord:
    index: int
    x: int
    y: int
    a: int
    b: int
    neighbouring_or_identical: bool
    reversed: bool
    announced: bool
    e: int | None = None


@dataclass(frozen=True, eq=False)
class Transcript:
    params: ProtocolParams
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray | None
    qualifying: np.ndarray
    reversed: np.ndarray
    announced: np.ndarray
    verdict: Verdict
    event_class: Event
    m: int
    anticorrelated_count: int
    secret_index: int | None = None
    alice_bit: int | None = None
    bob_bit: int | None = None
    eve_guess: int | None = None
    source_kind: str = ""

    @property
    def records(self) -> list[PairRecord]:
        return [
            PairRecord(
                i,
                int(self.x[i]),
                int(self.y[i]),
                int(self.a[i]),
                int(self.b[i]),
                bool(self.qualifying[i]),
                bool(self.reversed[i]),
                bool(self.announced[i]),
                None if self.e is None else int(self.e[i]),
            )
            for i in range(self.x.size)
        ]

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASSED

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "source": self.source_kind,
            "verdict": self.verdict.value,
            "event_class": self.event_class.value,
            "m": self.m,
            "anticorrelated_count": self.anticorrelated_count,
            "secret_index": self.secret_index,
            "alice_bit": self.alice_bit,
            "bob_bit": self.bob_bit,
            "eve_guess": self.eve_guess,
            "pairs": {
                "x": self.x.tolist(),
                "y": self.y.tolist(),
                "a": self.a.tolist(),
                "b": self.b.tolist(),
                "e": None if self.e is None else self.e.tolist(),
                "announced": self.announced.astype(int).tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Transcript":
        p = data["params"]
        params = ProtocolParams(p["N"], p["M"], p.get("seed"))
        pairs = data["pairs"]
        x, y = np.array(pairs["x"], dtype=int), np.array(pairs["y"], dtype=int)
        qualifying, reversed_ = pair_geometry(x, y, params.N)
        return cls(
            params=params,
            x=x,
            y=y,
            a=np.array(pairs["a"], dtype=int),
            b=np.array(pairs["b"], dtype=int),
            e=None if pairs.get("e") is None else np.array(pairs["e"], dtype=int),
            qualifying=qualifying,
            reversed=reversed_,
            announced=np.array(pairs["announced"], dtype=bool),
            verdict=Verdict(data["verdict"]),
            event_class=Event(data["event_class"]),
            m=data["m"],
            anticorrelated_count=data["anticorrelated_count"],
            secret_index=data.get("secret_index"),
            alice_bit=data.get("alice_bit"),
            bob_bit=data.get("bob_bit"),
            eve_guess=data.get("eve_guess"),
            source_kind=data.get("source", ""),
        )


@dataclass(frozen=True, eq=False)
class _Batch:
    """Arrays for ``runs`` protocol executions, one row per run."""

    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    e: np.ndarray | None
    qualifying: np.ndarray
    reversed: np.ndarray
    m: np.ndarray
    anti_count: np.ndarray
    secret: np.ndarray
    step4_ok: np.ndarray
    passed: np.ndarray
    event: np.ndarray
    alice_bit: np.ndarray
    bob_bit: np.ndarray
    eve_guess: np.ndarray | None

    @property
    def runs(self) -> int:
        return self.x.shape[0]


def _check_source(params: ProtocolParams, source) -> None:
    if source.N != params.N:
        raise ValueError(f"source has N = {source.N}, protocol expects N = {params.N}")


def _simulate_batch(params: ProtocolParams, source, runs: int, rng: np.random.Generator) -> _Batch:
    n, N = params.n, params.N
    x = rng.integers(0, N, size=(runs, n))
    y = rng.integers(0, N, size=(runs, n))
    a, b, e = source.sample(x, y, rng)
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)

    qualifying, reversed_ = pair_geometry(x, y, N)
    b_read = b ^ reversed_
    anti = qualifying & (a != b_read)
    m = qualifying.sum(axis=1)
    anti_count = anti.sum(axis=1)
    step4_ok = m >= params.threshold

    # secret pair: uniform among qualifying pairs (drawn for every run so the
    # rng stream does not depend on outcomes)
    pick = rng.integers(0, np.maximum(m, 1))
    rank = np.cumsum(qualifying, axis=1) - 1
    is_secret = qualifying & (rank == pick[:, None])
    secret = np.where(m > 0, np.argmax(is_secret, axis=1), -1)
    rows = np.arange(runs)
    col = np.maximum(secret, 0)
    secret_anti = anti[rows, col] & (secret >= 0)

    failures = m - anti_count
    passed = step4_ok & ((failures == 0) | ((failures == 1) & ~secret_anti))

    event = np.full(runs, 1, dtype=np.int64)
    event[failures == 1] = 2
    event[failures == 0] = 3
    event[~step4_ok] = 0

    alice_bit = a[rows, col]
    bob_bit = 1 - b_read[rows, col]

    eve_guess = None
    if e is not None:
        guesses = source.eve_guess(np.asarray(e)[rows, col], x[rows, col])
        if guesses is not None:
            eve_guess = np.asarray(guesses, dtype=np.int64)

    return _Batch(
        x, y, a, b, None if e is None else np.asarray(e, dtype=np.int64),
        qualifying, reversed_, m, anti_count, secret, step4_ok, passed, event,
        alice_bit, bob_bit, eve_guess,
    )


def _transcript(params: ProtocolParams, batch: _Batch, r: int, kind: str) -> Transcript:
    step4_ok = bool(batch.step4_ok[r])
    secret = int(batch.secret[r]) if step4_ok else None
    announced = np.zeros(params.n, dtype=bool)
    if step4_ok:
        announced[:] = True
        announced[secret] = False
    if not step4_ok:
        verdict = Verdict.ABORTED_STEP4
    elif batch.passed[r]:
        verdict = Verdict.PASSED
    else:
        verdict = Verdict.ABORTED_STEP6
    passed = verdict is Verdict.PASSED
    return Transcript(
        params=params,
        x=batch.x[r].copy(),
        y=batch.y[r].copy(),
        a=batch.a[r].copy(),
        b=batch.b[r].copy(),
        e=None if batch.e is None else batch.e[r].copy(),
        qualifying=batch.qualifying[r].copy(),
        reversed=batch.reversed[r].copy(),
        announced=announced,
        verdict=verdict,
        event_class=EVENTS[int(batch.event[r])],
        m=int(batch.m[r]),
        anticorrelated_count=int(batch.anti_count[r]),
        secret_index=secret,
        alice_bit=int(batch.alice_bit[r]) if passed else None,
        bob_bit=int(batch.bob_bit[r]) if passed else None,
        eve_guess=int(batch.eve_guess[r]) if passed and batch.eve_guess is not None else None,
        source_kind=kind,
    )


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def run_protocol(params: ProtocolParams, source, rng=None) -> Transcript:
    """Execute the protocol once. ``rng`` may be a Generator or a seed."""
    _check_source(params, source)
    if rng is None:
        rng = params.seed
    batch = _simulate_batch(params, source, 1, _as_rng(rng))
    return _transcript(params, batch, 0, getattr(source, "kind", ""))


def classify_event(transcript: Transcript) -> Event:
    """Recompute the event class from the pair records alone."""
    p = transcript.params
    b_read = transcript.b ^ transcript.reversed
    anti = transcript.qualifying & (transcript.a != b_read)
    m = int(transcript.qualifying.sum())
    c = int(anti.sum())
    if m < p.threshold:
        return Event.E0
    if c == m:
        return Event.E3
    if c == m - 1:
        return Event.E2
    return Event.E1


# -- Monte Carlo -------------------------------------------------------------


def _binomial_se(k: int, n: int) -> float:
    if n == 0:
        return float("nan")
    p = k / n
    return math.sqrt(p * (1.0 - p) / n)


@dataclass
class RunStats:
    runs: int = 0
    pass_count: int = 0
    abort4_count: int = 0
    abort6_count: int = 0
    event_counts: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    event_pass_counts: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    key_agreement_count: int = 0
    eve_guess_correct: int | None = None

    def __add__(self, other: "RunStats") -> "RunStats":
        if self.eve_guess_correct is None and other.eve_guess_correct is None:
            eve = None
        else:
            eve = (self.eve_guess_correct or 0) + (other.eve_guess_correct or 0)
        return RunStats(
            self.runs + other.runs,
            self.pass_count + other.pass_count,
            self.abort4_count + other.abort4_count,
            self.abort6_count + other.abort6_count,
            [i + j for i, j in zip(self.event_counts, other.event_counts)],
            [i + j for i, j in zip(self.event_pass_counts, other.event_pass_counts)],
            self.key_agreement_count + other.key_agreement_count,
            eve,
        )

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.event_counts, dtype=float) / self.runs

    @property
    def p_pass(self) -> float:
        return self.pass_count / self.runs

    @property
    def p_pass_se(self) -> float:
        return _binomial_se(self.pass_count, self.runs)

    @property
    def p_agree_given_pass(self) -> float:
        return self.key_agreement_count / self.pass_count if self.pass_count else float("nan")

    @property
    def p_agree_given_pass_se(self) -> float:
        return _binomial_se(self.key_agreement_count, self.pass_count)

    def p_pass_given(self, event: Event | int) -> float:
        k = EVENTS.index(Event(event)) if not isinstance(event, int) else event
        total = self.event_counts[k]
        return self.event_pass_counts[k] / total if total else float("nan")

    def p_pass_given_se(self, event: Event | int) -> float:
        k = EVENTS.index(Event(event)) if not isinstance(event, int) else event
        return _binomial_se(self.event_pass_counts[k], self.event_counts[k])

    @property
    def p_eve_correct_given_pass(self) -> float | None:
        if self.eve_guess_correct is None or not self.pass_count:
            return None
        return self.eve_guess_correct / self.pass_count

    def to_dict(self) -> dict:
        q = self.q
        return {
            "runs": self.runs,
            "pass_count": self.pass_count,
            "abort_step4_count": self.abort4_count,
            "abort_step6_count": self.abort6_count,
            "event_counts": dict(zip((e.value for e in EVENTS), self.event_counts)),
            "event_pass_counts": dict(zip((e.value for e in EVENTS), self.event_pass_counts)),
            "q": {e.value: float(q[i]) for i, e in enumerate(EVENTS)},
            "q_se": {e.value: _binomial_se(self.event_counts[i], self.runs) for i, e in enumerate(EVENTS)},
            "p_pass": self.p_pass,
            "p_pass_se": self.p_pass_se,
            "key_agreement_count": self.key_agreement_count,
            "p_agree_given_pass": _none_if_nan(self.p_agree_given_pass),
            "p_agree_given_pass_se": _none_if_nan(self.p_agree_given_pass_se),
            "p_pass_given_E2": _none_if_nan(self.p_pass_given(2)),
            "p_pass_given_E2_se": _none_if_nan(self.p_pass_given_se(2)),
            "eve_guess_correct": self.eve_guess_correct,
            "p_eve_correct_given_pass": self.p_eve_correct_given_pass,
        }


def _none_if_nan(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def _stats_of(batch: _Batch) -> RunStats:
    passed = batch.passed
    agree = passed & (batch.alice_bit == batch.bob_bit)
    eve = None
    if batch.eve_guess is not None:
        eve = int((passed & (batch.eve_guess == batch.alice_bit)).sum())
    return RunStats(
        runs=batch.runs,
        pass_count=int(passed.sum()),
        abort4_count=int((~batch.step4_ok).sum()),
        abort6_count=int((batch.step4_ok & ~passed).sum()),
        event_counts=[int(np.sum(batch.event == k)) for k in range(4)],
        event_pass_counts=[int(np.sum(passed & (batch.event == k))) for k in range(4)],
        key_agreement_count=int(agree.sum()),
        eve_guess_correct=eve,
    )


def _chunks(runs: int, chunk_size: int):
    for start in range(0, runs, chunk_size):
        yield start // chunk_size, min(chunk_size, runs - start)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _chunk_stats(args) -> RunStats:
    params, source, seed, chunk, size = args
    return _stats_of(_simulate_batch(params, source, size, _chunk_rng(seed, chunk)))


def monte_carlo(
    params: ProtocolParams,
    source,
    runs: int,
    seed: int | None = None,
    jobs: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> RunStats:
    """Aggregate ``runs`` independent protocol executions.

    The result is a function of (params, source, runs, seed, chunk_size) only;
    ``jobs`` changes wall time, never the numbers.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    _check_source(params, source)
    seed = params.seed if seed is None else seed
    if seed is None:
        raise ValueError("monte_carlo needs a seed")
    tasks = [(params, source, seed, c, size) for c, size in _chunks(runs, chunk_size)]
    if jobs == 0:
        jobs = os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            parts = list(pool.map(_chunk_stats, tasks))
    else:
        parts = [_chunk_stats(t) for t in tasks]
    total = RunStats()
    for part in parts:
        total = total + part
    return total


def iter_transcripts(
    params: ProtocolParams, source, runs: int, seed: int, chunk_size: int = CHUNK_SIZE
) -> Iterator[Transcript]:
    """The individual runs behind ``monte_carlo`` with the same seed, in order."""
    _check_source(params, source)
    kind = getattr(source, "kind", "")
    for c, size in _chunks(runs, chunk_size):
        batch = _simulate_batch(params, source, size, _chunk_rng(seed, c))
        for r in range(size):
            yield _transcript(params, batch, r, kind)


# -- analytic companions -----------------------------------------------------


def step4_abort_probability(N: int, M: int) -> float:
    """Exact P(Bin(M*N^2, q) < 2MN), q the qualifying fraction."""
    params = ProtocolParams(N, M)
    q = qualifying_fraction(N)
    n = params.n
    total = sum(math.comb(n, k) * q**k * (1 - q) ** (n - k) for k in range(params.threshold))
    return float(total)


def lemma_bound(N: int, M: int, epsilon: float) -> float:
    """Lower bound on P(secret bits agree | pass) for sources with P(pass) > epsilon."""
    return 1.0 - 1.0 / (2 * M * N * epsilon)


@dataclass(frozen=True)
class LemmaCheck:
    applicable: bool
    p_pass: float
    p_agree: float
    sigma: float
    bound: float
    holds: bool

    def to_dict(self) -> dict:
        return {k: _none_if_nan(v) for k, v in self.__dict__.items()}


def lemma_check(stats: RunStats, params: ProtocolParams, epsilon: float, n_sigma: float = 5.0) -> LemmaCheck:
    bound = lemma_bound(params.N, params.M, epsilon)
    applicable = stats.p_pass > epsilon
    p_agree = stats.p_agree_given_pass
    sigma = stats.p_agree_given_pass_se
    holds = (not applicable) or p_agree > bound - n_sigma * sigma
    return LemmaCheck(applicable, stats.p_pass, p_agree, sigma, bound, bool(holds))


@dataclass(frozen=True)
class ParameterChoice:
    N: int
    M: int
    epsilon: float
    lemma_bound: float
    delta: float
    delta_prime: float
    attack_bound: float
    secure: bool
    m_not_small: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def choose_parameters(N: int, delta: float = 0.5, delta_prime: float = 0.5) -> ParameterChoice:
    """M = ceil(N^(3/4)), epsilon = N^(-1/4), with both sides of the security comparison.

    ``m_not_small`` is set when M >= N, where the M << N simplification fails.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    M = _ceil_root34(N)
    eps = N**-0.25
    lemma = lemma_bound(N, M, eps)
    attack = 1.0 - delta * delta_prime / (3 * N)
    return ParameterChoice(N, M, eps, lemma, delta, delta_prime, attack, lemma > attack, M >= N)


def _ceil_root34(N: int) -> int:
    # exact integer ceil(N^(3/4)) = smallest M with M^4 >= N^3
    target = N**3
    M = max(1, math.ceil(N**0.75) - 1)
    while M**4 < target:
        M += 1
    while M > 1 and (M - 1) ** 4 >= target:
        M -= 1
    return M
