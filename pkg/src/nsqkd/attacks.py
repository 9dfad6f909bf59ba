"""Optimal no-signalling eavesdropping on a fixed Alice-Bob box.

Given the correlations Alice and Bob observe, Eve's best i.i.d. attack is a
tripartite no-signalling box whose AB marginal equals them, chosen to maximize
her probability of guessing Alice's (or Bob's) outcome. That is a linear
program over the table P(a, b, e | x, y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bell import local_bound, pair_geometry, t_exact
from .boxes import BipartiteBox, TripartiteBox, ab_marginal, validate_ns
from .lp import LpProblem, LpSolution, Status, solve

FIXED = "fixed_settings"
AVERAGED = "averaged_over_qualifying_settings"
MAX_AVERAGED_N = 5


class AttackError(RuntimeError):
    """The attack LP failed to produce a certified optimum."""

    def __init__(self, message: str, solution: LpSolution | None = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class AttackBound:
    N: int
    t_target: float
    p_guess_lp: float
    p_guess_analytic: float
    guess_context: str
    guess_party: str
    settings: tuple[int, int] | None
    eve_outcomes: int
    solver_iterations: int
    duality_gap: float
    bell_violation: bool

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "t_target": self.t_target,
            "p_guess_lp": self.p_guess_lp,
            "p_guess_analytic": self.p_guess_analytic,
            "guess_context": self.guess_context,
            "guess_party": self.guess_party,
            "settings": None if self.settings is None else list(self.settings),
            "eve_outcomes": self.eve_outcomes,
            "solver_iterations": self.solver_iterations,
            "duality_gap": self.duality_gap,
            "bell_violation": self.bell_violation,
        }


def analytic_guess_bound(N: int, t: float) -> float:
    """Upper bound on Eve's guessing probability from the chained statistic.

    Per Eve outcome, t <= 1 - |2p - 1| / (3N) where p is Alice's conditional
    bias at any one setting; averaging over Eve's outcomes gives
    p_guess <= 1/2 + (3N/2)(1 - t).
    """
    if not 0.0 <= t <= 1.0 + 1e-12:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return min(1.0, 0.5 + 1.5 * N * (1.0 - min(t, 1.0)))


def _index(N: int, K: int) -> np.ndarray:
    return np.arange(N * N * 4 * K).reshape(N, N, 2, 2, K)


def extension_constraints(target: BipartiteBox, eve_outcomes: int) -> tuple[np.ndarray, np.ndarray]:
    """Equality rows: AB marginal pinned to ``target`` plus Eve-pair no-signalling.

    Normalization, Eve's own marginal and the bipartite conditions follow from
    these rows; the redundancy is removed by the solver's presolve.
    """
    N, K = target.N, eve_outcomes
    idx = _index(N, K)
    nvar = idx.size
    rows, rhs = [], []

    for x, y, a, b in np.ndindex(N, N, 2, 2):
        row = np.zeros(nvar)
        row[idx[x, y, a, b, :]] = 1.0
        rows.append(row)
        rhs.append(target.probs[x, y, a, b])

    # P(a, e | x, y) equals P(a, e | x, 0)
    for x, y, a, e in np.ndindex(N, N, 2, K):
        if y == 0:
            continue
        row = np.zeros(nvar)
        row[idx[x, y, a, :, e]] += 1.0
        row[idx[x, 0, a, :, e]] -= 1.0
        rows.append(row)
        rhs.append(0.0)

    # P(b, e | x, y) equals P(b, e | 0, y)
    for x, y, b, e in np.ndindex(N, N, 2, K):
        if x == 0:
            continue
        row = np.zeros(nvar)
        row[idx[x, y, :, b, e]] += 1.0
        row[idx[0, y, :, b, e]] -= 1.0
        rows.append(row)
        rhs.append(0.0)

    return np.array(rows), np.array(rhs)


def _guess_objective(N: int, K: int, settings, guess: str, averaged: bool) -> np.ndarray:
    idx = _index(N, K)
    c = np.zeros(idx.size)
    if averaged:
        # Eve's outcome encodes one guess per setting: bit s of e. Her marginals
        # do not depend on the other party's setting, so averaging over the
        # qualifying pairs is averaging over the guessed party's setting.
        for s in range(N):
            for e in range(K):
                g = (e >> s) & 1
                if guess == "alice":
                    c[idx[s, 0, g, :, e]] += 1.0 / N
                else:
                    c[idx[0, s, :, g, e]] += 1.0 / N
        return c
    x, y = settings
    for e in range(K):
        g = e % 2
        if guess == "alice":
            c[idx[x, y, g, :, e]] = 1.0
        else:
            c[idx[x, y, :, g, e]] = 1.0
    return c


def attack_problem(
    target: BipartiteBox,
    eve_outcomes: int = 2,
    secret_settings: tuple[int, int] = (0, 0),
    guess: str = "alice",
    averaged: bool = False,
) -> LpProblem:
    N = target.N
    if guess not in ("alice", "bob"):
        raise ValueError("guess must be 'alice' or 'bob'")
    if averaged:
        if N > MAX_AVERAGED_N:
            raise ValueError(f"averaged guessing needs 2**N Eve outcomes; supported up to N = {MAX_AVERAGED_N}")
        eve_outcomes = 2**N
    else:
        if eve_outcomes < 2:
            raise ValueError("Eve needs at least two outcomes to guess a bit")
        x, y = secret_settings
        if not (0 <= x < N and 0 <= y < N):
            raise ValueError(f"secret settings {secret_settings} out of range for N = {N}")
        qualifying, _ = pair_geometry(x, y, N)
        if not bool(qualifying):
            raise ValueError(f"secret settings {secret_settings} are not neighbouring or identical")
    a_eq, b_eq = extension_constraints(target, eve_outcomes)
    c = _guess_objective(N, eve_outcomes, secret_settings, guess, averaged)
    names = tuple(
        f"p_x{x}_y{y}_a{a}_b{b}_e{e}" for x, y, a, b, e in np.ndindex(N, N, 2, 2, eve_outcomes)
    )
    return LpProblem(c, a_eq, b_eq, names)


def optimal_ns_attack(
    target: BipartiteBox,
    eve_outcomes: int = 2,
    secret_settings: tuple[int, int] = (0, 0),
    guess: str = "alice",
    averaged: bool = False,
    method: str = "highs",
) -> tuple[TripartiteBox, AttackBound]:
    """Maximize Eve's guessing probability over no-signalling extensions of ``target``.

    Raises ``AttackError`` when the solver cannot certify an optimum; a valid
    target always admits the product extension, so infeasibility is a bug.
    """
    report = validate_ns(target)
    if report:
        raise ValueError(f"target is not a valid no-signalling box: {report.violations[0]}")
    N = target.N
    if N < 2:
        raise ValueError("N must be at least 2")
    problem = attack_problem(target, eve_outcomes, secret_settings, guess, averaged)
    K = 2**N if averaged else eve_outcomes
    sol = solve(problem, method=method)
    if sol.status is not Status.OPTIMAL:
        raise AttackError(f"attack LP {sol.status.value}: {sol.message}", sol)

    box = TripartiteBox(sol.x.reshape(N, N, 2, 2, K))
    drift = np.max(np.abs(ab_marginal(box).probs - target.probs))
    if drift > 1e-7:
        raise AttackError(f"optimal box marginal drifts from target by {drift:.2e}", sol)

    t = t_exact(target).value
    bound = AttackBound(
        N=N,
        t_target=t,
        p_guess_lp=sol.objective_value,
        p_guess_analytic=analytic_guess_bound(N, t),
        guess_context=AVERAGED if averaged else FIXED,
        guess_party=guess,
        settings=None if averaged else (int(secret_settings[0]), int(secret_settings[1])),
        eve_outcomes=K,
        solver_iterations=sol.iterations,
        duality_gap=sol.duality_gap,
        bell_violation=bool(t > local_bound(N) + 1e-12),
    )
    return box, bound


def guessing_probability(box: TripartiteBox, settings: tuple[int, int], guess: str = "alice") -> float:
    """Eve's success probability with guess ``e mod 2`` at the given settings."""
    x, y = settings
    p = box.probs[x, y]
    e = np.arange(box.num_eve_outcomes)
    g = e % 2
    if guess == "alice":
        return float(p[g, :, e].sum())
    return float(p[:, g, e].sum())


@dataclass(frozen=True)
class ConsistencyReport:
    N: int
    M: int
    epsilon: float
    delta: float
    delta_prime: float
    lemma_lower_bound: float
    attack_upper_bound: float
    security_product: float
    secure: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def consistency_check(N: int, M: int, epsilon: float, delta: float, delta_prime: float) -> ConsistencyReport:
    """Does passing the test rule out an Eve with advantage (delta, delta')?

    Passing forces t_s > 1 - 1/(2MN eps); an Eve who gets bias delta' with
    probability delta forces t_s <= 1 - delta delta'/(3N). The two clash exactly
    when 2 M eps delta delta' > 3.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    for name, v in (("epsilon", epsilon), ("delta", delta), ("delta_prime", delta_prime)):
        if not 0.0 < v <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {v}")
    product = 2 * M * epsilon * delta * delta_prime
    return ConsistencyReport(
        N,
        M,
        epsilon,
        delta,
        delta_prime,
        1.0 - 1.0 / (2 * M * N * epsilon),
        1.0 - delta * delta_prime / (3 * N),
        product,
        product > 3,
    )
