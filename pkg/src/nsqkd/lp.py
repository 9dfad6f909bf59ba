"""Dense linear programs with certified optima.

Problems are stated as: maximize ``c @ x`` subject to ``A_eq @ x = b_eq`` and
``x >= 0``. Every returned optimum carries its dual vector; ``solve`` checks
primal feasibility, dual feasibility and the duality gap itself and will not
report ``optimal`` unless all three are within tolerance.

Two engines are available. ``"highs"`` (default) hands the reduced problem to
HiGHS' dual simplex through scipy. ``"simplex"`` is a self-contained dense
tableau simplex, slower but dependency-free and fully deterministic; for the
degenerate example ``max x + y s.t. x + y = 1`` it returns the lowest-index
vertex ``x = (1, 0)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

PRIMAL_TOL = 1e-8
DUAL_TOL = 1e-8
GAP_TOL = 1e-7
RANK_TOL = 1e-10


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class LpProblem:
    objective: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        a = np.asarray(self.a_eq, dtype=float)
        b = np.asarray(self.b_eq, dtype=float).ravel()
        if a.ndim != 2:
            a = a.reshape(-1, c.size)
        if a.shape != (b.size, c.size):
            raise ValueError(f"constraint matrix {a.shape} does not match {b.size} rows x {c.size} vars")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("problem data must be finite")
        if self.names is not None and len(self.names) != c.size:
            raise ValueError("need one name per variable")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "a_eq", a)
        object.__setattr__(self, "b_eq", b)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.b_eq.size


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    dual: np.ndarray
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int = 0
    rows_removed: int = 0
    message: str = ""
    method: str = ""

    @property
    def dual_objective(self) -> float:
        return self.objective_value + self.duality_gap if np.isfinite(self.duality_gap) else float("nan")

    def diagnostics(self) -> dict:
        return {
            "status": self.status.value,
            "method": self.method,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "message": self.message,
        }


@dataclass
class _Reduced:
    a: np.ndarray
    b: np.ndarray
    rows: np.ndarray
    inconsistent: float = 0.0
    extra: dict = field(default_factory=dict)


def independent_rows(a: np.ndarray, b: np.ndarray, tol: float = RANK_TOL) -> _Reduced:
    """Drop linearly dependent equality rows via pivoted QR of A^T.

    ``inconsistent`` is the residual of the dropped right-hand sides against
    the kept rows; a large value means the system has no solution at all.
    """
    if a.shape[0] == 0:
        return _Reduced(a, b, np.arange(0))
    _, r, piv = scipy.linalg.qr(a.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > tol * max(diag[0], 1.0))) if diag.size else 0
    keep = np.sort(piv[:rank])
    a_k, b_k = a[keep], b[keep]
    dropped = np.setdiff1d(np.arange(a.shape[0]), keep)
    inconsistent = 0.0
    if dropped.size:
        # express dropped rows in terms of kept ones and compare right-hand sides
        coef, *_ = np.linalg.lstsq(a_k.T, a[dropped].T, rcond=None)
        inconsistent = float(np.max(np.abs(coef.T @ b_k - b[dropped])))
    return _Reduced(a_k, b_k, keep, inconsistent)


def _certify(problem: LpProblem, x, y_min, reduced: _Reduced):
    """Residuals for min(-c) form; ``y_min`` are duals of the kept rows."""
    c_min = -problem.objective
    primal_res = float(np.max(np.abs(problem.a_eq @ x - problem.b_eq), initial=0.0))
    primal_res = max(primal_res, float(np.max(-x, initial=0.0)))
    reduced_cost = c_min - reduced.a.T @ y_min
    dual_res = float(np.max(-reduced_cost, initial=0.0))
    gap = float(abs(c_min @ x - reduced.b @ y_min))
    return primal_res, dual_res, gap


def solve(problem: LpProblem, method: str = "highs", max_iter: int = 100_000) -> LpSolution:
    """Maximize ``objective @ x`` over ``a_eq @ x = b_eq, x >= 0``."""
    reduced = independent_rows(problem.a_eq, problem.b_eq)
    removed = problem.num_rows - reduced.rows.size
    n = problem.num_vars
    if reduced.inconsistent > PRIMAL_TOL:
        return _failure(Status.INFEASIBLE, n, f"dependent rows disagree by {reduced.inconsistent:.2e}", method, removed)

    if method == "highs":
        status, x, y_min, iters, msg = _solve_highs(problem, reduced, max_iter)
    elif method == "simplex":
        status, x, y_min, iters, msg = _solve_simplex(-problem.objective, reduced.a, reduced.b, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")

    if status is not Status.OPTIMAL:
        return _failure(status, n, msg, method, removed, iters)

    primal_res, dual_res, gap = _certify(problem, x, y_min, reduced)
    dual = np.zeros(problem.num_rows)
    # report duals for the maximization problem, in the caller's row order
    dual[reduced.rows] = -y_min
    ok = primal_res <= PRIMAL_TOL and dual_res <= DUAL_TOL and gap <= GAP_TOL
    return LpSolution(
        status=Status.OPTIMAL if ok else Status.NUMERICAL_FAILURE,
        x=x,
        objective_value=float(problem.objective @ x),
        dual=dual,
        duality_gap=gap,
        primal_residual=primal_res,
        dual_residual=dual_res,
        iterations=iters,
        rows_removed=removed,
        message=msg if ok else f"certificate failed: {msg}".strip(),
        method=method,
    )


def _failure(status, n, msg, method, removed=0, iters=0) -> LpSolution:
    nan = float("nan")
    return LpSolution(status, np.full(n, nan), nan, np.zeros(0), nan, nan, nan, iters, removed, msg, method)


def _solve_highs(problem: LpProblem, reduced: _Reduced, max_iter: int):
    res = linprog(
        -problem.objective,
        A_eq=reduced.a,
        b_eq=reduced.b,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
            "maxiter": max_iter,
            "presolve": True,
        },
    )
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return Status.INFEASIBLE, None, None, iters, res.message
    if res.status == 3:
        return Status.UNBOUNDED, None, None, iters, res.message
    if res.status != 0:
        return Status.NUMERICAL_FAILURE, None, None, iters, res.message
    x = np.maximum(np.asarray(res.x, dtype=float), 0.0)
    y = np.asarray(res.eqlin.marginals, dtype=float)
    return Status.OPTIMAL, x, y, iters, res.message


# -- dense tableau simplex ---------------------------------------------------

_PIVOT_TOL = 1e-11
_COST_TOL = 1e-10
_DEGENERATE_SWITCH = 50


def _pivot(t: np.ndarray, row: int, col: int) -> None:
    t[row] /= t[row, col]
    factor = t[:, col].copy()
    factor[row] = 0.0
    t -= np.outer(factor, t[row])


def _entering(cost: np.ndarray, allowed: np.ndarray, bland: bool) -> int:
    candidates = np.nonzero((cost < -_COST_TOL) & allowed)[0]
    if candidates.size == 0:
        return -1
    if bland:
        return int(candidates[0])
    # Dantzig's rule; argmin returns the lowest index among ties
    return int(candidates[np.argmin(cost[candidates])])


def _leaving(t: np.ndarray, col: int, basis: np.ndarray) -> int:
    column = t[:-1, col]
    rhs = t[:-1, -1]
    rows = np.nonzero(column > _PIVOT_TOL)[0]
    if rows.size == 0:
        return -1
    ratios = rhs[rows] / column[rows]
    best = ratios.min()
    ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
    # among tied rows the one whose basic variable has the lowest index leaves
    return int(ties[np.argmin(basis[ties])])


def _run_phase(t, basis, allowed, max_iter, iters):
    degenerate_run = 0
    while iters < max_iter:
        col = _entering(t[-1, :-1], allowed, degenerate_run >= _DEGENERATE_SWITCH)
        if col < 0:
            return "optimal", iters
        row = _leaving(t, col, basis)
        if row < 0:
            return "unbounded", iters
        degenerate_run = degenerate_run + 1 if t[row, -1] <= 1e-12 else 0
        _pivot(t, row, col)
        basis[row] = col
        iters += 1
    return "iteration_limit", iters


def _solve_simplex(c: np.ndarray, a: np.ndarray, b: np.ndarray, max_iter: int):
    """Two-phase tableau simplex for ``min c @ x, a @ x = b, x >= 0``.

    ``a`` must have full row rank (``solve`` presolves). Returns the primal
    vertex refined by a direct solve against the final basis, and the duals.
    """
    m, n = a.shape
    sign = np.where(b < 0, -1.0, 1.0)
    a_s, b_s = a * sign[:, None], b * sign
    # columns: n structural, m artificial, rhs
    t = np.zeros((m + 1, n + m + 1))
    t[:m, :n] = a_s
    t[:m, n : n + m] = np.eye(m)
    t[:m, -1] = b_s
    t[-1, :n] = -a_s.sum(axis=0)
    t[-1, -1] = -b_s.sum()
    basis = np.arange(n, n + m)
    allowed = np.ones(n + m, dtype=bool)

    state, iters = _run_phase(t, basis, allowed, max_iter, 0)
    if state == "iteration_limit":
        return Status.NUMERICAL_FAILURE, None, None, iters, "iteration limit in phase 1"
    if -t[-1, -1] > 1e-9:
        return Status.INFEASIBLE, None, None, iters, f"phase 1 optimum {-t[-1, -1]:.3e} > 0"

    # drive zero-valued artificials out of the basis
    for row in range(m):
        if basis[row] >= n:
            nz = np.nonzero(np.abs(t[row, :n]) > 1e-9)[0]
            if nz.size:
                _pivot(t, row, int(nz[0]))
                basis[row] = int(nz[0])
                iters += 1
    if np.any(basis >= n):
        return Status.NUMERICAL_FAILURE, None, None, iters, "artificial stuck in basis (rank-deficient rows)"

    allowed[n:] = False
    t[-1, :] = 0.0
    t[-1, :n] = c
    for row in range(m):
        t[-1] -= c[basis[row]] * t[row]
    state, iters = _run_phase(t, basis, allowed, max_iter, iters)
    if state == "unbounded":
        return Status.UNBOUNDED, None, None, iters, "objective unbounded"
    if state == "iteration_limit":
        return Status.NUMERICAL_FAILURE, None, None, iters, "iteration limit in phase 2"

    basis_matrix = a[:, basis]
    x = np.zeros(n)
    x[basis] = np.linalg.solve(basis_matrix, b)
    x = np.maximum(x, 0.0)
    y = np.linalg.solve(basis_matrix.T, c[basis])
    return Status.OPTIMAL, x, y, iters, "simplex optimum"


# -- interchange dump ----------------------------------------------------------


def _term(coef: float, name: str, first: bool) -> str:
    sign = "-" if coef < 0 else ("" if first else "+")
    return f"{sign} {abs(coef):.17g} {name}".strip()


def to_lp_format(problem: LpProblem) -> str:
    """Render the problem in CPLEX LP text format for external solvers."""
    names = problem.names or tuple(f"x{j}" for j in range(problem.num_vars))

    def expr(row):
        nz = np.nonzero(row)[0]
        if nz.size == 0:
            return f"0 {names[0]}"
        return " ".join(_term(row[j], names[j], k == 0) for k, j in enumerate(nz))

    lines = ["\\ generated by nsqkd", "Maximize", f" obj: {expr(problem.objective)}", "Subject To"]
    for i, (row, rhs) in enumerate(zip(problem.a_eq, problem.b_eq)):
        lines.append(f" c{i}: {expr(row)} = {rhs:.17g}")
    lines.append("Bounds")
    lines.extend(f" {name} >= 0" for name in names)
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(problem: LpProblem, path) -> None:
    Path(path).write_text(to_lp_format(problem))
