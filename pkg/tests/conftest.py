import math

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    def record(number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number:>2}: {title}" + (f" -- {detail}" if detail else ""))
        return ok

    return record


# -- state-vector oracle -------------------------------------------------------


def basis_vectors(r, N):
    """Outcome-0 and outcome-1 vectors of X_r as real 2-vectors."""
    th = r * math.pi / (2 * N)
    return np.array([math.cos(th), math.sin(th)]), np.array([-math.sin(th), math.cos(th)])


SINGLET = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / math.sqrt(2)


def statevector_probs(r_a, r_b, N):
    """P(a, b) for the singlet measured in X_{r_a} x X_{r_b}, by projection."""
    ua, ub = basis_vectors(r_a, N), basis_vectors(r_b, N)
    out = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            amp = np.vdot(np.kron(ua[a], ub[b]).astype(complex), SINGLET)
            out[a, b] = abs(amp) ** 2
    return out


# -- exact event probabilities for i.i.d. sources -----------------------------


def per_pair_failure(box, N):
    """P(qualifying pair fails the test) and P(pair qualifies), uniform settings."""
    from nsqkd.bell import pair_geometry

    fail = 0.0
    qual = 0
    for x in range(N):
        for y in range(N):
            q, rev = pair_geometry(x, y, N)
            if not q:
                continue
            qual += 1
            anti = box.probs[x, y, 0, 1] + box.probs[x, y, 1, 0]
            fail += anti if rev else 1.0 - anti
    return fail / qual, qual / (N * N)


def exact_event_probs(box, N, M):
    """Exact q0..q3, P(pass) and P(agree and pass) for i.i.d. pairs from ``box``.

    Sums over the binomial number of qualifying pairs m; given m, failures
    among them are binomial with the conditional failure probability. A run
    passes under E3 (bits agree) or under E2 when the secret pair is the
    failing one (bits disagree).
    """
    f, pq = per_pair_failure(box, N)
    n, thr = M * N * N, 2 * M * N
    q = [0.0, 0.0, 0.0, 0.0]
    p_pass = p_agree = 0.0
    for m in range(n + 1):
        pm = math.comb(n, m) * pq**m * (1 - pq) ** (n - m)
        if pm == 0.0:
            continue
        if m < thr:
            q[0] += pm
            continue
        e3 = (1 - f) ** m
        e2 = m * f * (1 - f) ** (m - 1) if m >= 1 else 0.0
        q[3] += pm * e3
        q[2] += pm * e2
        q[1] += pm * (1 - e3 - e2)
        p_pass += pm * (e3 + e2 / m)
        p_agree += pm * e3
    return {"q": q, "p_pass": p_pass, "p_agree_and_pass": p_agree}
