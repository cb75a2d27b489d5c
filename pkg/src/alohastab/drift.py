"""Linear Lyapunov functions of the dominant system and their drifts.

The closed-form drifts are checked against brute-force expectation over the
joint law of (attempt pattern, arrival batch), which is finite because the
arrival laws have finite support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .model import (
    SystemParams,
    all_signatures,
    check_state,
    departure_outcomes,
    u_probs,
    success_probs,
    v_probs,
)

ENUM_BUDGET = 1 << 22
MAX_ENUM_J = 12
THETA_RANGE = (1e-6, 1.0 - 1e-9)


class BudgetExceeded(ValueError):
    """Raised when an exact enumeration or state space would be too large."""


@dataclass(frozen=True)
class LyapunovSpec:
    j: int
    coeffs: tuple[float, ...]

    def __call__(self, Q) -> np.ndarray | float:
        return np.asarray(Q, dtype=float) @ np.asarray(self.coeffs)


def _check_j(params: SystemParams, j: int) -> int:
    if not 1 <= j <= params.J:
        raise ValueError(f"queue index j={j} outside 1..{params.J}")
    return j


def lyapunov_spec(params: SystemParams, j: int) -> LyapunovSpec:
    """Weights of V_j: 1/v_k before j, 1/(v_j p_j) at j, zero after."""
    _check_j(params, j)
    v = v_probs(params)
    c = np.zeros(params.J)
    c[: j - 1] = 1.0 / v[: j - 1]
    c[j - 1] = 1.0 / (v[j - 1] * params.p[j - 1])
    return LyapunovSpec(j, tuple(c))


def lyapunov_value(params: SystemParams, j: int, Q) -> float:
    Q = check_state(params, Q)
    return math.fsum(c * q for c, q in zip(lyapunov_spec(params, j).coeffs, Q))


def _lam(params: SystemParams, lam) -> np.ndarray:
    lam = np.asarray(params.lam if lam is None else lam, dtype=float)
    if lam.shape != (params.J,):
        raise ValueError(f"rate vector has shape {lam.shape}, expected ({params.J},)")
    if np.any(lam < 0):
        raise ValueError("arrival rates must be nonnegative")
    return lam


def constraint_values(params: SystemParams, lam=None) -> np.ndarray:
    """Left-hand sides of the J stability conditions in the identity order."""
    lam = _lam(params, lam)
    return np.array([math.fsum(np.asarray(lyapunov_spec(params, j).coeffs) * lam)
                     for j in range(1, params.J + 1)])


def analytic_drift(params: SystemParams, lam, j: int, Q) -> float:
    """Closed-form one-step drift of V_j at Q (``lam=None`` uses the arrival means)."""
    _check_j(params, j)
    Q = check_state(params, Q)
    c = constraint_values(params, lam)[j - 1]
    if Q[j - 1] >= 1:
        return c - 1.0
    return c - (1.0 - u_probs(params, Q)[j - 1])


def dhat_expectation(params: SystemParams, Q, j: int) -> float:
    """Expected weighted departures sum_k w_k r_k(Q) with the V_j weights."""
    w = lyapunov_spec(params, j).coeffs
    r = success_probs(params, Q)
    return math.fsum(a * b for a, b in zip(w, r))


@lru_cache(maxsize=256)
def _arrival_law(arrivals) -> tuple[np.ndarray, np.ndarray]:
    supports = [a.support() for a in arrivals]
    vecs, probs = [], []
    for combo in product(*supports):
        vecs.append([k for k, _ in combo])
        probs.append(math.prod(q for _, q in combo))
    return np.array(vecs, dtype=np.int64), np.array(probs)


def enumeration_size(params: SystemParams) -> int:
    return (1 << params.J) * math.prod(len(a.support()) for a in params.arrivals)


def _check_budget(params: SystemParams, budget: int) -> None:
    if params.J > MAX_ENUM_J:
        raise BudgetExceeded(f"exact enumeration supports J <= {MAX_ENUM_J}, got J={params.J}")
    need = enumeration_size(params)
    if need > budget:
        raise BudgetExceeded(f"exact enumeration needs {need} outcomes, budget is {budget}")


def one_step_outcomes(params: SystemParams, Q, dominant: bool = True,
                      budget: int = ENUM_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """All successor states of Q with their probabilities (duplicates not merged)."""
    Q = check_state(params, Q)
    _check_budget(params, budget)
    lam_vecs, lam_probs = _arrival_law(params.arrivals)
    law = departure_outcomes(params, [q > 0 for q in Q], dominant)
    D = np.array([d for d, _ in law], dtype=np.int64)
    d_probs = np.array([pr for _, pr in law])
    nxt = np.asarray(Q, dtype=np.int64)[None, None, :] - D[:, None, :] + lam_vecs[None, :, :]
    probs = d_probs[:, None] * lam_probs[None, :]
    return nxt.reshape(-1, params.J), probs.ravel()


def exact_one_step_drift(params: SystemParams, V: Callable, Q, dominant: bool = True,
                         budget: int = ENUM_BUDGET) -> float:
    """E[V(Q')] - V(Q) by full enumeration.

    ``V`` maps an (n, J) integer array to n values (a LyapunovSpec works).
    """
    nxt, probs = one_step_outcomes(params, Q, dominant, budget)
    here = np.asarray(V(np.asarray([Q], dtype=np.int64)), dtype=float)[0]
    diffs = np.asarray(V(nxt), dtype=float) - here
    return math.fsum(probs * diffs)


def transience_drift(params: SystemParams, j: int, theta: float, Q,
                     dominant: bool = True) -> float:
    """One-step drift of Z_j = 1 - theta**V_j at Q, by enumeration."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta={theta} must lie strictly inside (0, 1)")
    Vj = lyapunov_spec(params, _check_j(params, j))
    nxt, probs = one_step_outcomes(params, Q, dominant)
    return _zdrift(Vj(np.asarray(Q, dtype=float)), Vj(nxt), probs, theta)


def _zdrift(v_here: float, v_next: np.ndarray, probs: np.ndarray, theta: float) -> float:
    # theta^a - theta^b = theta^b * expm1((a - b) log theta), accurate near theta = 1
    lt = math.log1p(theta - 1.0) if theta > 0.5 else math.log(theta)
    terms = np.exp(v_next * lt) * np.expm1((v_here - v_next) * lt)
    return math.fsum(probs * terms)


@dataclass
class ThetaSearch:
    theta: float | None
    min_drift: float
    best_theta: float
    sample_size: int
    note: str = "positivity certified on the supplied state sample only"

    def to_dict(self) -> dict:
        return {"theta": self.theta, "min_drift": self.min_drift,
                "best_theta": self.best_theta, "sample_size": self.sample_size,
                "note": self.note}


def find_theta_star(params: SystemParams, j: int, states: Sequence, tol: float = 0.0,
                    grid: int = 200, dominant: bool = True) -> ThetaSearch:
    """Search theta in (0, 1) maximising min over ``states`` of the Z_j drift.

    The search runs over x = -log10(1 - theta): a coarse grid, then
    golden-section refinement around the best grid point.
    """
    states = [check_state(params, Q) for Q in states]
    if not states:
        raise ValueError("state sample is empty")
    Vj = lyapunov_spec(params, _check_j(params, j))
    cached = []
    for Q in states:
        nxt, probs = one_step_outcomes(params, Q, dominant)
        cached.append((float(Vj(np.asarray(Q, dtype=float))), Vj(nxt), probs))

    def objective(x: float) -> float:
        theta = min(max(1.0 - 10.0 ** (-x), THETA_RANGE[0]), THETA_RANGE[1])
        return min(_zdrift(a, b, c, theta) for a, b, c in cached)

    x_lo = -math.log10(1.0 - THETA_RANGE[0])
    x_hi = -math.log10(1.0 - THETA_RANGE[1])
    xs = np.linspace(x_lo, x_hi, grid)
    vals = [objective(x) for x in xs]
    i = int(np.argmax(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    best_x, best = xs[i], vals[i]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(60):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = objective(d)
    for x, f in ((c, fc), (d, fd)):
        if f > best:
            best_x, best = x, f
    theta = min(max(1.0 - 10.0 ** (-best_x), THETA_RANGE[0]), THETA_RANGE[1])
    return ThetaSearch(theta if best > tol else None, best, theta, len(states))


@dataclass
class DriftReport:
    epsilon: list[float]
    eta_bound: list[float]
    monotone: list[bool]
    assumption22_ok: list[bool]
    details: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return (all(e > 0 for e in self.epsilon) and all(self.monotone)
                and all(self.assumption22_ok))

    def to_dict(self) -> dict:
        return {
            "epsilon": list(self.epsilon),
            "eta_bound": list(self.eta_bound),
            "monotone": list(self.monotone),
            "assumption22_ok": list(self.assumption22_ok),
            "satisfied": self.satisfied,
            "details": self.details,
        }


def signature_drifts(params: SystemParams, j: int, lam=None) -> dict[tuple[int, ...], float]:
    return {s: analytic_drift(params, lam, j, s) for s in all_signatures(params.J)}


def verify_theorem_assumptions(params: SystemParams, lam=None,
                               cross_check_cap: int | None = None) -> DriftReport:
    """Check the three drift-criterion assumptions for the identity ordering.

    Everything factors through the busy signature, so the scan is over the
    2^J representatives in {0,1}^J.  ``cross_check_cap`` additionally compares
    the closed forms against enumeration on the box {0..cap}^J.
    """
    J = params.J
    if J > MAX_ENUM_J:
        raise BudgetExceeded(f"signature scan supports J <= {MAX_ENUM_J}, got J={J}")
    lam = _lam(params, lam)
    cvals = constraint_values(params, lam)
    sigs = all_signatures(J)

    # a single slot removes at most one packet per queue, so from Q_j >= k
    # the set {Q_j = 0} is unreachable in fewer than k steps
    max_drop = [0] * J
    for s in sigs:
        for D, _ in departure_outcomes(params, s, dominant=True):
            for k in range(J):
                max_drop[k] = max(max_drop[k], D[k])

    epsilon, eta_bound, monotone, a22 = [], [], [], []
    for j in range(1, J + 1):
        d = signature_drifts(params, j, lam)
        epsilon.append(float(1.0 - cvals[j - 1]))
        eta_bound.append(float(max(d.values())))
        ok = True
        for s in sigs:
            for k in range(J):
                if s[k] == 0:
                    up = s[:k] + (1,) + s[k + 1:]
                    if d[s] < d[up] - 1e-12:
                        ok = False
        monotone.append(ok)
        a22.append(max_drop[j - 1] <= 1)

    details = {"constraint_values": [float(c) for c in cvals], "lam": [float(x) for x in lam],
               "p": list(params.p)}
    if cross_check_cap is not None:
        worst = 0.0
        for j in range(1, J + 1):
            Vj = lyapunov_spec(params, j)
            for Q in product(range(cross_check_cap + 1), repeat=J):
                worst = max(worst, abs(exact_one_step_drift(params, Vj, Q)
                                       - analytic_drift(params, None, j, Q)))
        details["cross_check_cap"] = cross_check_cap
        details["cross_check_max_error"] = worst
    return DriftReport(epsilon, eta_bound, monotone, a22, details)
