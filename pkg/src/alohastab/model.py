"""System parameters and the per-slot success-probability calculus.

Queues are labelled 1..J in every public signature that talks about a queue
index or an ordering (``j``, ``eta``); arrays are 0-based as usual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

PMF_TOL = 1e-12

QueueState = tuple[int, ...]
Permutation = tuple[int, ...]


@dataclass(frozen=True)
class ArrivalDist:
    """Finite-support batch arrival law: ``((size, prob), ...)``."""

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self):
        pmf = tuple((int(k), float(q)) for k, q in self.pmf)
        if not pmf:
            raise ValueError("arrival pmf is empty")
        sizes = [k for k, _ in pmf]
        if len(set(sizes)) != len(sizes):
            raise ValueError(f"duplicate batch sizes in pmf: {sizes}")
        for k, q in pmf:
            if k < 0:
                raise ValueError(f"negative batch size {k}")
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"probability {q} outside [0, 1]")
        total = math.fsum(q for _, q in pmf)
        if abs(total - 1.0) > PMF_TOL:
            raise ValueError(f"pmf sums to {total!r}, not 1")
        object.__setattr__(self, "pmf", tuple(sorted(pmf)))

    @classmethod
    def bernoulli(cls, lam: float) -> "ArrivalDist":
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"Bernoulli rate {lam} outside [0, 1]")
        return cls(((0, 1.0 - lam), (1, lam)))

    @classmethod
    def point(cls, k: int) -> "ArrivalDist":
        return cls(((k, 1.0),))

    @property
    def mean(self) -> float:
        return math.fsum(k * q for k, q in self.pmf)

    @property
    def max_batch(self) -> int:
        return max(k for k, q in self.pmf if q > 0)

    def support(self) -> list[tuple[int, float]]:
        """Outcomes with positive probability."""
        return [(k, q) for k, q in self.pmf if q > 0]


@dataclass(frozen=True)
class SystemParams:
    p: tuple[float, ...]
    arrivals: tuple[ArrivalDist, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        arrivals = tuple(self.arrivals)
        if not p:
            raise ValueError("need at least one queue")
        if len(arrivals) != len(p):
            raise ValueError(f"{len(p)} attempt probabilities but {len(arrivals)} arrival laws")
        for j, pj in enumerate(p, 1):
            if not 0.0 < pj < 1.0:
                raise ValueError(f"attempt probability p_{j}={pj} must lie strictly inside (0, 1)")
        for a in arrivals:
            if not isinstance(a, ArrivalDist):
                raise TypeError(f"expected ArrivalDist, got {type(a).__name__}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "arrivals", arrivals)

    @classmethod
    def bernoulli(cls, p: Sequence[float], lam: Sequence[float]) -> "SystemParams":
        return cls(tuple(p), tuple(ArrivalDist.bernoulli(x) for x in lam))

    @property
    def J(self) -> int:
        return len(self.p)

    @property
    def lam(self) -> tuple[float, ...]:
        return tuple(a.mean for a in self.arrivals)

    @property
    def max_batch(self) -> int:
        return max(a.max_batch for a in self.arrivals)

    def relabel(self, eta: Permutation) -> "SystemParams":
        """Queue ``eta[i]`` of ``self`` becomes queue ``i + 1`` of the result."""
        eta = check_permutation(eta, self.J)
        return SystemParams(
            tuple(self.p[e - 1] for e in eta),
            tuple(self.arrivals[e - 1] for e in eta),
        )


def check_permutation(eta: Iterable[int], J: int) -> Permutation:
    eta = tuple(int(e) for e in eta)
    if sorted(eta) != list(range(1, J + 1)):
        raise ValueError(f"{eta} is not a permutation of 1..{J}")
    return eta


def check_state(params: SystemParams, Q: Iterable[int]) -> QueueState:
    Q = tuple(int(x) for x in Q)
    if len(Q) != params.J:
        raise ValueError(f"state has {len(Q)} coordinates, expected {params.J}")
    if any(x < 0 for x in Q):
        raise ValueError(f"negative queue length in {Q}")
    return Q


def identity(J: int) -> Permutation:
    return tuple(range(1, J + 1))


def v_probs(params: SystemParams, eta: Permutation | None = None) -> np.ndarray:
    """Position-indexed probability that nobody after position j attempts."""
    p = params.p if isinstance(params, SystemParams) else tuple(params)
    J = len(p)
    eta = identity(J) if eta is None else check_permutation(eta, J)
    v = np.ones(J)
    for j in range(J - 2, -1, -1):
        v[j] = v[j + 1] * (1.0 - p[eta[j + 1] - 1])
    return v


def u_probs(params: SystemParams, Q: QueueState) -> np.ndarray:
    """Probability that no real packet comes from queues 1..j-1."""
    Q = check_state(params, Q)
    u = np.ones(params.J)
    for j in range(1, params.J):
        u[j] = u[j - 1] * (1.0 - params.p[j - 1] * (Q[j - 1] > 0))
    return u


def busy_signature(Q: Iterable[int]) -> tuple[bool, ...]:
    return tuple(int(x) > 0 for x in Q)


def success_probs(params: SystemParams, Q: QueueState) -> np.ndarray:
    """Per-queue departure probability of the dominant system in state Q."""
    Q = check_state(params, Q)
    busy = np.array(busy_signature(Q), dtype=float)
    return u_probs(params, Q) * np.asarray(params.p) * v_probs(params) * busy


def all_signatures(J: int) -> list[tuple[int, ...]]:
    """Every 0/1 state, i.e. one representative per busy signature."""
    return list(product((0, 1), repeat=J))


def departures(busy: Sequence[bool], Y: Sequence[bool], dominant: bool) -> tuple[int, ...]:
    """Departure indicators for one slot given busy flags and attempt draws.

    Original system: a busy queue departs iff it is the only busy queue that
    attempts.  Dominant system: queue j departs iff it is busy and attempts,
    no busy queue before it attempts, and no queue after it attempts at all
    (empty queues there send dummies).
    """
    J = len(busy)
    real = [bool(Y[k]) and bool(busy[k]) for k in range(J)]
    if not dominant:
        if sum(real) != 1:
            return (0,) * J
        return tuple(int(x) for x in real)
    D = [0] * J
    for j in range(J):
        if real[j] and not any(real[:j]) and not any(Y[j + 1:]):
            D[j] = 1
    return tuple(D)


def departure_outcomes(
    params: SystemParams, busy: Sequence[bool], dominant: bool = True
) -> list[tuple[tuple[int, ...], float]]:
    """Exact law of the departure vector, by enumerating all attempt patterns."""
    return _departure_outcomes(params.p, tuple(bool(b) for b in busy), bool(dominant))


@lru_cache(maxsize=4096)
def _departure_outcomes(p, busy, dominant):
    law: dict[tuple[int, ...], float] = {}
    for Y in product((0, 1), repeat=len(p)):
        prob = 1.0
        for pk, y in zip(p, Y):
            prob *= pk if y else 1.0 - pk
        D = departures(busy, Y, dominant)
        law[D] = law.get(D, 0.0) + prob
    return sorted(law.items())
