"""Exact calculus on finite Markov kernels.

The Aloha chain is truncated to the box {0..B}^J by dropping arrivals that
would push a queue past B.  Identities that hold for any finite chain are
checked everywhere; checks that need the untruncated dynamics are restricted
to interior states from which the cap cannot be reached within the horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .drift import (
    ENUM_BUDGET,
    BudgetExceeded,
    _arrival_law,
    _check_budget,
    constraint_values,
    lyapunov_spec,
)
from .model import SystemParams, departure_outcomes

STATE_CAP = 4096
ROW_TOL = 1e-12
LEVEL_TOL = 1e-12
IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class FiniteKernel:
    states: np.ndarray
    P: np.ndarray
    cap: int
    clip_policy: str = "clip_arrivals"
    params: SystemParams | None = None

    def __post_init__(self):
        n = len(self.states)
        if self.P.shape != (n, n):
            raise ValueError(f"matrix shape {self.P.shape} does not match {n} states")
        if np.any(self.P < 0):
            raise ValueError("negative transition probability")
        worst = np.max(np.abs(self.P.sum(axis=1) - 1.0))
        if worst > ROW_TOL:
            raise ValueError(f"rows do not sum to 1 (worst deviation {worst:.3e})")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def J(self) -> int:
        return self.states.shape[1]

    def index(self, x) -> int:
        """Row of state x; integers are taken to be row indices already."""
        if isinstance(x, (int, np.integer)):
            return int(x)
        idx = 0
        for c in x:
            if not 0 <= c <= self.cap:
                raise ValueError(f"state {tuple(x)} outside the box {{0..{self.cap}}}^{self.J}")
            idx = idx * (self.cap + 1) + int(c)
        return idx

    def indices(self, xs) -> np.ndarray:
        if xs is None:
            return np.arange(self.n)
        return np.array([self.index(x) for x in xs], dtype=np.int64)

    @classmethod
    def from_matrix(cls, P) -> "FiniteKernel":
        """Wrap a user matrix on states 0..n-1 (one coordinate)."""
        P = np.asarray(P, dtype=float)
        return cls(np.arange(len(P), dtype=np.int64)[:, None], P, len(P) - 1,
                   clip_policy="none")


def box_states(J: int, cap: int) -> np.ndarray:
    return np.array(list(product(range(cap + 1), repeat=J)), dtype=np.int64).reshape(-1, J)


def _box_index(states: np.ndarray, cap: int) -> np.ndarray:
    radix = (cap + 1) ** np.arange(states.shape[1] - 1, -1, -1)
    return states @ radix


def build_truncated_kernel(params: SystemParams, cap: int, dominant: bool = True,
                           state_cap: int = STATE_CAP,
                           budget: int = ENUM_BUDGET) -> FiniteKernel:
    """Dense transition matrix of the Aloha chain on {0..cap}^J."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    n = (cap + 1) ** params.J
    if n > state_cap:
        raise BudgetExceeded(f"(cap+1)^J = {cap + 1}^{params.J} = {n} states exceeds "
                             f"the state budget {state_cap}")
    _check_budget(params, budget)
    states = box_states(params.J, cap)
    P = np.zeros((n, n))
    lam_vecs, lam_probs = _arrival_law(params.arrivals)
    codes = (states > 0) @ (1 << np.arange(params.J))
    for code in np.unique(codes):
        rows = np.flatnonzero(codes == code)
        busy = [bool(code >> k & 1) for k in range(params.J)]
        for D, pd in departure_outcomes(params, busy, dominant):
            for lam_vec, pa in zip(lam_vecs, lam_probs):
                nxt = np.minimum(states[rows] - np.asarray(D) + lam_vec, cap)
                np.add.at(P, (rows, _box_index(nxt, cap)), pd * pa)
    return FiniteKernel(states, P, cap, "clip_arrivals", params)


def lyapunov_vector(kernel: FiniteKernel, j: int) -> np.ndarray:
    return kernel.states @ np.asarray(lyapunov_spec(kernel.params, j).coeffs)


def _one_step(P: np.ndarray, V: np.ndarray, block: int = 256) -> np.ndarray:
    # sum_y P_xy (V_y - V_x): exactly zero for constant V
    out = np.empty(len(V))
    for s in range(0, len(V), block):
        rows = slice(s, s + block)
        out[rows] = np.einsum("ij,ij->i", P[rows], V[None, :] - V[rows, None])
    return out


def drift_vector(kernel: FiniteKernel, V, k: int = 1) -> np.ndarray:
    """Delta^k V at every state, as the telescoped sum of P^i Delta V, i < k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    V = np.asarray(V, dtype=float)
    if k == 0:
        return np.zeros_like(V)
    w = _one_step(kernel.P, V)
    acc = w.copy()
    for _ in range(k - 1):
        w = kernel.P @ w
        acc += w
    return acc


def k_step_drift(kernel: FiniteKernel, V, x, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return float(drift_vector(kernel, V, k)[kernel.index(x)])


def _row_laws(kernel: FiniteKernel, rows: np.ndarray, steps: int) -> list[np.ndarray]:
    """[e_x P^0, ..., e_x P^steps] stacked over rows x."""
    mu = np.zeros((len(rows), kernel.n))
    mu[np.arange(len(rows)), rows] = 1.0
    out = [mu]
    for _ in range(steps):
        mu = mu @ kernel.P
        out.append(mu)
    return out


def verify_lemma21(kernel: FiniteKernel, V, x=None, t1: int = 1, t2: int = 1) -> float:
    """Max |Delta^{t1+t2}V - Delta^{t1}V - sum_y p^{t1}_{xy} Delta^{t2}V(y)| over x."""
    if t1 < 1 or t2 < 1:
        raise ValueError("t1 and t2 must be >= 1")
    rows = kernel.indices(x)
    lhs = drift_vector(kernel, V, t1 + t2)[rows]
    mu = _row_laws(kernel, rows, t1)[-1]
    rhs = drift_vector(kernel, V, t1)[rows] + mu @ drift_vector(kernel, V, t2)
    return float(np.max(np.abs(lhs - rhs)))


def verify_corollary21(kernel: FiniteKernel, V, x=None, ts: Sequence[int] = (1,)) -> float:
    """Residual of splitting a sum(ts)-step drift into consecutive one-piece drifts."""
    ts = [int(t) for t in ts]
    if not ts or min(ts) < 1:
        raise ValueError("t-list must be nonempty with entries >= 1")
    rows = kernel.indices(x)
    lhs = drift_vector(kernel, V, sum(ts))[rows]
    laws = _row_laws(kernel, rows, sum(ts[:-1]))
    rhs = np.zeros(len(rows))
    start = 0
    for t in ts:
        rhs += laws[start] @ drift_vector(kernel, V, t)
        start += t
    return float(np.max(np.abs(lhs - rhs)))


def interior_mask(kernel: FiniteKernel, horizon: int) -> np.ndarray:
    """States from which no arrival can be clipped within ``horizon`` slots."""
    mb = kernel.params.max_batch if kernel.params is not None else 0
    return np.all(kernel.states <= kernel.cap - horizon * mb, axis=1)


@dataclass
class BoundCheck:
    checked: int
    max_excess: float
    bound: float
    ok: bool
    inconclusive: bool

    def to_dict(self) -> dict:
        return {"checked": self.checked, "max_excess": self.max_excess, "bound": self.bound,
                "ok": self.ok, "inconclusive": self.inconclusive}


def verify_lemma23(kernel: FiniteKernel, j: int, k: int, lam=None, slack: float = 1e-10) -> BoundCheck:
    """Check Delta^k V_j(x) <= -k eps_j on interior states with x_j >= k."""
    if kernel.params is None:
        raise ValueError("needs a kernel built from SystemParams")
    eps = 1.0 - constraint_values(kernel.params, lam)[j - 1]
    mask = interior_mask(kernel, k) & (kernel.states[:, j - 1] >= k)
    if not mask.any():
        return BoundCheck(0, math.nan, -k * eps, False, True)
    d = drift_vector(kernel, lyapunov_vector(kernel, j), k)[mask]
    excess = float(np.max(d + k * eps))
    return BoundCheck(int(mask.sum()), excess, float(-k * eps), excess <= slack, False)


def verify_assumption22(kernel: FiniteKernel, j: int, k: int) -> bool:
    """p^l(x, {y_j = 0}) = 0 for l < k whenever x_j >= k."""
    rows = np.flatnonzero(kernel.states[:, j - 1] >= k)
    if rows.size == 0:
        return True
    empty = kernel.states[:, j - 1] == 0
    return all(float(mu[:, empty].max(initial=0.0)) == 0.0
               for mu in _row_laws(kernel, rows, k - 1))


def is_lower_set(kernel: FiniteKernel, members: np.ndarray) -> bool:
    """Closed under decreasing any single coordinate by one (suffices on a box)."""
    inside = np.zeros(kernel.n, dtype=bool)
    inside[members] = True
    for i in range(kernel.J):
        below = kernel.states[members].copy()
        below[:, i] -= 1
        ok = below[:, i] >= 0
        if not inside[_box_index(below[ok], kernel.cap)].all():
            return False
    return True


@dataclass
class LevelDecomposition:
    levels: list[float]
    level_sets: list[np.ndarray]
    lower_sets: list[np.ndarray]
    lower_flags: list[bool] = field(default_factory=list)


def level_decomposition(kernel: FiniteKernel, drift: np.ndarray,
                        merge_tol: float = LEVEL_TOL) -> LevelDecomposition:
    """Group states by drift value, highest first; B_l is the union of the top l groups."""
    drift = np.asarray(drift, dtype=float)
    order = np.argsort(-drift, kind="stable")
    groups, levels = [], []
    for idx in order:
        if levels and drift[idx] >= levels[-1] - merge_tol:
            groups[-1].append(idx)
        else:
            levels.append(float(drift[idx]))
            groups.append([idx])
    level_sets = [np.sort(np.array(g, dtype=np.int64)) for g in groups]
    lower_sets = [np.sort(np.concatenate(level_sets[: l + 1])) for l in range(len(level_sets))]
    flags = []
    if kernel.clip_policy != "none":
        flags = [is_lower_set(kernel, b) for b in lower_sets]
    return LevelDecomposition(levels, level_sets, lower_sets, flags)


def verify_lemma24(kernel: FiniteKernel, V, decomposition: LevelDecomposition,
                   x=None, n: int = 1) -> float:
    """Residual of writing Delta^n V as level-weighted lower-set occupation sums."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rows = kernel.indices(x)
    lhs = drift_vector(kernel, V, n)[rows]
    d = decomposition.levels
    occupation = sum(_row_laws(kernel, rows, n - 1))
    rhs = np.full(len(rows), n * d[-1])
    for l in range(len(d) - 1):
        rhs += (d[l] - d[l + 1]) * occupation[:, decomposition.lower_sets[l]].sum(axis=1)
    return float(np.max(np.abs(lhs - rhs)))


def verify_nstep_monotone(kernel: FiniteKernel, j: int, n: int, slack: float = 1e-10) -> int:
    """Comparable interior pairs x <= y where Delta^n V_j(x) < Delta^n V_j(y)."""
    mask = interior_mask(kernel, n)
    d = drift_vector(kernel, lyapunov_vector(kernel, j), n)[mask]
    S = kernel.states[mask]
    leq = np.all(S[:, None, :] <= S[None, :, :], axis=-1)
    return int(np.sum(leq & (d[:, None] < d[None, :] - slack)))


def stationary_distribution(kernel: FiniteKernel, tol: float = 1e-13,
                            max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration until ||pi P - pi||_1 <= tol."""
    pi = np.full(kernel.n, 1.0 / kernel.n)
    for _ in range(max_iter):
        nxt = pi @ kernel.P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    raise RuntimeError(f"power iteration did not reach tolerance {tol} in {max_iter} steps")


def _componentwise_lower_sets(shape: tuple[int, ...]) -> np.ndarray:
    """Every lower set of the box, as rows of a boolean membership matrix."""
    if len(shape) == 1:
        m = shape[0]
        return np.arange(m)[None, :] < np.arange(m + 1)[:, None]
    rest = _componentwise_lower_sets(shape[1:])
    contains = np.all(rest[:, None, :] >= rest[None, :, :], axis=-1)
    chains = np.arange(len(rest))[:, None]
    for _ in range(shape[0] - 1):
        last = chains[:, -1]
        nxt = [np.flatnonzero(contains[a]) for a in range(len(rest))]
        reps = np.array([len(nxt[a]) for a in last])
        chains = np.column_stack([np.repeat(chains, reps, axis=0),
                                  np.concatenate([nxt[a] for a in last])])
    return rest[chains].reshape(len(chains), -1)


def _generic_order_ok(points, p1, p2, leq, slack) -> bool:
    n = len(points)
    below = [[i for i in range(n) if i != e and leq(points[i], points[e])] for e in range(n)]
    # minimal elements first: sort by number of predecessors
    order = sorted(range(n), key=lambda e: len(below[e]))
    chosen = [False] * n

    def rec(pos, m1, m2):
        if pos == n:
            return m1 + slack >= m2
        e = order[pos]
        if not rec(pos + 1, m1, m2):
            return False
        if all(chosen[i] for i in below[e]):
            chosen[e] = True
            ok = rec(pos + 1, m1 + p1[e], m2 + p2[e])
            chosen[e] = False
            return ok
        return True

    return rec(0, 0.0, 0.0)


def check_lower_set_order(dist1, dist2, order: Callable | None = None,
                          slack: float = 1e-12) -> bool:
    """True iff P1(B) >= P2(B) for every lower set B of the box, i.e. dist1 <=_st dist2.

    ``dist1``/``dist2`` are arrays shaped like the box (at most 3 axes, 64
    cells).  ``order(x, y)`` overrides the componentwise partial order.
    """
    d1, d2 = np.asarray(dist1, dtype=float), np.asarray(dist2, dtype=float)
    if d1.shape != d2.shape:
        raise ValueError(f"distribution shapes differ: {d1.shape} vs {d2.shape}")
    if d1.ndim > 3 or d1.size > 64:
        raise ValueError(f"box {d1.shape} is too large for lower-set enumeration")
    if order is None:
        masks = _componentwise_lower_sets(d1.shape)
        return bool(np.all(masks @ d1.ravel() + slack >= masks @ d2.ravel()))
    points = list(product(*(range(m) for m in d1.shape)))
    return _generic_order_ok(points, d1.ravel(), d2.ravel(), order, slack)


def componentwise_leq(x, y) -> bool:
    return all(a <= b for a, b in zip(x, y))


def save_kernel(kernel: FiniteKernel, path) -> None:
    """Plain-text export: ``n J B``, the matrix rows, then ``index coords...``."""
    lines = [f"{kernel.n} {kernel.J} {kernel.cap}"]
    lines += [" ".join(format(x, ".17g") for x in row) for row in kernel.P]
    lines += [" ".join(str(int(v)) for v in (i, *s)) for i, s in enumerate(kernel.states)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path) -> FiniteKernel:
    rows = Path(path).read_text().split("\n")
    n, J, B = (int(x) for x in rows[0].split())
    P = np.array([[float(x) for x in rows[1 + i].split()] for i in range(n)])
    states = np.zeros((n, J), dtype=np.int64)
    for line in rows[1 + n: 1 + 2 * n]:
        i, *coords = (int(x) for x in line.split())
        states[i] = coords
    return FiniteKernel(states, P, B, "clip_arrivals")


SUITES = ("lemma21", "cor21", "lemma23", "lemma24", "monotone")
DEFAULT_T_LISTS = ((1, 1, 1), (2, 3), (1, 2, 1), (2, 3, 2))


def verify_suite(params: SystemParams, cap: int, suites: Sequence[str] = SUITES,
                 n_max: int = 5, k_max: int = 3, t_max: int = 5, mono_n_max: int = 4,
                 state_cap: int = STATE_CAP) -> dict:
    """Run the requested identity checks on the dominant kernel; one entry per suite."""
    kernel = build_truncated_kernel(params, cap, state_cap=state_cap)
    Vs = {j: lyapunov_vector(kernel, j) for j in range(1, params.J + 1)}
    out = {}
    if "lemma21" in suites:
        r = max(verify_lemma21(kernel, V, None, t1, t2) for V in Vs.values()
                for t1 in range(1, t_max + 1) for t2 in range(1, t_max + 1))
        out["lemma21"] = {"max_residual": r, "tol": IDENTITY_TOL, "passed": r <= IDENTITY_TOL}
    if "cor21" in suites:
        r = max(verify_corollary21(kernel, V, None, ts) for V in Vs.values()
                for ts in DEFAULT_T_LISTS)
        out["cor21"] = {"max_residual": r, "tol": IDENTITY_TOL, "passed": r <= IDENTITY_TOL}
    if "lemma24" in suites:
        r = 0.0
        for V in Vs.values():
            dec = level_decomposition(kernel, drift_vector(kernel, V, 1))
            r = max(r, max(verify_lemma24(kernel, V, dec, None, n) for n in range(1, n_max + 1)))
        out["lemma24"] = {"max_residual": r, "tol": IDENTITY_TOL, "passed": r <= IDENTITY_TOL}
    if "lemma23" in suites:
        checks = [verify_lemma23(kernel, j, k) for j in Vs for k in range(1, k_max + 1)]
        out["lemma23"] = {
            "max_excess": max((c.max_excess for c in checks if not c.inconclusive),
                              default=None),
            "checked": sum(c.checked for c in checks),
            "inconclusive": any(c.inconclusive for c in checks),
            "passed": all(c.ok for c in checks),
        }
    if "monotone" in suites:
        v = sum(verify_nstep_monotone(kernel, j, n) for j in Vs for n in range(1, mono_n_max + 1))
        out["monotone"] = {"violations": v, "passed": v == 0}
    return out
