"""Slot-by-slot simulation of the original and dominant Aloha systems.

Randomness is counter based: attempt draws and arrival batches for slot n
come from Philox blocks keyed by (seed, stream) at a counter derived from n,
so any two runs with the same seed see the same inputs slot for slot, no
matter which system they drive or how the run is chunked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .drift import lyapunov_spec
from .model import QueueState, SystemParams, check_state, departures

Y_STREAM = 0
ARRIVAL_STREAM = 1
CHUNK = 1 << 16
INT64_MAX = np.iinfo(np.int64).max
SYSTEMS = ("original", "dominant")


class QueueOverflow(OverflowError):
    pass


@dataclass(frozen=True)
class SlotInputs:
    Y: tuple[bool, ...]
    Lam: tuple[int, ...]


@dataclass(frozen=True)
class SimConfig:
    steps: int
    seed: int = 0
    system: str = "dominant"
    record_trace: bool = False
    trace_stride: int = 1

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.system not in SYSTEMS:
            raise ValueError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        if int(self.trace_stride) < 1:
            raise ValueError(f"trace_stride must be >= 1, got {self.trace_stride}")


@dataclass
class SimResult:
    final_state: QueueState
    time_avg_queue: list[float]
    max_queue: list[int]
    departures: list[int]
    slots: int
    trace: list[tuple[int, QueueState]] | None = None

    def to_dict(self) -> dict:
        out = {
            "final_state": list(self.final_state),
            "time_avg_queue": list(self.time_avg_queue),
            "max_queue": list(self.max_queue),
            "departures": list(self.departures),
            "slots": self.slots,
        }
        if self.trace is not None:
            out["trace"] = [[n, list(q)] for n, q in self.trace]
        return out


@dataclass
class CoupledReport:
    violations: int
    slots: int
    first_violation: int | None = None

    def to_dict(self) -> dict:
        return {"violations": self.violations, "slots": self.slots,
                "first_violation": self.first_violation}


class InputStream:
    """Random-access source of per-slot attempt draws and arrival batches."""

    def __init__(self, params: SystemParams, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.params = params
        self.seed = int(seed)
        self._p = np.asarray(params.p)
        self._blocks = -(-params.J // 4)
        self._cum, self._sizes = [], []
        for a in params.arrivals:
            self._sizes.append(np.array([k for k, _ in a.pmf], dtype=np.int64))
            self._cum.append(np.cumsum([q for _, q in a.pmf]))

    def _uniforms(self, stream: int, start: int, count: int) -> np.ndarray:
        J, b = self.params.J, self._blocks
        gen = np.random.Philox(key=self.seed + (stream << 64), counter=start * b)
        raw = gen.random_raw(count * 4 * b).reshape(count, 4 * b)[:, :J]
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def block(self, start: int, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Inputs of slots start..start+count-1 as (Y bool, Lam int64) arrays."""
        Y = self._uniforms(Y_STREAM, start, count) < self._p
        u = self._uniforms(ARRIVAL_STREAM, start, count)
        Lam = np.empty((count, self.params.J), dtype=np.int64)
        for j in range(self.params.J):
            idx = np.searchsorted(self._cum[j], u[:, j], side="right")
            np.minimum(idx, len(self._sizes[j]) - 1, out=idx)
            Lam[:, j] = self._sizes[j][idx]
        return Y, Lam


def sample_inputs(params: SystemParams, seed: int, slot: int) -> SlotInputs:
    Y, Lam = InputStream(params, seed).block(slot, 1)
    return SlotInputs(tuple(bool(y) for y in Y[0]), tuple(int(x) for x in Lam[0]))


def _step(params: SystemParams, Q, inp: SlotInputs, dominant: bool):
    Q = check_state(params, Q)
    D = departures([q > 0 for q in Q], inp.Y, dominant)
    return tuple(q + a - d for q, a, d in zip(Q, inp.Lam, D)), tuple(bool(d) for d in D)


def step_original(params: SystemParams, Qbar, inp: SlotInputs):
    """One slot of the original system: (next state, departure flags)."""
    return _step(params, Qbar, inp, dominant=False)


def step_dominant(params: SystemParams, Q, inp: SlotInputs):
    """One slot of the dominant system: (next state, departure flags)."""
    return _step(params, Q, inp, dominant=True)


@numba.njit(cache=True)
def _evolve(q0, Y, Lam, dominant):
    n, J = Y.shape
    states = np.empty((n, J), dtype=np.int64)
    deps = np.zeros((n, J), dtype=np.bool_)
    q = q0.copy()
    for t in range(n):
        if dominant:
            blocked_real = False
            for j in range(J):
                real = Y[t, j] and q[j] > 0
                if real and not blocked_real:
                    clear = True
                    for k in range(j + 1, J):
                        if Y[t, k]:
                            clear = False
                            break
                    if clear:
                        deps[t, j] = True
                if real:
                    blocked_real = True
        else:
            count = 0
            who = -1
            for j in range(J):
                if Y[t, j] and q[j] > 0:
                    count += 1
                    who = j
            if count == 1:
                deps[t, who] = True
        for j in range(J):
            a = Lam[t, j]
            if q[j] > INT64_MAX - a:
                return states, deps, t
            q[j] = q[j] + a - (1 if deps[t, j] else 0)
            states[t, j] = q[j]
    return states, deps, -1


def _advance(q: np.ndarray, Y, Lam, dominant: bool, offset: int):
    states, deps, bad = _evolve(q, Y, Lam, dominant)
    if bad >= 0:
        raise QueueOverflow(f"queue length overflow at slot {offset + bad}")
    return states, deps


def _chunks(steps: int):
    for start in range(0, steps, CHUNK):
        yield start, min(CHUNK, steps - start)


def run(params: SystemParams, Q0, cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.steps`` slots from Q0.

    Time averages are over the states at the start of each simulated slot;
    maxima include the final state.  The trace holds (n, Q^n) for every n
    that is a multiple of the stride, from 0 up to ``steps``.
    """
    Q0 = check_state(params, Q0)
    stream = InputStream(params, cfg.seed)
    dominant = cfg.system == "dominant"
    q = np.asarray(Q0, dtype=np.int64)
    total = np.zeros(params.J, dtype=np.float64)
    qmax = q.copy()
    deps_total = np.zeros(params.J, dtype=np.int64)
    trace = [(0, Q0)] if cfg.record_trace else None
    for start, n in _chunks(cfg.steps):
        Y, Lam = stream.block(start, n)
        states, deps = _advance(q, Y, Lam, dominant, start)
        total += q + states[:-1].sum(axis=0, dtype=np.float64)
        np.maximum(qmax, states.max(axis=0), out=qmax)
        deps_total += deps.sum(axis=0)
        if trace is not None:
            first = (-(start + 1)) % cfg.trace_stride
            for i in range(first, n, cfg.trace_stride):
                trace.append((start + i + 1, tuple(int(x) for x in states[i])))
        q = states[-1].copy()
    return SimResult(
        final_state=tuple(int(x) for x in q),
        time_avg_queue=[float(x) for x in total / cfg.steps],
        max_queue=[int(x) for x in qmax],
        departures=[int(x) for x in deps_total],
        slots=cfg.steps,
        trace=trace,
    )


def _coupled(params, qa, qb, dom_a, dom_b, cfg: SimConfig) -> CoupledReport:
    stream = InputStream(params, cfg.seed)
    a = np.asarray(qa, dtype=np.int64)
    b = np.asarray(qb, dtype=np.int64)
    violations, first = 0, None
    for start, n in _chunks(cfg.steps):
        Y, Lam = stream.block(start, n)
        sa, _ = _advance(a, Y, Lam, dom_a, start)
        sb, _ = _advance(b, Y, Lam, dom_b, start)
        bad = np.any(sa > sb, axis=1)
        k = int(bad.sum())
        if k and first is None:
            first = start + 1 + int(np.argmax(bad))
        violations += k
        a, b = sa[-1].copy(), sb[-1].copy()
    return CoupledReport(violations, cfg.steps, first)


def run_coupled_dominance(params: SystemParams, Q0, cfg: SimConfig) -> CoupledReport:
    """Drive both systems from Q0 with identical inputs; count slots where
    some original queue exceeds its dominant counterpart."""
    Q0 = check_state(params, Q0)
    return _coupled(params, Q0, Q0, False, True, cfg)


def is_leq(a: Sequence[int], b: Sequence[int]) -> bool:
    return all(x <= y for x, y in zip(a, b))


def run_coupled_order(params: SystemParams, Q0, Q0prime, cfg: SimConfig) -> CoupledReport:
    """Two dominant systems started at Q0 <= Q0' under common inputs."""
    Q0 = check_state(params, Q0)
    Q0prime = check_state(params, Q0prime)
    if not is_leq(Q0, Q0prime):
        raise ValueError(f"initial states {Q0} and {Q0prime} are not ordered componentwise")
    return _coupled(params, Q0, Q0prime, True, True, cfg)


@dataclass
class DriftLimitEstimate:
    estimate: float
    half_width: float
    replicates: int
    horizon: int
    samples: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "half_width": self.half_width,
                "replicates": self.replicates, "horizon": self.horizon}


def estimate_drift_limit(params: SystemParams, j: int, x0, horizon: int, replicates: int,
                         seed: int = 0, system: str = "dominant",
                         confidence: float = 0.95) -> DriftLimitEstimate:
    """Monte Carlo estimate of (E V_j(X^k) - V_j(x0)) / k at k = horizon.

    Replicate r uses seed ``seed + r``; the half-width is a Student-t interval.
    """
    from scipy.stats import t as student_t

    if horizon < 1000:
        raise ValueError(f"horizon must be >= 1000, got {horizon}")
    if replicates < 2:
        raise ValueError("need at least two replicates for an interval")
    Vj = lyapunov_spec(params, j)
    x0 = check_state(params, x0)
    v0 = float(Vj(x0))
    samples = []
    for r in range(replicates):
        res = run(params, x0, SimConfig(steps=horizon, seed=seed + r, system=system))
        samples.append((float(Vj(res.final_state)) - v0) / horizon)
    arr = np.asarray(samples)
    half = float(student_t.ppf(0.5 + confidence / 2, replicates - 1)
                 * arr.std(ddof=1) / math.sqrt(replicates))
    return DriftLimitEstimate(float(arr.mean()), half, replicates, horizon, samples)
