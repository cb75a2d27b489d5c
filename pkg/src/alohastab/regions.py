"""Permutation-union stability region and the matching instability region.

For an ordering eta, condition j (position j in eta) reads

    lam[eta_j] / (p[eta_j] v_j) + sum_{k<j} lam[eta_k] / v_k < 1,

with v_j the probability that no queue placed after position j attempts.
All region queries go through a coefficient tensor so that one rate vector
or a batch of 10^5 of them are handled by the same code.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .model import Permutation, SystemParams, check_permutation, identity, v_probs

PERMUTATION_CAP = 8
STABLE = "stable_sufficient"
UNSTABLE = "unstable_sufficient"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class ConstraintProfile:
    eta: Permutation
    values: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"eta": list(self.eta), "values": list(self.values)}


@dataclass(frozen=True)
class MembershipVerdict:
    status: str
    witness: Permutation | None = None
    profile: ConstraintProfile | None = None
    mode: str | None = None

    def __post_init__(self):
        if (self.witness is None) != (self.status == INCONCLUSIVE):
            raise ValueError("a witness is required exactly when the verdict is conclusive")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "witness": None if self.witness is None else list(self.witness),
            "profile": None if self.profile is None else self.profile.to_dict(),
            "mode": self.mode,
        }


def _p_of(params) -> tuple[float, ...]:
    p = params.p if isinstance(params, SystemParams) else tuple(float(x) for x in params)
    if any(not 0.0 < x < 1.0 for x in p):
        raise ValueError(f"attempt probabilities must lie strictly inside (0, 1): {p}")
    return p


def _lam_vec(lam, J: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != J:
        raise ValueError(f"rate vector has {lam.shape[-1]} entries, expected {J}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("arrival rates must be finite and nonnegative")
    return lam


def orderings(J: int, etas: Iterable[Sequence[int]] | None = None,
              permutation_cap: int = PERMUTATION_CAP) -> list[Permutation]:
    """Candidate orderings in lexicographic order (all of them unless given)."""
    if etas is not None:
        return sorted(check_permutation(e, J) for e in etas)
    if J > permutation_cap:
        raise ValueError(f"J={J} exceeds the permutation cap {permutation_cap}; "
                         "pass an explicit list of orderings")
    return list(permutations(range(1, J + 1)))


def coefficient_tensor(p: Sequence[float], etas: Sequence[Permutation]) -> np.ndarray:
    """coef[e, j, i]: weight of lam_i in condition j under ordering etas[e]."""
    J = len(p)
    coef = np.zeros((len(etas), J, J))
    for e, eta in enumerate(etas):
        v = v_probs(p, eta)
        for j in range(J):
            for k in range(j):
                coef[e, j, eta[k] - 1] = 1.0 / v[k]
            coef[e, j, eta[j] - 1] = 1.0 / (p[eta[j] - 1] * v[j])
    return coef


def constraint_profile(params, eta: Sequence[int], lam) -> ConstraintProfile:
    p = _p_of(params)
    eta = check_permutation(eta, len(p))
    lam = _lam_vec(lam, len(p))
    values = coefficient_tensor(p, [eta])[0] @ lam
    return ConstraintProfile(eta, tuple(float(x) for x in values))


def _values(params, lam, etas, permutation_cap):
    p = _p_of(params)
    etas = orderings(len(p), etas, permutation_cap)
    lam = _lam_vec(lam, len(p))
    return etas, np.einsum("eji,...i->...ej", coefficient_tensor(p, etas), lam)


def _stable_mask(vals: np.ndarray, tol: float) -> np.ndarray:
    return np.all(vals < 1.0 - tol, axis=-1)


def _unstable_mask(vals: np.ndarray, tol: float, dominant_only: bool) -> np.ndarray:
    if dominant_only or vals.shape[-1] == 1:
        return np.any(vals > 1.0 + tol, axis=-1)
    return (vals[..., 0] < 1.0 - tol) & np.all(vals[..., 1:] > 1.0 + tol, axis=-1)


def _verdict(mask, etas, vals, status, mode) -> MembershipVerdict:
    hits = np.flatnonzero(mask)
    if hits.size == 0:
        return MembershipVerdict(INCONCLUSIVE, mode=mode)
    e = int(hits[0])
    profile = ConstraintProfile(etas[e], tuple(float(x) for x in vals[e]))
    return MembershipVerdict(status, etas[e], profile, mode)


def in_C(params, lam, tol: float = 0.0, etas=None,
         permutation_cap: int = PERMUTATION_CAP) -> MembershipVerdict:
    """Sufficient stability test; witness is the lexicographically first ordering."""
    etas, vals = _values(params, lam, etas, permutation_cap)
    return _verdict(_stable_mask(vals, tol), etas, vals, STABLE, "stability")


def in_D(params, lam, tol: float = 0.0, dominant_only: bool = False, etas=None,
         permutation_cap: int = PERMUTATION_CAP) -> MembershipVerdict:
    """Sufficient instability test.

    Default mode: first condition holds strictly and all later ones are
    violated strictly, which certifies instability of the original system.
    ``dominant_only``: any single violated condition, which only certifies
    instability of the dominant system.  With one queue both systems coincide
    and the single-violation rule is used in either mode.
    """
    etas, vals = _values(params, lam, etas, permutation_cap)
    mode = "dominant-only" if dominant_only else "default"
    return _verdict(_unstable_mask(vals, tol, dominant_only), etas, vals, UNSTABLE, mode)


def classify(params, lam, tol: float = 0.0, dominant_only: bool = False, etas=None,
             permutation_cap: int = PERMUTATION_CAP) -> MembershipVerdict:
    verdict = in_C(params, lam, tol, etas, permutation_cap)
    if verdict.status == STABLE:
        return verdict
    verdict = in_D(params, lam, tol, dominant_only, etas, permutation_cap)
    if verdict.status == UNSTABLE:
        return verdict
    return MembershipVerdict(INCONCLUSIVE, mode="default" if not dominant_only else "dominant-only")


def membership_masks(params, lams, tol: float = 0.0, dominant_only: bool = False, etas=None,
                     permutation_cap: int = PERMUTATION_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (in C, in D) flags for an (N, J) array of rate vectors."""
    _, vals = _values(params, np.atleast_2d(lams), etas, permutation_cap)
    in_c = np.any(_stable_mask(vals, tol), axis=-1)
    in_d = np.any(_unstable_mask(vals, tol, dominant_only), axis=-1)
    return in_c, in_d


def symmetric_sup_lambda(p: float, J: int) -> float:
    """Largest common rate lam with (lam, ..., lam) in the stability region."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p={p} must lie strictly inside (0, 1)")
    if J < 1:
        raise ValueError(f"J={J} must be positive")
    # all orderings coincide for identical queues
    c = coefficient_tensor((p,) * J, [identity(J)])[0].sum(axis=1)
    return float(1.0 / c.max())


def figure1_vertices(params) -> dict[str, tuple[float, float, float]]:
    """Corner points of the three-queue region picture, evaluated at p."""
    p = _p_of(params)
    if len(p) != 3:
        raise ValueError(f"vertex map is defined for J=3, got J={len(p)}")
    p1, p2, p3 = p
    q1, q2, q3 = 1 - p1, 1 - p2, 1 - p3
    return {
        "A": (p1, 0.0, 0.0),
        "B": (0.0, p2, 0.0),
        "C": (0.0, 0.0, p3),
        "O": (p1 * q2 * q3, q1 * p2 * q3, q1 * q2 * p3),
        "alpha": (p1 * q2, q1 * p2, 0.0),
        "beta": (0.0, p2 * q3, q2 * p3),
        "gamma": (p1 * q3, 0.0, q1 * p3),
        "P": (p1 * q2, 0.0, 0.0),
        "Q": (0.0, q1 * p2, 0.0),
        "X": (p1 * q3, 0.0, q1 * q2 * p3),
        "Y": (0.0, p2 * q3, q1 * q2 * p3),
        "E": (0.0, q1 * p2 * q3, q1 * q2 * p3),
        "F": (p1 * q2 * q3, 0.0, q1 * q2 * p3),
    }


@dataclass(frozen=True)
class BoundaryPoint:
    lam: tuple[float, ...]
    witness: Permutation
    active_j: int


def _simplex_grid(dim: int, resolution: int) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    rows = []

    def rec(prefix, left, slots):
        if slots == 1:
            rows.append(prefix + [left])
            return
        for i in range(left, -1, -1):
            rec(prefix + [i], left - i, slots - 1)

    rec([], resolution, dim)
    return np.asarray(rows, dtype=float) / resolution


def parse_slice(spec: str | None, J: int) -> tuple[int, float] | None:
    """``"l3=0"`` (or ``"3=0"``) -> (3, 0.0)."""
    if spec is None:
        return None
    m = re.fullmatch(r"\s*(?:lambda_?|l)?(\d+)\s*=\s*(\S+)\s*", spec, re.IGNORECASE)
    if m is None:
        raise ValueError(f"malformed slice {spec!r}; expected e.g. l3=0")
    k, val = int(m.group(1)), m.group(2)
    if not 1 <= k <= J:
        raise ValueError(f"slice coordinate {k} outside 1..{J}")
    try:
        v = float(val)
    except ValueError:
        raise ValueError(f"malformed slice value in {spec!r}") from None
    if v < 0:
        raise ValueError("slice value must be nonnegative")
    return k, v


def boundary_samples(params, resolution: int, slice: tuple[int, float] | None = None,
                     rel_tol: float = 1e-9) -> list[BoundaryPoint]:
    """Points on the outer boundary of the stability region along a fan of rays.

    Rays start at the origin (or at ``value * e_k`` for a slice fixing
    coordinate k) and point along a regular grid of the simplex of the free
    coordinates; each ray is bisected for the last point inside the region.
    """
    p = _p_of(params)
    J = len(p)
    if J not in (2, 3):
        raise ValueError(f"boundary export supports J in {{2, 3}}, got J={J}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    etas = orderings(J)
    coef = coefficient_tensor(p, etas)
    base = np.zeros(J)
    free = list(range(J))
    if slice is not None:
        k, value = slice
        base[k - 1] = value
        free.remove(k - 1)
    dirs = np.zeros((0, J))
    if free:
        grid = _simplex_grid(len(free), resolution)
        dirs = np.zeros((len(grid), J))
        dirs[:, free] = grid

    def inside(t):
        pts = base + t[:, None] * dirs
        vals = np.einsum("eji,ni->nej", coef, pts)
        return np.any(np.all(vals < 1.0, axis=-1), axis=-1)

    if not inside(np.zeros(1))[0]:
        raise ValueError(f"slice base point {tuple(base)} is outside the stability region")
    if len(dirs) == 0:
        return []
    lo = np.zeros(len(dirs))
    hi = np.ones(len(dirs))
    while True:
        still_in = inside(hi)
        if not still_in.any():
            break
        lo = np.where(still_in, hi, lo)
        hi = np.where(still_in, 2 * hi, hi)
    for _ in range(200):
        if np.all(hi - lo <= rel_tol * hi):
            break
        mid = 0.5 * (lo + hi)
        ok = inside(mid)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)

    points = []
    for t, d in zip(lo, dirs):
        lam = base + t * d
        vals = coef @ lam
        e = int(np.flatnonzero(np.all(vals < 1.0, axis=-1))[0])
        points.append(BoundaryPoint(tuple(float(x) for x in lam), etas[e],
                                    int(np.argmax(vals[e])) + 1))
    return points
