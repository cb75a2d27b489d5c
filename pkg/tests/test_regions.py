import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alohastab.model import SystemParams
from alohastab.regions import (
    INCONCLUSIVE,
    STABLE,
    UNSTABLE,
    MembershipVerdict,
    boundary_samples,
    classify,
    coefficient_tensor,
    constraint_profile,
    figure1_vertices,
    in_C,
    in_D,
    membership_masks,
    orderings,
    parse_slice,
    symmetric_sup_lambda,
)

HALF2 = (0.5, 0.5)
HALF3 = (0.5, 0.5, 0.5)


def j2_oracle(p, lam):
    """Hand-expanded two-queue sets C({1,2}) and C({2,1})."""
    p1, p2 = p
    l1, l2 = lam
    c12 = (l1 / (p1 * (1 - p2)), l1 / (1 - p2) + l2 / p2)
    c21 = (l2 / (p2 * (1 - p1)), l2 / (1 - p1) + l1 / p1)
    return c12, c21


def j3_oracle(p, lam, eta):
    """Three-queue conditions written out term by term."""
    a, b, c = (x - 1 for x in eta)
    q = [1 - x for x in p]
    return (
        lam[a] / (p[a] * q[b] * q[c]),
        lam[a] / (q[b] * q[c]) + lam[b] / (p[b] * q[c]),
        lam[a] / (q[b] * q[c]) + lam[b] / q[c] + lam[c] / p[c],
    )


class TestProfiles:
    def test_examples(self):
        assert constraint_profile(HALF2, (1, 2), (0.2, 0.2)).values == pytest.approx((0.8, 0.8))
        assert constraint_profile(HALF2, (2, 1), (0.4, 0.0)).values == pytest.approx((0.0, 0.8))
        assert constraint_profile(HALF2, (1, 2), (0, 0)).values == (0.0, 0.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            constraint_profile(HALF2, (1, 2), (-0.1, 0.2))

    def test_accepts_params_object(self):
        params = SystemParams.bernoulli(HALF2, (0.2, 0.2))
        assert constraint_profile(params, (1, 2), params.lam).values == pytest.approx((0.8, 0.8))

    def test_j2_matches_hand_expansion(self):
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            p = rng.uniform(0.05, 0.95, 2)
            lam = rng.uniform(0, 0.5, 2)
            c12, c21 = j2_oracle(p, lam)
            np.testing.assert_allclose(constraint_profile(p, (1, 2), lam).values, c12, rtol=1e-12)
            np.testing.assert_allclose(constraint_profile(p, (2, 1), lam).values, c21, rtol=1e-12)

    def test_j3_all_orderings_match_hand_expansion(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            p = rng.uniform(0.05, 0.95, 3)
            lam = rng.uniform(0, 0.5, 3)
            for eta in orderings(3):
                np.testing.assert_allclose(constraint_profile(p, eta, lam).values,
                                           j3_oracle(p, lam, eta), rtol=1e-12)


class TestMembership:
    @pytest.mark.parametrize("lam, witness", [((0.2, 0.2), (1, 2)), ((0.4, 0.0), (2, 1)),
                                              ((0.24, 0.24), (1, 2))])
    def test_in_C_accepts(self, lam, witness):
        v = in_C(HALF2, lam)
        assert v.status == STABLE and v.witness == witness

    @pytest.mark.parametrize("lam", [(0.6, 0.0), (0.26, 0.26)])
    def test_in_C_rejects(self, lam):
        assert in_C(HALF2, lam).status == INCONCLUSIVE

    def test_in_D_example(self):
        v = in_D(HALF2, (0.2, 0.35))
        assert v.status == UNSTABLE and v.witness == (1, 2)
        assert v.profile.values == pytest.approx((0.8, 1.1))

    @pytest.mark.parametrize("lam", [(0.2, 0.2), (0.0, 0.0)])
    def test_not_in_D(self, lam):
        assert in_D(HALF2, lam).status == INCONCLUSIVE
        assert in_D(HALF2, lam, dominant_only=True).status == INCONCLUSIVE

    def test_symmetric_overload_needs_dominant_only(self):
        # both first conditions are violated, so no ordering meets the default rule
        assert classify(HALF2, (0.26, 0.26)).status == INCONCLUSIVE
        v = classify(HALF2, (0.26, 0.26), dominant_only=True)
        assert v.status == UNSTABLE and v.mode == "dominant-only"

    def test_classify(self):
        assert classify(HALF2, (0.2, 0.2)).status == STABLE
        v = classify(HALF2, (0.2, 0.35))
        assert v.status == UNSTABLE and v.mode == "default"
        assert classify(HALF2, (0.24, 0.24)).profile.values == pytest.approx((0.96, 0.96))

    def test_single_queue(self):
        assert classify((0.3,), (0.29,)).status == STABLE
        assert classify((0.3,), (0.31,)).status == UNSTABLE

    def test_tolerance(self):
        assert in_C(HALF2, (0.24, 0.24), tol=0.05).status == INCONCLUSIVE
        assert in_C(HALF2, (0.24, 0.24), tol=0.03).status == STABLE

    def test_permutation_cap(self):
        p = [0.1] * 9
        with pytest.raises(ValueError, match="cap"):
            in_C(p, [0.0] * 9)
        v = in_C(p, [0.0] * 9, etas=[tuple(range(1, 10))])
        assert v.status == STABLE

    def test_verdict_invariant(self):
        with pytest.raises(ValueError):
            MembershipVerdict(STABLE)
        with pytest.raises(ValueError):
            MembershipVerdict(INCONCLUSIVE, witness=(1, 2))


@settings(max_examples=300, deadline=None)
@given(data=st.data())
def test_C_and_D_disjoint_two_queues(data):
    p = data.draw(st.lists(st.floats(0.05, 0.95), min_size=2, max_size=2))
    lam = data.draw(st.lists(st.floats(0, 1), min_size=2, max_size=2))
    assert not (in_C(p, lam).status == STABLE and in_D(p, lam).status == UNSTABLE)


@pytest.mark.parametrize("p, lam, eta", [
    ((0.51063946, 0.90541733, 0.17974365), (0.0, 0.0, 0.10991874), (1, 3, 2)),
    ((0.5, 0.5, 0.75, 0.5), (0.0, 0.0, 0.0, 0.25), (1, 4, 2, 3)),
])
def test_default_instability_rule_overlaps_C_beyond_two_queues(p, lam, eta):
    # one loaded queue with lam < p is plainly stable, yet an ordering that puts
    # always-empty queues behind it meets the default instability rule
    assert in_C(p, lam).status == STABLE
    v = in_D(p, lam)
    assert v.status == UNSTABLE and v.witness == eta


def test_each_C_eta_convex_and_lower_closed():
    rng = np.random.default_rng(4)
    p = rng.uniform(0.1, 0.9, 3)
    coef = coefficient_tensor(p, orderings(3))
    pts = rng.uniform(0, 0.4, (10_000, 3))
    inside = np.all(np.einsum("eji,ni->nej", coef, pts) < 1, axis=-1)
    for e in range(len(coef)):
        idx = np.flatnonzero(inside[:, e])
        a, b = pts[idx[:-1]], pts[idx[1:]]
        mid = 0.5 * (a + b)
        assert np.all(np.all(mid @ coef[e].T < 1, axis=-1))
    in_c, _ = membership_masks(p, pts)
    shrunk = pts * rng.uniform(0, 1, pts.shape)
    in_c2, _ = membership_masks(p, shrunk)
    assert np.all(in_c2[in_c])


def test_masks_agree_with_scalar_queries():
    rng = np.random.default_rng(5)
    p = (0.3, 0.6, 0.5)
    pts = rng.uniform(0, 0.5, (300, 3))
    in_c, in_d = membership_masks(p, pts)
    for x, c, d in zip(pts, in_c, in_d):
        assert c == (in_C(p, x).status == STABLE)
        assert d == (in_D(p, x).status == UNSTABLE)


class TestSymmetric:
    @pytest.mark.parametrize("J, expected", [(2, 0.25), (3, 0.125)])
    def test_examples(self, J, expected):
        assert symmetric_sup_lambda(0.5, J) == pytest.approx(expected, abs=1e-15)

    def test_closed_form_and_equal_constraints(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = rng.uniform(0.05, 0.95)
            for J in range(1, 13):
                assert abs(symmetric_sup_lambda(p, J) - p * (1 - p) ** (J - 1)) <= 1e-12
                lam = [0.5 * p * (1 - p) ** (J - 1)] * J
                vals = constraint_profile([p] * J, tuple(range(1, J + 1)), lam).values
                assert max(vals) - min(vals) <= 1e-12

    def test_monotone_to_zero(self):
        vals = [symmetric_sup_lambda(0.5, J) for J in range(2, 21)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-3

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            symmetric_sup_lambda(1.0, 3)
        with pytest.raises(ValueError):
            symmetric_sup_lambda(0.5, 0)


class TestGeometry:
    def test_vertices(self):
        v = figure1_vertices(HALF3)
        assert len(v) == 13
        assert v["O"] == (0.125, 0.125, 0.125)
        assert v["A"] == (0.5, 0.0, 0.0)
        assert v["alpha"] == (0.25, 0.25, 0.0)
        assert v["E"] == (0.0, 0.125, 0.125)

    def test_vertices_on_caption_planes(self):
        rng = np.random.default_rng(8)
        p1, p2, p3 = p = tuple(rng.uniform(0.2, 0.8, 3))
        q1, q2 = 1 - p1, 1 - p2
        v = figure1_vertices(p)
        for name in ("A", "alpha", "O", "X"):
            l1, l2, l3 = v[name]
            assert l1 / p1 + l2 / q1 + l3 / (q1 * q2) == pytest.approx(1, abs=1e-12), name
        for name in ("Q", "alpha", "O", "E"):
            _, l2, l3 = v[name]
            assert l2 / (q1 * p2) + l3 / (q1 * q2) == pytest.approx(1, abs=1e-12), name
        for name, x in v.items():
            assert in_C(p, np.asarray(x) * (1 - 1e-9)).status == STABLE, name
        for name in ("A", "B", "C", "alpha", "beta", "gamma", "O"):
            assert in_C(p, np.asarray(v[name]) * (1 + 1e-6)).status == INCONCLUSIVE, name

    def test_vertices_need_three_queues(self):
        with pytest.raises(ValueError):
            figure1_vertices(HALF2)

    def test_slice_passes_through_caption_points(self):
        pts = np.array([b.lam for b in boundary_samples(HALF3, 100, (3, 0.0))])
        for target in [(0.5, 0, 0), (0.25, 0.25, 0), (0, 0.5, 0)]:
            assert np.min(np.linalg.norm(pts - target, axis=1)) <= 1e-6

    def test_j2_boundary(self):
        pts = boundary_samples(HALF2, 10)
        lams = np.array([b.lam for b in pts])
        assert np.min(np.linalg.norm(lams - (0.25, 0.25), axis=1)) <= 1e-6
        assert np.min(np.linalg.norm(lams - (0.5, 0.0), axis=1)) <= 1e-6

    def test_boundary_points_on_active_plane(self):
        p = (0.3, 0.6, 0.45)
        coef = {eta: c for eta, c in zip(orderings(3), coefficient_tensor(p, orderings(3)))}
        for b in boundary_samples(p, 12):
            val = coef[b.witness][b.active_j - 1] @ np.asarray(b.lam)
            assert abs(val - 1) <= 1e-6

    def test_rejects_large_J(self):
        with pytest.raises(ValueError):
            boundary_samples([0.5] * 4, 5)

    @pytest.mark.parametrize("text, out", [("l3=0", (3, 0.0)), ("lambda_2=0.1", (2, 0.1)),
                                           ("1=0", (1, 0.0)), (None, None)])
    def test_parse_slice(self, text, out):
        assert parse_slice(text, 3) == out

    @pytest.mark.parametrize("text", ["l4=0", "x=1", "l1=-1", "l1=abc"])
    def test_parse_slice_errors(self, text):
        with pytest.raises(ValueError):
            parse_slice(text, 3)
