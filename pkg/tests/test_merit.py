import math

import mpmath
import pytest
from hypothesis import given, strategies as st

from madspip.merit import (
    MeritParams,
    Partition,
    c_ext,
    c_int,
    compute_b_ext,
    merit,
    penalty_update_check,
    phi_prox,
    violation_summary,
)

INF = math.inf


def params(rho=0.1, **kw):
    return MeritParams(rho=rho, **kw)


class TestPartition:
    def test_disjoint_cover(self):
        p = Partition(frozenset({0, 2}), frozenset({1}))
        assert p.m == 3

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Partition(frozenset({0}), frozenset({0, 1}))

    def test_gap_rejected(self):
        with pytest.raises(ValueError):
            Partition(frozenset({0}), frozenset({2}))

    def test_from_initial_threshold(self):
        p = Partition.from_initial([-0.5, 0.3], eps_ext=1e-14)
        assert p.g_int == {0} and p.g_ext == {1}

    def test_move_is_one_directional(self):
        p = Partition(frozenset(), frozenset({0, 1}))
        moved = p.moved_to_interior([1])
        assert moved.g_int == {1}
        with pytest.raises(ValueError):
            moved.moved_to_interior([1])


class TestPhiProx:
    def test_all_negative(self):
        assert phi_prox([-2.0, -0.5]) == -0.5

    def test_one_positive(self):
        assert phi_prox([0.5, -2.0]) == 0.5

    def test_boundary(self):
        assert phi_prox([0.0, -1.0]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            phi_prox([])

    def test_infinity_propagates(self):
        assert phi_prox([INF, -1.0]) == INF


class TestCInt:
    def test_deep_interior_saturates(self):
        assert c_int([-3.0, -1.5]) == -1.0

    def test_product_branch(self):
        assert c_int([-0.5, -0.25]) == pytest.approx(-0.125)

    def test_violation_branch(self):
        assert c_int([0.5, -2.0]) == 0.5

    def test_empty_product(self):
        assert c_int([]) == -1.0

    def test_boundary_value_zero(self):
        # a zero value keeps the product branch and yields exactly 0
        assert c_int([0.0, -2.0]) == 0.0

    @given(st.lists(st.floats(min_value=-100, max_value=100), min_size=0, max_size=6))
    def test_range_and_sign(self, values):
        v = c_int(values)
        assert v >= -1.0
        assert (v <= 0.0) == all(x <= 0.0 for x in values)


class TestCExt:
    def test_mixed(self):
        assert c_ext([0.3, -1.0], [0.2]) == pytest.approx(0.13)

    def test_feasible(self):
        assert c_ext([-1.0, -2.0], []) == 0.0

    def test_equalities_only(self):
        assert c_ext([], [1.0, -1.0]) == pytest.approx(2.0)

    def test_infinity(self):
        assert c_ext([INF], []) == INF

    # magnitudes kept above the square-underflow threshold: h**2 flushes to
    # zero below ~1e-162, where the zero-iff-feasible equivalence cannot hold
    _scale = st.floats(min_value=-50, max_value=50).filter(
        lambda v: v == 0.0 or abs(v) > 1e-100
    )

    @given(st.lists(_scale, max_size=5), st.lists(_scale, max_size=5))
    def test_nonnegative_zero_iff_feasible(self, g, h):
        v = c_ext(g, h)
        assert v >= 0.0
        assert (v == 0.0) == (all(x <= 0.0 for x in g) and all(x == 0.0 for x in h))


class TestMerit:
    def test_interior_feasible_no_penalty(self):
        assert merit(1.0, -1.0, 0.0, params(rho=0.1)) == 1.0

    def test_boundary_is_infinite(self):
        assert merit(2.0, 0.0, 0.0, params(rho=0.1)) == INF
        assert merit(2.0, -0.0, 0.0, params(rho=0.1)) == INF

    def test_infinite_objective(self):
        assert merit(INF, -1.0, 0.0, params(rho=0.1)) == INF

    def test_scaled_value_against_oracle(self):
        # high-precision oracle for f - rho*log(0.5) + (1/rho)*0.04
        mpmath.mp.dps = 50
        expected = mpmath.mpf(2) - mpmath.mpf("0.1") * mpmath.log(mpmath.mpf("0.5"))
        expected += (1 / mpmath.mpf("0.1")) * mpmath.mpf("0.04")
        got = merit(2.0, -0.5, 0.04, params(rho=0.1))
        assert got == pytest.approx(float(expected), rel=1e-15)
        assert got == pytest.approx(2.46931471805, abs=1e-11)

    @given(
        st.floats(min_value=-1e6, max_value=1e6),
        st.floats(min_value=-1.0, max_value=-1e-9),
        st.floats(min_value=0.0, max_value=1e6),
        st.floats(min_value=1e-9, max_value=10.0),
    )
    def test_merit_dominates_objective(self, f, cint, cext, rho):
        # -cint <= 1 always, so the barrier term never pushes z below f
        assert merit(f, cint, cext, params(rho=rho)) >= f

    def test_limit_in_rho_feasible(self):
        # with no exterior violation the merit tends to f from above
        previous = None
        for k in range(1, 12):
            z = merit(3.0, -0.25, 0.0, params(rho=10.0**-k))
            assert z >= 3.0
            if previous is not None:
                assert z <= previous
            previous = z
        assert previous == pytest.approx(3.0, abs=1e-9)

    def test_limit_in_rho_infeasible(self):
        values = [merit(3.0, -0.25, 0.5, params(rho=10.0**-k)) for k in range(1, 12)]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert values[-1] > 1e9


class TestComputeBExt:
    def test_paper_examples(self):
        assert compute_b_ext(523.0) == 100.0
        assert compute_b_ext(0.0) == 1.0
        assert compute_b_ext(0.05) == 1.0
        assert compute_b_ext(-523.0) == 100.0

    def test_infinite_rejected(self):
        with pytest.raises(ValueError):
            compute_b_ext(INF)

    @given(st.floats(min_value=-1e12, max_value=1e12))
    def test_power_of_ten_at_least_one(self, f0):
        b = compute_b_ext(f0)
        assert b >= 1.0
        exponent = math.log10(b)
        assert exponent == pytest.approx(round(exponent), abs=1e-12)


class TestPenaltyUpdateCheck:
    def test_fires_small_frame(self):
        # oracle: min(10 * 0.1**(1+1e-9), 1e10 * 1e-6) ~ 0.9999999977 >= 1e-4
        assert penalty_update_check(1e-4, -1e-3, params(rho=0.1)) is True

    def test_boundary_case_settled_by_oracle(self):
        # 0.5 <= 10 * 0.1**(1+1e-9): verified with 50-digit arithmetic
        mpmath.mp.dps = 50
        bound = 10 * mpmath.mpf("0.1") ** (1 + mpmath.mpf(10) ** -9)
        assert mpmath.mpf("0.5") <= bound
        assert penalty_update_check(0.5, -1.0, params(rho=0.1)) is True

    def test_large_frame_does_not_fire(self):
        mpmath.mp.dps = 50
        bound = 10 * mpmath.mpf("0.1") ** (1 + mpmath.mpf(10) ** -9)
        assert mpmath.mpf("2.0") > bound
        assert penalty_update_check(2.0, -1.0, params(rho=0.1)) is False

    def test_boundary_proximity_blocks(self):
        assert penalty_update_check(1e-4, 0.0, params(rho=0.1)) is False

    def test_empty_interior_set(self):
        # criterion reduces to the rho term when no constraint is interior
        assert penalty_update_check(0.5, None, params(rho=0.1)) is True
        assert penalty_update_check(2.0, None, params(rho=0.1)) is False

    @given(
        st.floats(min_value=1e-12, max_value=1e3),
        st.floats(min_value=1e-12, max_value=1e3),
        st.floats(min_value=-10, max_value=-1e-9),
    )
    def test_monotone_in_delta(self, delta, smaller, phi):
        p = params(rho=0.1)
        if penalty_update_check(delta, phi, p):
            assert penalty_update_check(min(delta, smaller), phi, p)


class TestViolationSummary:
    def test_summary_consistency(self):
        partition = Partition(frozenset({0}), frozenset({1}))
        s = violation_summary(1.0, [-0.5, 0.3], [0.2], partition, params(rho=0.1))
        assert s.phi_prox == -0.5
        assert s.c_int == -0.5
        assert s.c_ext == pytest.approx(0.09 + 0.04)
        assert s.merit == pytest.approx(merit(1.0, -0.5, 0.13, params(rho=0.1)))

    def test_failed_evaluation(self):
        partition = Partition(frozenset(), frozenset({0}))
        s = violation_summary(1.0, [0.0], [], partition, params(rho=0.1), failed=True)
        assert s.merit == INF and s.c_int == INF

    def test_empty_interior_phi_is_minus_infinity(self):
        partition = Partition(frozenset(), frozenset({0}))
        s = violation_summary(1.0, [0.5], [], partition, params(rho=0.1))
        assert s.phi_prox == -INF
        assert s.c_int == -1.0


class TestMeritParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            MeritParams(rho=0.0)
        with pytest.raises(ValueError):
            MeritParams(rho=0.1, theta_rho=1.5)
        with pytest.raises(ValueError):
            MeritParams(rho=0.1, beta=1.0)
        with pytest.raises(ValueError):
            MeritParams(rho=0.1, log_threshold=2.0)

    def test_defaults(self):
        p = MeritParams(rho=0.1)
        assert p.theta_rho == 1e-2
        assert p.beta == 1.0 + 1e-9
        assert p.b_rho == 10.0
        assert p.b_c == 1e10
        assert p.b_int == 1.0
        assert p.log_threshold == 1.0
