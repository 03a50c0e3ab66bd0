import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnls_kam.errors import InvalidConfig, TruncationOverflow, TruncationTooSmall
from cnls_kam.lattice.models import Site, TangentialSet, ball_sites
from cnls_kam.polyvf.main import (
    CUBIC_COEFF,
    TLBudget,
    apply,
    build_cubic_P0,
    check_momentum,
    check_real,
    check_reversible,
    lie_bracket,
    linear_part,
    momentum_field,
    seq_norm,
    toeplitz_lipschitz_check,
    vf_norm_sample_lower,
    vf_norm_upper,
)
from cnls_kam.polyvf.models import ModeVar, PolyVectorField

O = Site(0, 0)


def q(n1, n2, h=1):
    return ModeVar(h, Site(n1, n2), 1)


def qb(n1, n2, h=1):
    return ModeVar(h, Site(n1, n2), -1)


def assert_fields_close(X, Y, tol=1e-9):
    keys = set(X.keys()) | set(Y.keys())
    for target, factors in keys:
        a, b = X.coeff(target, factors), Y.coeff(target, factors)
        assert abs(a - b) <= tol * (1 + abs(a) + abs(b)), (target, factors, a, b)


SMALL_SITES = ball_sites(1)


def small_var(k):
    return ModeVar(1, SMALL_SITES[k // 2], 1 if k % 2 == 0 else -1)


@st.composite
def small_fields(draw):
    """Random fields on d=1, |n| <= 1 with up to four terms of degree 1..3"""
    field = PolyVectorField(1, 1)
    for _ in range(draw(st.integers(0, 4))):
        target = draw(st.integers(0, 2 * len(SMALL_SITES) - 1))
        factors = draw(st.lists(st.integers(0, 2 * len(SMALL_SITES) - 1), min_size=1, max_size=3))
        coeff = draw(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
        field.add(small_var(target), [small_var(k) for k in factors], coeff)
    return field


class TestCubicField:
    def test_self_interaction_coefficient(self):
        P0 = build_cubic_P0(1, 1)
        assert P0.coeff(q(0, 0), [q(0, 0), q(0, 0), qb(0, 0)]) == pytest.approx(1j / (4 * math.pi ** 2))

    def test_pair_coefficient_is_doubled(self):
        P0 = build_cubic_P0(1, 1)
        assert P0.coeff(q(0, 0), [q(1, 0), q(-1, 0), qb(0, 0)]) == pytest.approx(1j / (2 * math.pi ** 2))

    def test_conjugate_family(self):
        P0 = build_cubic_P0(1, 1)
        value = P0.coeff(q(0, 0), [q(1, 0), q(-1, 0), qb(0, 0)])
        assert P0.coeff(qb(0, 0), [qb(1, 0), qb(-1, 0), q(0, 0)]) == value.conjugate()

    def test_momentum_violating_term_absent(self):
        P0 = build_cubic_P0(1, 1)
        assert P0.coeff(q(0, 0), [q(1, 0), q(0, 0), qb(0, 0)]) == 0

    def test_component_diagonal(self):
        P0 = build_cubic_P0(2, 1)
        for term in P0:
            assert {v.h for v in term.factors} == {term.target.h}

    def test_radius_below_one(self):
        with pytest.raises(InvalidConfig):
            build_cubic_P0(1, 0)

    def test_reversible_and_real(self):
        X = linear_part(2, 2) + build_cubic_P0(2, 2)
        assert check_reversible(X)
        assert check_real(X)

    def test_lone_term_not_reversible(self):
        X = PolyVectorField(1, 1)
        X.add(q(1, 0), [q(1, 0)], 1.0)
        assert not check_reversible(X)

    @pytest.mark.parametrize("l", [1, 2])
    def test_momentum(self, l):
        assert check_momentum(build_cubic_P0(2, 2), l)

    @pytest.mark.parametrize("l", [1, 2])
    def test_commutes_with_momentum_field(self, l):
        P0 = build_cubic_P0(1, 2)
        assert lie_bracket(P0, momentum_field(1, 2, l)).max_abs() < 1e-12

    def test_momentum_index(self):
        with pytest.raises(InvalidConfig):
            momentum_field(1, 2, 3)

    def test_momentum_mismatch(self):
        X = PolyVectorField(1, 1)
        X.add(q(0, 0), [q(1, 0)], 1.0)
        assert not check_momentum(X, 1)
        assert check_momentum(X, 2)


class TestLieBracket:
    def test_self_bracket_vanishes(self, cubic_d1_r3):
        X = linear_part(1, 3) + cubic_d1_r3
        assert lie_bracket(X, X).max_abs() < 1e-12

    def test_hand_example(self):
        a, b = q(1, 0), q(0, 1)
        X = PolyVectorField(1, 1)
        X.add(a, [a], 1.0)
        Y = PolyVectorField(1, 1)
        Y.add(b, [a, a], 1.0)
        Z = lie_bracket(X, Y)
        assert len(Z) == 1
        assert Z.coeff(b, [a, a]) == 2.0

    def test_linear_bracket_identity(self):
        Lam = linear_part(1, 2)
        target, factors, c = q(0, 1), [q(1, 1), q(1, 0), qb(2, 0)], 0.3 - 0.7j
        Y = PolyVectorField(1, 2)
        Y.add(target, factors, c)
        D = sum(v.sign * v.n.norm_sq for v in factors) - target.sign * target.n.norm_sq
        Z = lie_bracket(Lam, Y)
        assert Z.coeff(target, factors) == pytest.approx(1j * D * c)
        assert len(Z) == 1

    def test_overflow(self):
        X = PolyVectorField(1, 2)
        X.add(q(2, 0), [q(2, 0)], 1.0)
        Y = PolyVectorField(1, 2)
        Y.add(q(0, 0), [q(2, 0), qb(2, 0), q(0, 0)], 1.0)
        with pytest.raises(TruncationOverflow):
            lie_bracket(X, Y, radius=1)
        Z = lie_bracket(X, Y, radius=1, drop_overflow=True)
        assert Z.dropped > 0

    @settings(max_examples=30, deadline=None)
    @given(small_fields(), small_fields(), small_fields())
    def test_bilinear(self, X, Y, Z):
        assert_fields_close(lie_bracket(X, Y + Z), lie_bracket(X, Y) + lie_bracket(X, Z))

    @settings(max_examples=30, deadline=None)
    @given(small_fields(), small_fields())
    def test_antisymmetric(self, X, Y):
        assert_fields_close(lie_bracket(X, Y), -lie_bracket(Y, X))


class TestNorms:
    def test_seq_norm_origin(self):
        assert seq_norm({(1, O): 1.0}, 0.5) == 1.0

    def test_seq_norm_weighted(self):
        assert seq_norm({(1, Site(1, 0)): 2.0}, 0.5) == pytest.approx(2 * math.exp(0.5))
        assert seq_norm({(1, Site(1, 0)): 2.0}, 0.5) == pytest.approx(3.2974, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.integers(0, len(SMALL_SITES) - 1), st.complex_numbers(max_magnitude=5, allow_nan=False)),
           st.dictionaries(st.integers(0, len(SMALL_SITES) - 1), st.complex_numbers(max_magnitude=5, allow_nan=False)))
    def test_seq_norm_triangle(self, a, b):
        z = {(1, SMALL_SITES[k]): v for k, v in a.items()}
        w = {(1, SMALL_SITES[k]): v for k, v in b.items()}
        total = {key: z.get(key, 0) + w.get(key, 0) for key in set(z) | set(w)}
        assert seq_norm(total, 0.3) <= seq_norm(z, 0.3) + seq_norm(w, 0.3) + 1e-9

    @pytest.mark.parametrize("s", [0.1, 1.0, 7.0])
    def test_vf_norm_linear_monomial(self, s):
        n, m, c, rho = Site(1, 1), Site(2, 0), 0.4 + 0.3j, 0.5
        X = PolyVectorField(1, 2)
        X.add(ModeVar(1, m, 1), [ModeVar(1, n, 1)], c)
        assert vf_norm_upper(X, rho, s) == pytest.approx(abs(c) * math.exp((m.norm - n.norm) * rho))

    def test_vf_norm_zero(self):
        assert vf_norm_upper(PolyVectorField(1, 1), 0.5, 1.0) == 0.0

    def test_vf_norm_bad_weight(self):
        with pytest.raises(InvalidConfig):
            vf_norm_upper(PolyVectorField(1, 1), 0.0, 1.0)

    def test_sampled_lower_bound(self):
        X = build_cubic_P0(1, 1)
        upper = vf_norm_upper(X, 0.5, 0.2)
        lower = vf_norm_sample_lower(X, 0.5, 0.2, samples=100)
        assert 0 < lower <= upper * (1 + 1e-12)


class TestApply:
    def test_single_mode(self):
        a = 0.3 - 0.4j
        out = apply(build_cubic_P0(1, 1), {(1, O): a})
        assert out[(1, O)] == pytest.approx(1j / (4 * math.pi ** 2) * abs(a) ** 2 * a)
        assert set(out) == {(1, O)}

    def test_zero_state(self):
        assert apply(build_cubic_P0(1, 1), {}) == {}

    def test_convolution_bound(self):
        P0 = build_cubic_P0(1, 2)
        sites = ball_sites(2)
        rng = np.random.default_rng(7)
        rho = 0.5
        for _ in range(100):
            support = rng.choice(len(sites), size=int(rng.integers(1, 5)), replace=False)
            state = {(1, sites[k]): complex(rng.normal(), rng.normal()) for k in support}
            bound = seq_norm(state, rho) ** 3 * CUBIC_COEFF.imag
            assert seq_norm(apply(P0, state), rho) <= bound * (1 + 1e-12)


class TestToeplitzLipschitz:
    def test_cubic_field_is_toeplitz(self, pair_set):
        P0 = build_cubic_P0(2, 3)
        report = toeplitz_lipschitz_check(P0, Site(1, 0), 1, TLBudget(support=pair_set, samples=48))
        assert report.limits_exist
        assert report.max_lipschitz_defect == pytest.approx(0.0, abs=1e-15)
        assert report.cross_component_max == 0.0
        assert report.checked > 0

    def test_decaying_coefficients_detected(self):
        R = 6
        X = PolyVectorField(1, R)
        for n in ball_sites(R):
            for sign in (1, -1):
                v = ModeVar(1, n, sign)
                X.add(v, [v], 1.0 / (1.0 + n.norm))
        budget = TLBudget(support=TangentialSet.of([(0, 0)]), samples=200, seed=3)
        report = toeplitz_lipschitz_check(X, Site(1, 0), 2, budget)
        assert report.max_lipschitz_defect > 0
        assert not report.limits_exist

    def test_truncation_too_small(self, pair_set):
        with pytest.raises(TruncationTooSmall):
            toeplitz_lipschitz_check(build_cubic_P0(1, 3), Site(2, 0), 1, TLBudget(support=pair_set))
