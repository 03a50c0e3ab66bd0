import math

import numpy as np
import pytest
import sympy as sp

from cnls_kam.birkhoff.main import (
    PAIR_COEFF,
    SELF_COEFF,
    Family,
    classify_resonant,
    denominator,
    describe_F,
    first_order_torus,
    frequencies,
    normal_form_pipeline,
    pushforward_order3,
    solve_homological,
    tangential_omega,
    verify_nondegeneracy,
)
from cnls_kam.errors import InvalidConfig
from cnls_kam.lattice.main import classification_map
from cnls_kam.lattice.models import Site, SiteTag, TangentialSet
from cnls_kam.polyvf.main import linear_part
from cnls_kam.polyvf.models import ModeVar, PolyVectorField, canonical_factors

FOUR_PI_SQ = 4 * math.pi ** 2


def q(n1, n2, h=1):
    return ModeVar(h, Site(n1, n2), 1)


def qb(n1, n2, h=1):
    return ModeVar(h, Site(n1, n2), -1)


@pytest.fixture(scope="module")
def homological_d1_r3(cubic_d1_r3):
    I = TangentialSet.of([(1, 0), (-1, 0)])
    return solve_homological(cubic_d1_r3, I, classification_map(I, 3))


class TestHomological:
    def test_worked_coefficient(self, homological_d1_r3):
        key = (q(2, 1), canonical_factors([q(1, 0), q(0, 1), qb(-1, 0)]))
        assert denominator(key) == 1 + 1 - 1 - 5
        value = homological_d1_r3.coeff(*key)
        assert value == pytest.approx(PAIR_COEFF / (1j * -4))
        assert abs(value) == pytest.approx(1 / (8 * math.pi ** 2))

    def test_single_tangential_slot_absent(self, homological_d1_r3, pair_set):
        for key, _ in homological_d1_r3.items():
            target, factors = key
            slots = int(target.n in pair_set) + sum(v.n in pair_set for v in factors)
            assert slots >= 2

    def test_denominators_are_nonzero_integers(self, homological_d1_r3):
        records, stats = describe_F(homological_d1_r3)
        assert stats.term_count == len(homological_d1_r3)
        assert stats.min_abs_denominator >= 1
        assert all(r.denominator != 0 for r in records)

    def test_resonant_first_type_term_stays_out(self, homological_d1_r3):
        # qbar_i q_j z_m d/dz_n with n = (-1,1), m = (1,1)
        key = (q(-1, 1), canonical_factors([qb(1, 0), q(-1, 0), q(1, 1)]))
        assert denominator(key) == 0
        assert homological_d1_r3.coeff(*key) == 0

    def test_classify_first_type(self, pair_set, pair_classes):
        key = (q(-1, 1), canonical_factors([qb(1, 0), q(-1, 0), q(1, 1)]))
        family, pair = classify_resonant(key, pair_set, pair_classes)
        assert family is Family.FIRST_TYPE
        assert pair.m == Site(1, 1)

    def test_classify_second_type(self, pair_set, pair_classes):
        key = (q(0, 1), canonical_factors([q(1, 0), q(-1, 0), qb(0, -1)]))
        family, pair = classify_resonant(key, pair_set, pair_classes)
        assert family is Family.SECOND_TYPE
        assert pair.m == Site(0, -1)

    def test_homological_identity(self, cubic_d1_r3, homological_d1_r3):
        X = linear_part(1, 3) + cubic_d1_r3
        Xt = pushforward_order3(X, homological_d1_r3)
        for key, _ in homological_d1_r3.items():
            assert abs(Xt.coeff(*key)) < 1e-12

    def test_zero_F_is_identity(self, lattice_field_d1_r3):
        Xt = pushforward_order3(lattice_field_d1_r3, PolyVectorField(1, 3))
        assert len(Xt) == len(lattice_field_d1_r3)
        for key, value in lattice_field_d1_r3.items():
            assert Xt.coeff(*key) == value


class TestNormalForm:
    @pytest.fixture(scope="class")
    def pipeline(self):
        I = TangentialSet.of([(1, 0), (-1, 0)])
        return normal_form_pipeline(1, 3, I, classification_map(I, 3))

    def test_passes(self, pipeline):
        report, _ = pipeline
        assert report.passed, report.errors
        assert report.residual_nonresonant < 1e-12
        assert report.reversible and report.momentum_conserved

    def test_self_action(self, pipeline):
        report, _ = pipeline
        entry = next(e for e in report.resonant_table if e.family == "self" and e.target == "q1(1,0)")
        assert entry.coefficient[1] == pytest.approx(1 / FOUR_PI_SQ, rel=1e-12)
        assert entry.coefficient[0] == pytest.approx(0.0, abs=1e-15)

    def test_first_type_coupling(self, pipeline):
        report, _ = pipeline
        entries = [e for e in report.resonant_table if e.family == "first_type"]
        assert entries
        for e in entries:
            assert e.coefficient[1] == pytest.approx(1 / (2 * math.pi ** 2), rel=1e-12)

    def test_second_type_coupling_present(self, pipeline):
        report, _ = pipeline
        assert any(e.family == "second_type" for e in report.resonant_table)

    def test_F_stats_attached(self, pipeline):
        report, F = pipeline
        assert report.F_stats.term_count == len(F)

    def test_components_do_not_mix(self, pair_set):
        report, _ = normal_form_pipeline(2, 2, pair_set, classification_map(pair_set, 2))
        assert report.cross_component_max == 0.0
        assert report.passed, report.errors

    @pytest.mark.parametrize("d", [1, pytest.param(2, marks=pytest.mark.slow)])
    def test_radius_five(self, pair_set, d):
        report, _ = normal_form_pipeline(d, 5, pair_set, classification_map(pair_set, 5))
        assert report.passed, report.errors
        assert report.residual_nonresonant < 1e-12
        families = {e.family for e in report.resonant_table}
        assert {"self", "first_type", "second_type"} <= families
        for e in report.resonant_table:
            assert e.rel_error < 1e-12
            expected = 1 / FOUR_PI_SQ if e.family == "self" else 1 / (2 * math.pi ** 2)
            assert e.expected[1] == pytest.approx(expected, rel=1e-12)

    def test_remainder_bound(self, pair_set):
        report, _ = normal_form_pipeline(1, 2, pair_set, classification_map(pair_set, 2), remainder=True)
        assert report.remainder is not None
        assert report.remainder.terms > 0
        assert report.remainder.norm_bound > 0


class TestFrequencies:
    def test_single_site_slope(self):
        I = TangentialSet.of([(1, 0)])
        freq = frequencies(I, classification_map(I, 2), 1)
        assert freq.omega[(1, 0)].quartic == 1
        assert freq.omega_jacobian() == pytest.approx(np.array([[1 / FOUR_PI_SQ]]))

    def test_tangential_formula(self, pair_set):
        omega = tangential_omega(pair_set, 1, 0)
        # -xi_i/(4pi^2) + sum_j xi_j/(2pi^2) in units of 1/(4pi^2)
        assert omega.lin_map == {(1, 0): 1, (1, 1): 2}

    def test_differences_ignore_the_total(self, pair_set):
        diff = tangential_omega(pair_set, 1, 0) - tangential_omega(pair_set, 1, 1)
        assert diff.lin_map == {(1, 0): -1, (1, 1): 1}
        assert diff.quartic == 0

    def test_component_gap(self, pair_set, pair_classes):
        freq = frequencies(pair_set, pair_classes, 2)
        xi = np.array([[0.75, 0.75], [1.75, 1.75]])
        n = Site(2, 2)
        gap = abs(freq.Omega[(1, n)].analytic(xi) - freq.Omega[(2, n)].analytic(xi))
        assert gap == pytest.approx(2 / (2 * math.pi ** 2))
        assert gap == pytest.approx(0.10132, abs=1e-5)
        assert gap > 2 / FOUR_PI_SQ

    def test_block_shapes(self, pair_set, pair_classes):
        freq = frequencies(pair_set, pair_classes, 1)
        xi = np.array([[0.75, 0.9]])
        first = freq.blocks[(1, Site(-1, 1))]
        second = freq.blocks[(1, Site(0, 1))]
        generic = freq.blocks[(1, Site(2, 2))]
        assert first.tag is SiteTag.FIRST_TYPE and second.tag is SiteTag.SECOND_TYPE
        M1, M2 = first.analytic_matrix(xi), second.analytic_matrix(xi)
        A = math.sqrt(0.75 * 0.9) / (2 * math.pi ** 2)
        assert M1[0, 1] == pytest.approx(A) and M1[1, 0] == pytest.approx(A)
        assert M2[0, 1] == pytest.approx(A) and M2[1, 0] == pytest.approx(-A)
        assert generic.dim == 1

    @pytest.mark.parametrize("b, expected", [
        (1, 1 / FOUR_PI_SQ),
        (2, -3 / FOUR_PI_SQ ** 2),
        (3, 5 / FOUR_PI_SQ ** 3),
    ])
    def test_nondegeneracy(self, b, expected):
        matrix, det = verify_nondegeneracy(b)
        assert matrix.shape == (b, b)
        assert float(det) == pytest.approx(expected, rel=1e-12)

    def test_nondegeneracy_closed_form(self):
        for b in range(1, 9):
            _, det = verify_nondegeneracy(b)
            assert sp.simplify(det - (-1) ** (b - 1) * (2 * b - 1) / (4 * sp.pi ** 2) ** b) == 0

    def test_nondegeneracy_needs_sites(self):
        with pytest.raises(InvalidConfig):
            verify_nondegeneracy(0)


class TestFirstOrderTorus:
    def test_cubic_image(self, pair_set):
        a, b = 4e-4, 9e-4
        point = first_order_torus(pair_set, np.array([[a, b]]))
        assert point[(1, Site(1, 0))] == pytest.approx(math.sqrt(a))
        # F coefficient at (3,0): SELF_COEFF / (i * (1 + 1 - 1 - 9))
        expected = SELF_COEFF / (1j * -8) * a * math.sqrt(b)
        assert point[(1, Site(3, 0))] == pytest.approx(expected, rel=1e-12)
