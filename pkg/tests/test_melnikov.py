import math
import time

import numpy as np
import pytest
import sympy as sp

from cnls_kam.birkhoff.main import frequencies
from cnls_kam.errors import InvalidConfig
from cnls_kam.lattice.main import classification_map
from cnls_kam.lattice.models import Site, SiteTag, TangentialSet
from cnls_kam.melnikov.main import (
    DivisorEngine,
    block_momentum,
    check_conditions,
    check_nondegeneracy,
    frequency_jacobian_det,
    is_representative,
    l1_ball,
    scan_measure,
)
from cnls_kam.melnikov.models import ParameterBox

FOUR_PI_SQ = 4 * math.pi ** 2


@pytest.fixture
def freq_d2(pair_set):
    return frequencies(pair_set, classification_map(pair_set, 3), 2)


@pytest.fixture
def freq_d1(pair_set):
    return frequencies(pair_set, classification_map(pair_set, 3), 1)


class TestL1Ball:
    @pytest.mark.parametrize("dim, K", [(1, 3), (2, 1), (2, 4), (4, 2)])
    def test_members(self, dim, K):
        points = l1_ball(dim, K)
        assert np.all(np.abs(points).sum(axis=1) <= K)
        assert len({tuple(p) for p in points}) == len(points)
        assert tuple(points[0]) == (0,) * dim

    def test_count_in_the_plane(self):
        K = 5
        assert len(l1_ball(2, K)) == 2 * K * K + 2 * K + 1


class TestParameterBox:
    def test_bounds(self):
        box = ParameterBox(2, 3)
        assert box.lower[1, 0] == 1.5 and box.upper[1, 0] == 2.0
        assert box.contains(box.center())
        assert not box.contains(box.upper + 0.1)

    def test_corners(self):
        box = ParameterBox(1, 2)
        assert box.corners().shape == (4, 1, 2)

    def test_gap_bound(self):
        assert ParameterBox(2, 2).gap_lower_bound == pytest.approx(2 / FOUR_PI_SQ)

    def test_empty_box_rejected(self):
        with pytest.raises(InvalidConfig):
            ParameterBox(0, 1)


class TestNondegeneracy:
    def test_block_product(self, freq_d2):
        det = frequency_jacobian_det(freq_d2)
        assert sp.simplify(det - (-3 / (4 * sp.pi ** 2) ** 2) ** 2) == 0
        assert float(det) > 0

    def test_single_site(self):
        I = TangentialSet.of([(1, 0)])
        freq = frequencies(I, classification_map(I, 2), 1)
        assert sp.simplify(frequency_jacobian_det(freq) - 1 / (4 * sp.pi ** 2)) == 0
        assert check_nondegeneracy(freq)

    def test_closed_form_blocks(self, freq_d2):
        assert check_nondegeneracy(freq_d2)

    @pytest.mark.parametrize("b", range(1, 9))
    def test_determinant_up_to_eight_sites(self, b):
        I = TangentialSet.of([(t, 0) for t in range(1, b + 1)])
        freq = frequencies(I, {}, 2)
        assert check_nondegeneracy(freq)
        block = (-1) ** (b - 1) * (2 * b - 1) / (4 * sp.pi ** 2) ** b
        assert sp.simplify(frequency_jacobian_det(freq) - block ** 2) == 0


class TestMomentumSelection:
    def test_block_momenta(self, freq_d2):
        blocks = freq_d2.blocks
        assert block_momentum(blocks[(1, Site(2, 1))]) == Site(2, 1)
        first = blocks[(1, Site(-1, 1))]
        assert first.tag is SiteTag.FIRST_TYPE
        assert block_momentum(first) == Site(0, 1)
        second = blocks[(1, Site(0, 1))]
        assert block_momentum(second) == Site(0, 1) - second.pair.i

    def test_one_block_per_pair(self, freq_d2):
        kept = [n for (h, n), block in freq_d2.blocks.items() if h == 1 and block.pair and is_representative(block)]
        assert Site(0, 1) in kept and Site(0, -1) not in kept
        assert Site(-1, 1) in kept and Site(1, 1) not in kept

    def test_single_component_has_no_mel1_divisor(self, freq_d1):
        # k_1 - k_2 = 0 and k_1 + k_2 = 0 force k = 0
        engine = DivisorEngine(freq_d1, 0.1, 7.0, 4, 3)
        evaluated, auto = engine.counts("mel1")
        assert evaluated == 0
        assert auto == len(engine.k) - 1

    def test_mel1_counts(self, freq_d2):
        engine = DivisorEngine(freq_d2, 0.1, 7.0, 4, 3)
        evaluated, auto = engine.counts("mel1")
        # k = (a, c, -a, -c) with 2(|a| + |c|) <= 4
        assert evaluated == 12
        assert evaluated + auto == len(engine.k) - 1
        assert np.all(engine.momentum[engine.mel1_idx] == 0)

    def test_second_type_self_pairing_not_formed(self, freq_d2):
        engine = DivisorEngine(freq_d2, 0.1, 7.0, 3, 3)
        checked = 0
        for group in engine.mel13:
            sig = engine.signatures[group.first]
            if group.first != group.second or group.s2 != 1 or sig.tag is not SiteTag.SECOND_TYPE:
                continue
            a, c = sig.coupling_index
            trace_k = np.zeros(4, dtype=np.int64)
            trace_k[(sig.h - 1) * 2 + a] = 1
            trace_k[(sig.h - 1) * 2 + c] = -1
            rows = {tuple(k) for k in engine.k[group.idx]}
            assert tuple(trace_k) not in rows and tuple(-trace_k) not in rows
            checked += 1
        assert checked == 2

    def test_no_identically_vanishing_divisor(self, freq_d2):
        xi = np.array([[0.61, 0.93], [1.57, 1.82]])
        report = check_conditions(xi, 0.1, 1e-5, 7.0, 3, 3, freq_d2)
        for summary in report.conditions:
            if summary.worst is not None:
                assert summary.worst.value > 1e-12, summary.name


class TestConditions:
    def test_component_gap(self, freq_d2):
        engine = DivisorEngine(freq_d2, 0.1, 7.0, 3, 3)
        xi = np.array([[0.75, 0.75], [1.75, 1.75]])
        (label, values), = engine.divisor_values(xi)["mel14"]
        assert label == (1, 2)
        assert values[0, 0] == pytest.approx(0.10132, abs=1e-5)

    def test_equal_amplitude_differences_give_vanishing_divisor(self, freq_d2):
        # xi_12 - xi_11 == xi_22 - xi_21 makes <k, omega> vanish for k = (1, -1, -1, 1)
        xi = np.array([[0.5, 0.75], [1.5, 1.75]])
        report = check_conditions(xi, 0.1, 1e-3, 7.0, 4, 3, freq_d2)
        assert not report.passed
        assert any(w.condition == "mel1" and sorted(w.k) == [-1, -1, 1, 1] for w in report.violations)

    def test_symmetric_point_single_component(self, freq_d1):
        # omega_1 == omega_2 here, but no momentum-conserving divisor sees it
        report = check_conditions(np.array([[0.75, 0.75]]), 0.1, 1e-3, 7.0, 3, 3, freq_d1)
        assert not any(w.condition == "mel1" for w in report.violations)

    def test_generic_point(self, freq_d2):
        report = check_conditions(np.array([[0.61, 0.93], [1.57, 1.82]]), 0.1, 1e-4, 7.0, 4, 3, freq_d2)
        assert [c.name for c in report.conditions] == ["mel1", "mel2_gap", "mel2", "mel13", "mel14"]
        mel1 = report.conditions[0]
        assert mel1.evaluated > 0
        assert mel1.auto_passed > 0
        assert report.nondegenerate

    def test_block_gap_reported_separately(self, freq_d2):
        xi = np.array([[0.61, 0.93], [1.57, 1.82]])
        report = check_conditions(xi, 0.1, 1e-3, 7.0, 3, 3, freq_d2)
        gap = next(c for c in report.conditions if c.name == "mel2_gap")
        blocks = [block for (h, n), block in freq_d2.blocks.items() if block.quartic == 0 and is_representative(block)]
        # second-type blocks at (0, 1) and the generic origin, for each component
        assert gap.evaluated == len(blocks) == 4
        expected = min(np.linalg.svd(block.analytic_matrix(xi), compute_uv=False).min() for block in blocks)
        assert gap.worst.value == pytest.approx(expected, rel=1e-9)
        assert gap.worst.k == [0, 0, 0, 0]
        assert gap.worst_margin > 1

    def test_gamma_must_be_positive(self, freq_d1):
        with pytest.raises(InvalidConfig):
            check_conditions(np.array([[0.6, 0.9]]), 0.1, 0.0, 7.0, 2, 2, freq_d1)

    def test_scale_separation(self, freq_d1):
        with pytest.raises(InvalidConfig):
            check_conditions(np.array([[0.6, 0.9]]), 2.0, 1e-3, 7.0, 4, 3, freq_d1)


class TestGapMargin:
    @pytest.mark.parametrize("b", [1, 2, 3])
    def test_adjacent_components_on_the_box(self, b):
        I = TangentialSet.of([(1, 0), (-1, 0), (0, 3)][:b])
        # the component gap involves no normal block
        freq = frequencies(I, {}, 3)
        engine = DivisorEngine(freq, 0.1, 2 * b + 3, 2, 2)
        box = ParameterBox(3, b)
        points = np.concatenate([box.corners(), box.sample(500, 3)])
        for (h, h_prime), values in engine.divisor_values(points)["mel14"]:
            if h_prime == h + 1:
                assert values.min() >= b / FOUR_PI_SQ - 1e-12

    def test_box_bound_is_attained(self):
        box = ParameterBox(2, 2)
        xi = np.array([[1.0, 1.0], [1.5, 1.5]])
        assert box.contains(xi)
        gap = abs(xi[0].sum() - xi[1].sum()) / (2 * math.pi ** 2)
        assert gap == pytest.approx(box.gap_lower_bound)


class TestMeasureScan:
    def test_nested_exclusions(self, freq_d1):
        box = ParameterBox(1, 2)
        scan = scan_measure(box, [1e-2, 1e-3, 1e-4, 1e-5], 7.0, 0.1, 3, 3, 300, 11, freq_d1)
        assert scan.monotone
        assert [r.gamma for r in scan.rows] == [1e-2, 1e-3, 1e-4, 1e-5]
        for row in scan.rows:
            assert row.ci_low - 1e-12 <= row.excluded_fraction <= row.ci_high + 1e-12
            assert row.excluded_fraction == row.excluded / 300

    def test_exclusion_shrinks_with_gamma(self, freq_d2):
        box = ParameterBox(2, 2)
        scan = scan_measure(box, [1e-2, 1e-3, 1e-4], 1.0, 0.1, 4, 4, 4000, 2, freq_d2)
        fractions = [r.excluded_fraction for r in scan.rows]
        assert 0 < fractions[0] < 1
        for larger, smaller in zip(fractions, fractions[1:]):
            assert smaller < larger / 3
        assert scan.slope == pytest.approx(1.0, abs=0.3)

    def test_deterministic_and_thread_independent(self, freq_d1):
        box = ParameterBox(1, 2)
        args = (box, [1e-3, 1e-4], 7.0, 0.1, 3, 3, 200, 5, freq_d1)
        serial = scan_measure(*args, threads=1, chunk=32)
        threaded = scan_measure(*args, threads=3, chunk=32)
        assert serial.rows == threaded.rows

    def test_rejects_nonpositive_gamma(self, freq_d1):
        with pytest.raises(InvalidConfig):
            scan_measure(ParameterBox(1, 2), [1e-3, 0.0], 7.0, 0.1, 3, 3, 10, 0, freq_d1)

    @pytest.mark.slow
    def test_default_scan(self, pair_set):
        freq = frequencies(pair_set, classification_map(pair_set, 15), 2)
        box = ParameterBox(2, 2)
        started = time.time()
        scan = scan_measure(box, [1e-2, 1e-3, 1e-4, 1e-5], 7.0, 0.1, 15, 15, 10000, 0, freq, threads=4)
        assert time.time() - started < 600
        assert scan.monotone
        first, last = scan.rows[0], scan.rows[-1]
        assert 0 < first.excluded_fraction < 0.5
        assert last.excluded_fraction < first.excluded_fraction / 3
        for larger, smaller in zip(scan.rows, scan.rows[1:]):
            # strict decrease wherever the larger count is resolved by the sample size
            if larger.excluded >= 30:
                assert smaller.excluded < larger.excluded
                assert smaller.excluded_fraction < larger.excluded_fraction / 3
