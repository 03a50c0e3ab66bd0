"""
Partial Birkhoff normal form at cubic order.

The homological field F removes every cubic term with at least two tangential
index slots whose integer denominator
    D = sum_v sigma_v lambda_v - sigma_t lambda_t
is nonzero. Terms with D = 0 are resonant and stay in the normal form: the
action terms, the first-type couplings qbar_i q_j z_m d/dz_n and the
second-type couplings q_i q_j zbar_m d/dz_n.
"""

import logging
import math
from collections import Counter
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np
import sympy as sp

from cnls_kam.birkhoff.models import (
    AffineFrequency,
    Coupling,
    FrequencyData,
    FStats,
    FTermRecord,
    MelnikovBlock,
    NormalFormReport,
    RemainderStats,
    ResonantEntry,
)
from cnls_kam.errors import InvalidConfig, ZeroDivisor
from cnls_kam.lattice.models import ResonanceKind, ResonantPair, Site, SiteClass, SiteTag, TangentialSet
from cnls_kam.polyvf.main import (
    CUBIC_COEFF,
    apply,
    build_cubic_P0,
    check_momentum,
    check_reversible,
    lie_bracket,
    linear_part,
    vf_norm_upper,
)
from cnls_kam.polyvf.models import ModeState, ModeVar, PolyVectorField, TermKey, canonical_factors, mirror_key

logger = logging.getLogger(__name__)

SELF_COEFF = CUBIC_COEFF
PAIR_COEFF = 2 * CUBIC_COEFF


class Family(str, Enum):
    SELF = "self"
    CROSS = "cross"
    NORMAL_ACTION = "normal_action"
    FIRST_TYPE = "first_type"
    SECOND_TYPE = "second_type"
    OTHER = "other"


def tangential_slots(key: TermKey, I: TangentialSet) -> int:
    """Tangential index slots of a term, target included, counted with multiplicity"""
    target, factors = key
    return int(target.n in I) + sum(1 for v in factors if v.n in I)


def denominator(key: TermKey) -> int:
    target, factors = key
    return sum(v.sign * v.n.norm_sq for v in factors) - target.sign * target.n.norm_sq


def _sides(key: TermKey) -> Tuple[List[Tuple[int, Site]], List[Tuple[int, Site]]]:
    """Modes entering with + (q, or a qbar target) and with - (qbar, or a q target)"""
    target, factors = key
    plus = [v.mode for v in factors if v.sign > 0]
    minus = [v.mode for v in factors if v.sign < 0]
    (minus if target.sign > 0 else plus).append(target.mode)
    return plus, minus


def classify_resonant(key: TermKey, I: TangentialSet,
                      classification: Optional[Dict[Site, SiteClass]] = None) -> Tuple[Family, Optional[ResonantPair]]:
    """
    Name the resonant family of a cubic term with D == 0 and >= 2 tangential slots.

    Raises:
        ZeroDivisor: the term is neither an action term nor a first/second type
            coupling consistent with the lattice classification
    """
    if key[0].sign < 0:
        return classify_resonant(mirror_key(key), I, classification)
    target, factors = key
    plus, minus = _sides(key)
    if Counter(plus) == Counter(minus):
        others = list(factors)
        others.remove(ModeVar(target.h, target.n, 1))
        partner = [v for v in others if v.sign > 0][0]
        if target.n in I:
            if partner.n == target.n:
                return Family.SELF, None
            return (Family.CROSS, None) if partner.n in I else (Family.OTHER, None)
        return Family.NORMAL_ACTION, None

    modes = plus + minus
    if len({h for h, _ in modes}) != 1:
        raise ZeroDivisor(f"Resonant term mixes components: {key}")
    normals_plus = [n for _, n in plus if n not in I]
    normals_minus = [n for _, n in minus if n not in I]
    if len(normals_plus) + len(normals_minus) != 2:
        raise ZeroDivisor(f"Zero denominator on a term with {4 - len(normals_plus) - len(normals_minus)} "
                          f"tangential slots: {key}")
    if target.n in I:
        return Family.OTHER, None

    n = target.n
    if len(normals_plus) == 1:
        # qbar_i q_j z_m d/dz_n
        m = normals_plus[0]
        i = [s for _, s in minus if s in I][0]
        j = [s for _, s in plus if s in I][0]
        pair = ResonantPair(ResonanceKind.FIRST, n, m, i, j)
        family = Family.FIRST_TYPE
    else:
        # q_i q_j zbar_m d/dz_n
        m = normals_minus[0]
        i, j = sorted(s for _, s in plus)
        pair = ResonantPair(ResonanceKind.SECOND, n, m, i, j)
        family = Family.SECOND_TYPE
    if not pair.is_valid():
        raise ZeroDivisor(f"Resonant term does not form a valid {family.value} pair: {key}")
    if classification is not None:
        known = classification.get(n)
        expected_tag = SiteTag.FIRST_TYPE if family is Family.FIRST_TYPE else SiteTag.SECOND_TYPE
        if known is not None and (known.tag is not expected_tag or known.pair is None or known.pair.m != m):
            raise ZeroDivisor(f"Resonant term at {n} disagrees with the lattice classification ({known.tag.value})")
    return family, pair


def solve_homological(P3: PolyVectorField, I: TangentialSet,
                      classification: Optional[Dict[Site, SiteClass]] = None) -> PolyVectorField:
    """
    Homological field F with [F, Lambda] + (nonresonant part of P3) = 0.

    Each cubic term p z^alpha d/dz_t with >= 2 tangential slots and nonzero
    denominator D gives the F term p / (i D). Zero-denominator terms are
    checked against the resonance families and left out.

    Args:
        P3: Cubic field
        I: Tangential set
        classification: Optional site classes used to cross-check resonances

    Returns:
        F, a cubic field on the same truncation

    Raises:
        ZeroDivisor: a zero denominator outside the known resonance families
    """
    F = PolyVectorField(P3.d, P3.R)
    resonant = 0
    for key, value in P3.items():
        if len(key[1]) != 3 or tangential_slots(key, I) < 2:
            continue
        D = denominator(key)
        if D == 0:
            classify_resonant(key, I, classification)
            resonant += 1
            continue
        F.add_key(key, value / (1j * D))
    logger.info(f"✅ Homological field: {len(F)} terms, {resonant} resonant terms kept")
    return F.prune()


def describe_F(F: PolyVectorField) -> Tuple[List[FTermRecord], FStats]:
    """Per-term records (sorted by key) and summary statistics of F"""
    records = []
    for term in F.terms:
        records.append(FTermRecord(
            target=str(term.target),
            monomial="*".join(str(v) for v in term.factors),
            sites=[s.as_tuple() for s in term.sites()],
            denominator=denominator(term.key),
            coefficient=(float(term.coeff.real), float(term.coeff.imag)),
        ))
    stats = FStats(
        term_count=len(records),
        min_abs_denominator=min((abs(r.denominator) for r in records), default=None),
        max_abs_coefficient=F.max_abs(),
    )
    return records, stats


def pushforward_order3(X: PolyVectorField, F: PolyVectorField) -> PolyVectorField:
    """
    Degree-3 truncation of the time-1 transform of X by F: X + [F, X_lin].

    Higher Lie terms are of degree >= 5.
    """
    linear = X.degree_part(1)
    if len(F) == 0 or len(linear) == 0:
        return X.copy()
    return X + lie_bracket(F, linear)


def order5_remainder(X: PolyVectorField, F: PolyVectorField, rho: float = 0.5, s: float = 1.0) -> RemainderStats:
    """Count and bound the degree-5 terms [F, P3] + [F, [F, Lambda]]/2 dropped by pushforward_order3"""
    cubic = X.degree_part(3)
    linear = X.degree_part(1)
    inner = lie_bracket(F, linear)
    quintic = lie_bracket(F, cubic, drop_overflow=True) + lie_bracket(F, inner, drop_overflow=True) * 0.5
    return RemainderStats(
        terms=len(quintic),
        dropped=quintic.dropped,
        norm_bound=vf_norm_upper(quintic, rho, s) if len(quintic) else 0.0,
        rho=rho,
        s=s,
    )


def _expected(family: Family) -> Optional[complex]:
    if family is Family.SELF:
        return SELF_COEFF
    if family in (Family.CROSS, Family.NORMAL_ACTION, Family.FIRST_TYPE, Family.SECOND_TYPE):
        return PAIR_COEFF
    return None


def extract_normal_form(Xt: PolyVectorField, I: TangentialSet, F: Optional[PolyVectorField] = None,
                        classification: Optional[Dict[Site, SiteClass]] = None,
                        rel_tol: float = 1e-12, residual_tol: float = 1e-12) -> NormalFormReport:
    """
    Tabulate the resonant families of the transformed field and its worst
    nonresonant residual.

    Returns:
        NormalFormReport; mismatches go to `errors`, nothing is raised for them
    """
    errors: List[str] = []
    residual = 0.0
    cross_component = 0.0
    other = 0
    table: List[ResonantEntry] = []
    seen = set()

    for key, value in Xt.items():
        target, factors = key
        if len(factors) != 3:
            continue
        if len({v.h for v in factors} | {target.h}) > 1:
            cross_component = max(cross_component, abs(value))
            continue
        if tangential_slots(key, I) < 2:
            continue
        if denominator(key) != 0:
            residual = max(residual, abs(value))
            continue
        try:
            family, _ = classify_resonant(key, I, classification)
        except ZeroDivisor as e:
            errors.append(str(e))
            continue
        expected = _expected(family)
        if expected is None:
            other += 1
            continue
        if target.sign < 0:
            expected = expected.conjugate()
        rel = abs(value - expected) / abs(expected)
        if rel > rel_tol:
            errors.append(f"{family.value} coefficient of {target} off by {rel:.3e}")
        if target.sign > 0:
            seen.add((family, target.h, target.n, factors))
            table.append(ResonantEntry(
                family=family.value,
                h=target.h,
                target=str(target),
                monomial="*".join(str(v) for v in factors),
                coefficient=(float(value.real), float(value.imag)),
                expected=(float(expected.real), float(expected.imag)),
                rel_error=rel,
            ))

    for h in range(1, Xt.d + 1):
        for i in I:
            qi = ModeVar(h, i, 1)
            if (Family.SELF, h, i, canonical_factors((qi, qi, qi.conj()))) not in seen:
                errors.append(f"Missing self-action term for component {h} at {i}")
            for j in I:
                qj = ModeVar(h, j, 1)
                if j != i and (Family.CROSS, h, i, canonical_factors((qi, qj, qj.conj()))) not in seen:
                    errors.append(f"Missing cross-action term for component {h} at {i} from {j}")

    if residual > residual_tol:
        errors.append(f"Nonresonant residual {residual:.3e} exceeds {residual_tol:.1e}")
    if cross_component > 0:
        errors.append(f"Cross-component cubic coefficient {cross_component:.3e}")

    reversible = check_reversible(Xt, tol=1e-12)
    momentum = check_momentum(Xt, 1) and check_momentum(Xt, 2)
    if not reversible:
        errors.append("Transformed field is not reversible")
    if not momentum:
        errors.append("Transformed field does not conserve momentum")

    table.sort(key=lambda e: (e.family, e.h, e.target, e.monomial))
    report = NormalFormReport(
        d=Xt.d,
        radius=Xt.R,
        tangential=[s.as_tuple() for s in I],
        residual_nonresonant=residual,
        resonant_table=table,
        other_resonant=other,
        cross_component_max=cross_component,
        reversible=reversible,
        momentum_conserved=momentum,
        F_stats=describe_F(F)[1] if F is not None else None,
        errors=errors,
        passed=not errors,
    )
    if report.passed:
        logger.info(f"✅ Normal form verified: {len(table)} resonant coefficients, residual {residual:.2e}")
    else:
        logger.warning(f"⚠️ Normal form check found {len(errors)} problems")
    return report


def tangential_omega(I: TangentialSet, h: int, a: int) -> AffineFrequency:
    """omega_{h i(a)}: |i|^2 eps^-4 - xi_{hi}/(4pi^2) + sum_j xi_{hj}/(2pi^2)"""
    lin = {(h, c): Fraction(2) for c in range(I.b)}
    lin[(h, a)] = Fraction(1)
    return AffineFrequency.of(I.sites[a].norm_sq, Fraction(0), lin)


def normal_Omega(I: TangentialSet, h: int, n: Site) -> AffineFrequency:
    """Omega_{hn}: |n|^2 eps^-4 + sum_i xi_{hi}/(2pi^2)"""
    return AffineFrequency.of(n.norm_sq, Fraction(0), {(h, c): Fraction(2) for c in range(I.b)})


def _block(I: TangentialSet, h: int, entry: SiteClass) -> MelnikovBlock:
    n = entry.site
    Omega_n = normal_Omega(I, h, n)
    if entry.tag is SiteTag.GENERIC:
        return MelnikovBlock(h, n, entry.tag, (Omega_n,))
    pair = entry.pair
    a, c = I.index(pair.i), I.index(pair.j)
    omega_i, omega_j = tangential_omega(I, h, a), tangential_omega(I, h, c)
    Omega_m = normal_Omega(I, h, pair.m)
    if entry.tag is SiteTag.FIRST_TYPE:
        diagonal = (Omega_n + omega_i, Omega_m + omega_j)
        coupling = Coupling.SYMMETRIC
    else:
        diagonal = (Omega_n - omega_i, omega_j - Omega_m)
        coupling = Coupling.ANTISYMMETRIC
    return MelnikovBlock(h, n, entry.tag, diagonal, pair, (a, c), coupling)


def frequencies(I: TangentialSet, classification: Dict[Site, SiteClass], d: int) -> FrequencyData:
    """
    Exact affine frequency data and Melnikov blocks.

    Args:
        I: Tangential set
        classification: Site classes, e.g. from lattice.main.classification_map
        d: Number of components
    """
    omega = {(h, a): tangential_omega(I, h, a) for h in range(1, d + 1) for a in range(I.b)}
    Omega: Dict[Tuple[int, Site], AffineFrequency] = {}
    blocks: Dict[Tuple[int, Site], MelnikovBlock] = {}
    for site, entry in sorted(classification.items()):
        if entry.tag is SiteTag.TANGENTIAL:
            continue
        for h in range(1, d + 1):
            Omega[(h, site)] = normal_Omega(I, h, site)
            blocks[(h, site)] = _block(I, h, entry)
    return FrequencyData(d=d, I=I, omega=omega, Omega=Omega, blocks=blocks)


def verify_nondegeneracy(b: int) -> Tuple[sp.Matrix, sp.Expr]:
    """
    Exact Jacobian d omega_h / d xi_h = (1/(4 pi^2)) * (1 on the diagonal, 2 off it)
    and its determinant (-1)^(b-1) (2b-1) / (4 pi^2)^b.
    """
    if b < 1:
        raise InvalidConfig(f"b must be positive, got {b}")
    integer = sp.Matrix(b, b, lambda r, c: 1 if r == c else 2)
    matrix = integer / (4 * sp.pi ** 2)
    det = sp.simplify(integer.det() / (4 * sp.pi ** 2) ** b)
    return matrix, det


def tangential_cubic(d: int, I: TangentialSet) -> PolyVectorField:
    """Terms of the cubic lattice field whose three factors are all tangential"""
    R = int(math.ceil(3 * I.max_norm))
    field = PolyVectorField(d, max(R, 1))
    sites = list(I)
    for h in range(1, d + 1):
        for a, i in enumerate(sites):
            for j in sites[a:]:
                for m in sites:
                    n = i + j - m
                    c = SELF_COEFF if i == j else PAIR_COEFF
                    factors = (ModeVar(h, i, 1), ModeVar(h, j, 1), ModeVar(h, m, -1))
                    field.add(ModeVar(h, n, 1), factors, c)
                    field.add(ModeVar(h, n, -1), [v.conj() for v in factors], c.conjugate())
    return field.prune()


def torus_point(I: TangentialSet, xi: np.ndarray, theta: Optional[np.ndarray] = None) -> ModeState:
    """q_{h i(a)} = sqrt(xi_{ha}) exp(i theta_{ha}) on the tangential sites"""
    xi = np.asarray(xi, dtype=float)
    theta = np.zeros_like(xi) if theta is None else np.asarray(theta, dtype=float)
    point: ModeState = {}
    for h in range(xi.shape[0]):
        for a, site in enumerate(I):
            point[(h + 1, site)] = complex(math.sqrt(xi[h, a]) * np.exp(1j * theta[h, a]))
    return point


def first_order_torus(I: TangentialSet, xi: np.ndarray, theta: Optional[np.ndarray] = None,
                      F: Optional[PolyVectorField] = None) -> ModeState:
    """
    x0 + F(x0) for the tangential torus point x0.

    Only the part of F generated by purely tangential monomials contributes,
    so F defaults to the homological field of `tangential_cubic`.
    """
    xi = np.asarray(xi, dtype=float)
    x0 = torus_point(I, xi, theta)
    if F is None:
        F = solve_homological(tangential_cubic(xi.shape[0], I), I)
    correction = apply(F, x0)
    point = dict(x0)
    for mode, value in correction.items():
        point[mode] = point.get(mode, 0j) + value
    return point


def normal_form_pipeline(d: int, R: int, I: TangentialSet,
                         classification: Optional[Dict[Site, SiteClass]] = None,
                         remainder: bool = False) -> Tuple[NormalFormReport, PolyVectorField]:
    """Build P0 and Lambda, solve for F, transform and extract; returns the report and F"""
    P0 = build_cubic_P0(d, R)
    X = linear_part(d, R) + P0
    F = solve_homological(P0, I, classification)
    Xt = pushforward_order3(X, F)
    report = extract_normal_form(Xt, I, F=F, classification=classification)
    if remainder:
        report.remainder = order5_remainder(X, F)
    return report, F
