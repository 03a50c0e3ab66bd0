"""
Exact classification of Fourier sites into tangential, first-type resonant,
second-type resonant and generic classes.

All arithmetic here is integer arithmetic. First-type solutions for an
ordered pair (i, j) lie on the lattice line <n - j, i - j> = 0 with
m = n + i - j; second-type solutions for an unordered pair {i, j} lie on the
circle |2n - (i + j)|^2 = |i - j|^2 with m = i + j - n.
"""

import logging
from itertools import combinations_with_replacement
from math import gcd, isqrt
from typing import Dict, List, Optional, Tuple

from cnls_kam.errors import AmbiguousResonance, InvalidTangentialSet
from cnls_kam.lattice.models import (
    AdmissibilityVerdict,
    ResonanceKind,
    ResonantPair,
    Site,
    SiteClass,
    SiteTag,
    TangentialSet,
    Violation,
    ball_sites,
)

logger = logging.getLogger(__name__)

UNVERIFIED_CONDITIONS = [
    "admissibility conditions of the cited construction beyond triplet uniqueness and L1/L2 disjointness",
]


def _circle_points(r2: int) -> List[Site]:
    """Integer points w with |w|^2 == r2"""
    points = []
    top = isqrt(r2)
    for a in range(-top, top + 1):
        rest = r2 - a * a
        c = isqrt(rest)
        if c * c != rest:
            continue
        points.append(Site(a, c))
        if c != 0:
            points.append(Site(a, -c))
    return points


def enumerate_second_type(I: TangentialSet) -> List[ResonantPair]:
    """
    All second-type resonant pairs of I.

    The solutions of -i-j+n+m = 0, -|i|^2-|j|^2+|n|^2+|m|^2 = 0 satisfy
    w = 2n - (i+j) with |w|^2 = |i-j|^2 and w = i+j (mod 2), so the list is
    finite and exhaustive without any radius.

    Returns:
        Pairs in canonical orientation (n - m lexicographically positive),
        sorted.
    """
    found = set()
    for a, c in combinations_with_replacement(range(I.b), 2):
        i, j = I.sites[a], I.sites[c]
        s = i + j
        for w in _circle_points((i - j).norm_sq):
            if (w.n1 - s.n1) % 2 or (w.n2 - s.n2) % 2:
                continue
            n = Site((s.n1 + w.n1) // 2, (s.n2 + w.n2) // 2)
            m = s - n
            if n in I or m in I:
                continue
            found.add(ResonantPair(ResonanceKind.SECOND, n, m, i, j).canonical())
    return sorted(found)


def _line_points(i: Site, j: Site, R: int) -> List[Tuple[Site, Site]]:
    """(n, m) on the first-type line of the ordered pair (i, j) with max(|n|,|m|) <= R"""
    d = i - j
    g = gcd(abs(d.n1), abs(d.n2))
    step = Site(-d.n2 // g, d.n1 // g)
    # |n| <= R forces |t| * |step| <= R + |j|
    span = isqrt((R + isqrt(j.norm_sq) + 1) ** 2 // max(step.norm_sq, 1)) + 1
    points = []
    for t in range(-span, span + 1):
        n = j + step.scale(t)
        m = n + d
        if n.within(R) and m.within(R):
            points.append((n, m))
    return points


def enumerate_first_type(I: TangentialSet, R: int) -> List[ResonantPair]:
    """
    All first-type resonant pairs with max(|n|, |m|) <= R.

    Trivial solutions i = j are excluded. Each resonance is listed once, in the
    orientation where i - j is lexicographically positive.
    """
    if R < I.max_norm:
        logger.warning(f"⚠️ Radius {R} is smaller than the largest tangential norm {I.max_norm:.3f}")
    found = set()
    for i in I:
        for j in I:
            if i == j or not (i - j).is_positive():
                continue
            for n, m in _line_points(i, j, R):
                if n in I or m in I:
                    continue
                found.add(ResonantPair(ResonanceKind.FIRST, n, m, i, j))
    return sorted(found)


def _first_type_triplets(I: TangentialSet, n: Site) -> List[ResonantPair]:
    """Every first-type triplet (i, j, m) for which n is the resonant site"""
    triplets = []
    for i in I:
        for j in I:
            if i == j:
                continue
            m = n + i - j
            if m in I:
                continue
            if i.norm_sq - j.norm_sq + n.norm_sq - m.norm_sq == 0:
                triplets.append(ResonantPair(ResonanceKind.FIRST, n, m, i, j))
    return triplets


def _second_type_triplets(I: TangentialSet, n: Site) -> List[ResonantPair]:
    """Every second-type triplet ({i, j}, m) for which n is the resonant site"""
    triplets = []
    for a, c in combinations_with_replacement(range(I.b), 2):
        i, j = I.sites[a], I.sites[c]
        m = i + j - n
        if m in I:
            continue
        if n.norm_sq + m.norm_sq - i.norm_sq - j.norm_sq == 0:
            triplets.append(ResonantPair(ResonanceKind.SECOND, n, m, i, j))
    return triplets


def _triplets(I: TangentialSet, n: Site) -> Tuple[List[ResonantPair], List[ResonantPair]]:
    if n in I:
        return [], []
    return _first_type_triplets(I, n), _second_type_triplets(I, n)


def classify_site(I: TangentialSet, n: Site, R: int) -> SiteClass:
    """
    Tag a single site.

    Args:
        I: Tangential set
        n: Site to classify, |n| <= R
        R: Radius bounding the query

    Returns:
        SiteClass with the unique resonant pair oriented from n

    Raises:
        AmbiguousResonance: n has several triplets of one kind, or lies in both L1 and L2
    """
    if not n.within(R):
        raise InvalidTangentialSet(f"Site {n} lies outside the radius {R}")
    if n in I:
        return SiteClass(n, SiteTag.TANGENTIAL)
    first, second = _triplets(I, n)
    if len(first) > 1 or len(second) > 1 or (first and second):
        raise AmbiguousResonance(
            f"Site {n} has {len(first)} first-type and {len(second)} second-type triplets",
            site=n,
            witnesses=first + second,
        )
    if first:
        return SiteClass(n, SiteTag.FIRST_TYPE, first[0])
    if second:
        return SiteClass(n, SiteTag.SECOND_TYPE, second[0])
    return SiteClass(n, SiteTag.GENERIC)


def site_atlas(I: TangentialSet, R: int) -> List[SiteClass]:
    """
    Classification of every site with |n| <= R.

    Raises:
        AmbiguousResonance: on the first site with more than one triplet
    """
    return [classify_site(I, n, R) for n in ball_sites(R)]


def classification_map(I: TangentialSet, R: int) -> Dict[Site, SiteClass]:
    """Site -> class for |n| <= R (admissible sets only)"""
    return {entry.site: entry for entry in site_atlas(I, R)}


def check_admissible(I: TangentialSet, R: int) -> AdmissibilityVerdict:
    """
    Verify triplet uniqueness, L1/L2 disjointness and the n <-> m involution
    for every normal site with |n| <= R.

    Returns:
        AdmissibilityVerdict listing L1 within R, the finite L2 and every
        violation with its witnesses
    """
    violations: List[Violation] = []
    worst_norm_sq: Optional[int] = None

    for n in ball_sites(R):
        first, second = _triplets(I, n)
        failures = []
        if len(first) > 1:
            failures.append(Violation(site=n.as_tuple(), condition="unique_first",
                                      witnesses=[p.to_record() for p in first]))
        if len(second) > 1:
            failures.append(Violation(site=n.as_tuple(), condition="unique_second",
                                      witnesses=[p.to_record() for p in second]))
        if first and second:
            failures.append(Violation(site=n.as_tuple(), condition="disjoint",
                                      witnesses=[p.to_record() for p in first + second]))
        if len(first) == 1 and len(second) == 0:
            # the partner must see the mirrored triplet and nothing else
            pair = first[0]
            back_first, back_second = _triplets(I, pair.m)
            if back_first != [pair.mirrored()] or back_second:
                failures.append(Violation(site=n.as_tuple(), condition="involution",
                                          witnesses=[p.to_record() for p in [pair] + back_first + back_second]))
        if len(second) == 1 and len(first) == 0:
            pair = second[0]
            back_first, back_second = _triplets(I, pair.m)
            if back_second != [pair.mirrored()] or back_first:
                failures.append(Violation(site=n.as_tuple(), condition="involution",
                                          witnesses=[p.to_record() for p in [pair] + back_first + back_second]))
        if failures:
            violations.extend(failures)
            if worst_norm_sq is None or n.norm_sq < worst_norm_sq:
                worst_norm_sq = n.norm_sq

    radius_verified = R if worst_norm_sq is None else isqrt(worst_norm_sq - 1) if worst_norm_sq > 0 else 0
    verdict = AdmissibilityVerdict(
        admissible=not violations,
        radius=R,
        radius_verified=min(R, radius_verified),
        L1=[p.to_record() for p in enumerate_first_type(I, R)],
        L2=[p.to_record() for p in enumerate_second_type(I)],
        violations=violations,
        unverified_conditions=list(UNVERIFIED_CONDITIONS),
    )
    if verdict.admissible:
        logger.info(f"✅ Tangential set admissible up to radius {R} ({len(verdict.L1)} L1, {len(verdict.L2)} L2 pairs)")
    else:
        logger.warning(f"⚠️ Tangential set not admissible: {len(violations)} violations, verified radius {verdict.radius_verified}")
    return verdict
