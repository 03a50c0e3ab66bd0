"""
Polynomial vector-field algebra: the cubic lattice field, Lie brackets and
structural checks (reversibility, momentum, Toeplitz-Lipschitz, norms).

Bracket convention: [X, Y]^w = X(Y^w) - Y(X^w), so that for the diagonal
linear field Lambda = sum i*sigma*lambda_n z^sigma_n d/dz^sigma_n the identity
[Lambda, c z^alpha d/dz_w] = i(sum_v alpha_v sigma_v lambda_v - sigma_w lambda_w) c
holds term by term.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from cnls_kam.errors import InvalidConfig, TruncationOverflow, TruncationTooSmall
from cnls_kam.lattice.models import Site, TangentialSet, ball_sites
from cnls_kam.polyvf.models import (
    ModeState,
    ModeVar,
    PolyVectorField,
    TermKey,
    TLEntry,
    TLReport,
    canonical_factors,
    mirror_key,
)

logger = logging.getLogger(__name__)

CUBIC_COEFF = 1j / (4 * math.pi ** 2)


def _mode_vars(d: int, sites: List[Site]) -> Dict[Tuple[int, Site, int], ModeVar]:
    return {(h, n, s): ModeVar(h, n, s) for h in range(1, d + 1) for n in sites for s in (1, -1)}


def build_cubic_P0(d: int, R: int) -> PolyVectorField:
    """
    Cubic part of the lattice equations truncated to |n| <= R:

        sum_h sum_{i+j-m-n=0} i/(2 pi)^2 q_{hi} q_{hj} qbar_{hm} d/dq_{hn}

    plus the conjugate family. The ordered (i, j) contributions are merged,
    so the stored coefficient is i/(4 pi^2) for i == j and i/(2 pi^2) otherwise.

    Args:
        d: Number of components
        R: Truncation radius, R >= 1

    Returns:
        PolyVectorField with every site inside the truncation
    """
    if R < 1:
        raise InvalidConfig(f"Truncation radius must be at least 1, got {R}")
    sites = ball_sites(R)
    site_set = set(sites)
    var = _mode_vars(d, sites)
    field = PolyVectorField(d, R)

    for h in range(1, d + 1):
        for n in sites:
            target = var[(h, n, 1)]
            target_bar = var[(h, n, -1)]
            for a, i in enumerate(sites):
                for j in sites[a:]:
                    m = i + j - n
                    if m not in site_set:
                        continue
                    c = CUBIC_COEFF if i == j else 2 * CUBIC_COEFF
                    field.add_key((target, canonical_factors((var[(h, i, 1)], var[(h, j, 1)], var[(h, m, -1)]))), c)
                    field.add_key((target_bar, canonical_factors((var[(h, i, -1)], var[(h, j, -1)], var[(h, m, 1)]))),
                                  c.conjugate())
        logger.info(f"✅ Cubic field component {h}/{d} built ({len(field)} terms so far)")
    return field.prune()


def linear_part(d: int, R: int) -> PolyVectorField:
    """Lambda = sum i lambda_n q d/dq - i lambda_n qbar d/dqbar"""
    field = PolyVectorField(d, R)
    for h in range(1, d + 1):
        for n in ball_sites(R):
            if n.norm_sq == 0:
                continue
            for s in (1, -1):
                v = ModeVar(h, n, s)
                field.add_key((v, (v,)), 1j * s * n.norm_sq)
    return field


def momentum_field(d: int, R: int, l: int) -> PolyVectorField:
    """M_l = sum sigma i (n)_l z^sigma d/dz^sigma"""
    if l not in (1, 2):
        raise InvalidConfig(f"Momentum index must be 1 or 2, got {l}")
    field = PolyVectorField(d, R)
    for h in range(1, d + 1):
        for n in ball_sites(R):
            if n.component(l) == 0:
                continue
            for s in (1, -1):
                v = ModeVar(h, n, s)
                field.add_key((v, (v,)), 1j * s * n.component(l))
    return field


def _index_by_factor(field: PolyVectorField) -> Dict[ModeVar, List[Tuple[TermKey, complex, int]]]:
    index: Dict[ModeVar, List[Tuple[TermKey, complex, int]]] = defaultdict(list)
    for key, value in field.items():
        counts: Dict[ModeVar, int] = defaultdict(int)
        for v in key[1]:
            counts[v] += 1
        for v, k in counts.items():
            index[v].append((key, value, k))
    return index


def _without_one(factors: Tuple[ModeVar, ...], v: ModeVar) -> Tuple[ModeVar, ...]:
    k = factors.index(v)
    return factors[:k] + factors[k + 1:]


def _derive_along(X: PolyVectorField, Y: PolyVectorField, sign: float,
                  out: Dict[TermKey, complex], radius: int, drop_overflow: bool) -> int:
    """Accumulate sign * X(Y^w) into out; returns the number of dropped terms"""
    dropped = 0
    by_factor = _index_by_factor(Y)
    r2 = radius * radius
    for (x_target, x_factors), x_coeff in X.items():
        for (y_target, y_factors), y_coeff, mult in by_factor.get(x_target, ()):
            factors = canonical_factors(_without_one(y_factors, x_target) + x_factors)
            if any(v.n.norm_sq > r2 for v in factors) or y_target.n.norm_sq > r2:
                if not drop_overflow:
                    raise TruncationOverflow(f"Bracket term leaves radius {radius}")
                dropped += 1
                continue
            out[(y_target, factors)] += sign * mult * x_coeff * y_coeff
    return dropped


def lie_bracket(X: PolyVectorField, Y: PolyVectorField, radius: Optional[int] = None,
                drop_overflow: bool = False) -> PolyVectorField:
    """
    [X, Y]^w = X(Y^w) - Y(X^w)

    Args:
        X, Y: Fields with the same component count
        radius: Truncation of the result, defaults to min(X.R, Y.R)
        drop_overflow: Drop (and count) terms outside the radius instead of raising

    Returns:
        The bracket; `dropped` and `pruned` count discarded terms

    Raises:
        TruncationOverflow: a produced term leaves the radius and drop_overflow is False
    """
    if X.d != Y.d:
        raise InvalidConfig(f"Component counts differ: {X.d} vs {Y.d}")
    radius = min(X.R, Y.R) if radius is None else radius
    out: Dict[TermKey, complex] = defaultdict(complex)
    dropped = _derive_along(X, Y, 1.0, out, radius, drop_overflow)
    dropped += _derive_along(Y, X, -1.0, out, radius, drop_overflow)
    result = PolyVectorField(X.d, radius, out)
    result.dropped = dropped
    if dropped:
        logger.warning(f"⚠️ Lie bracket dropped {dropped} terms outside radius {radius}")
    return result.prune()


def check_reversible(X: PolyVectorField, tol: float = 0.0) -> bool:
    """coeff(mirror) == -coeff for every term, mirror flipping every variable sign"""
    for key, value in X.items():
        partner = X.coeff(*mirror_key(key))
        if abs(partner + value) > tol * max(1.0, abs(value)):
            return False
    return True


def check_real(X: PolyVectorField, tol: float = 0.0) -> bool:
    """coeff(mirror) == conj(coeff): X maps the real subspace qbar = conj(q) to itself"""
    for key, value in X.items():
        partner = X.coeff(*mirror_key(key))
        if abs(partner - value.conjugate()) > tol * max(1.0, abs(value)):
            return False
    return True


def term_momentum(key: TermKey, l: int) -> int:
    target, factors = key
    return sum(v.sign * v.n.component(l) for v in factors) - target.sign * target.n.component(l)


def check_momentum(X: PolyVectorField, l: int) -> bool:
    """Every term conserves the l-th momentum component"""
    return all(term_momentum(key, l) == 0 for key in X.keys())


def seq_norm(z: ModeState, rho: float) -> float:
    """sum_h sum_n exp(|n| rho) |z_{hn}|"""
    return float(sum(math.exp(n.norm * rho) * abs(value) for (_, n), value in z.items()))


def apply(X: PolyVectorField, state: ModeState) -> ModeState:
    """
    Evaluate X on the real subspace and return the d/dq components.

    Modes of the state outside the field's support are ignored.
    """
    plus, _ = X.evaluate(state)
    return {mode: value for mode, value in plus.items() if value != 0}


def _monomial_sup(factors: Tuple[ModeVar, ...], rho: float, s: float) -> float:
    """sup of |z^alpha| over the weighted l1 ball of radius s (z and zbar share a mode)"""
    if not factors:
        return 1.0
    counts: Dict[Tuple[int, Site], int] = defaultdict(int)
    for v in factors:
        counts[v.mode] += 1
    total = len(factors)
    log_value = total * math.log(s)
    for (_, n), a in counts.items():
        log_value += a * (math.log(a / total) - n.norm * rho)
    return math.exp(log_value)


def vf_norm_upper(X: PolyVectorField, rho: float, s: float) -> float:
    """
    Upper bound of sum_w exp(|w| rho)/s * sup |X^w| over ||z||_rho < s.

    Each monomial is maximised separately (weighted AM-GM), which is exact for
    a single-monomial field.
    """
    if rho <= 0 or s <= 0:
        raise InvalidConfig(f"rho and s must be positive, got rho={rho}, s={s}")
    total = 0.0
    for (target, factors), value in X.items():
        total += abs(value) * math.exp(target.n.norm * rho) / s * _monomial_sup(factors, rho, s)
    return total


def _weighted_value(X: PolyVectorField, values: np.ndarray, weights: np.ndarray, s: float) -> float:
    plus, minus = X.evaluate_arrays(values)
    return float(np.sum(weights * (np.abs(plus) + np.abs(minus))) / s)


def vf_norm_sample_lower(X: PolyVectorField, rho: float, s: float, samples: int = 200, seed: int = 0) -> float:
    """
    Monte-Carlo lower estimate of the field norm: random points on the sphere
    ||z||_rho = s plus the per-monomial optimum points.
    """
    if rho <= 0 or s <= 0:
        raise InvalidConfig(f"rho and s must be positive, got rho={rho}, s={s}")
    if len(X) == 0:
        return 0.0
    modes = X.mode_index()
    position = {mode: k for k, mode in enumerate(modes)}
    weights = np.array([math.exp(n.norm * rho) for (_, n) in modes])
    rng = np.random.default_rng(seed)
    best = 0.0

    for _ in range(samples):
        mags = rng.exponential(size=len(modes))
        mags *= s / np.sum(weights * mags)
        phases = np.exp(2j * np.pi * rng.random(len(modes)))
        best = max(best, _weighted_value(X, mags * phases, weights, s))

    for (_, factors), value in X.items():
        counts: Dict[Tuple[int, Site], int] = defaultdict(int)
        for v in factors:
            counts[v.mode] += 1
        point = np.zeros(len(modes), dtype=np.complex128)
        total = max(len(factors), 1)
        for mode, a in counts.items():
            point[position[mode]] = a * s / (total * weights[position[mode]])
        best = max(best, _weighted_value(X, point, weights, s))
    return best


@dataclass
class TLBudget:
    """Sampling budget of the Toeplitz-Lipschitz check"""
    support: TangentialSet
    samples: int = 32
    seed: int = 0
    rho: float = 0.5
    base_radius: int = 2
    tol: float = 1e-14


def _jacobian_entry(by_target: Dict[ModeVar, List[Tuple[Tuple[ModeVar, ...], complex]]],
                    target: ModeVar, var: ModeVar, point: Dict[ModeVar, complex]) -> complex:
    total = 0j
    for factors, value in by_target.get(target, ()):
        if var not in factors:
            continue
        mult = factors.count(var)
        rest = _without_one(factors, var)
        prod = value * mult
        for v in rest:
            prod *= point.get(v, 0j)
            if prod == 0:
                break
        total += prod
    return total


def toeplitz_lipschitz_check(X: PolyVectorField, c: Site, K: int, budget: TLBudget) -> TLReport:
    """
    Follow Jacobian entries dX^{z^sigma_{h(n+tc)}} / dz^{+-sigma}_{h'(m+-tc)} along t.

    Entries are evaluated at a random point supported on the budget's sites.
    For each sequence the limits t -> +inf and t -> -inf are estimated by the
    outermost t inside the truncation, and the Lipschitz defect is
    max_{|t| > K} |t| * |entry(t) - limit|.

    Raises:
        TruncationTooSmall: no t with |t| > K fits inside the truncation
    """
    if c.norm_sq == 0:
        raise InvalidConfig("Direction c must be nonzero")
    t_max = int(math.floor(X.R / c.norm))
    if t_max <= K:
        raise TruncationTooSmall(f"Radius {X.R} leaves no |t| > {K} along direction {c}")

    rng = np.random.default_rng(budget.seed)
    point: Dict[ModeVar, complex] = {}
    for h in range(1, X.d + 1):
        for site in budget.support:
            value = rng.uniform(0.5, 1.0) * np.exp(2j * np.pi * rng.random())
            point[ModeVar(h, site, 1)] = complex(value)
            point[ModeVar(h, site, -1)] = complex(np.conj(value))

    by_target: Dict[ModeVar, List[Tuple[Tuple[ModeVar, ...], complex]]] = defaultdict(list)
    for (target, factors), value in X.items():
        by_target[target].append((factors, value))

    support = list(budget.support)
    differences = sorted({k - j for j in support for k in support})
    sums = sorted({a + b for a in support for b in support})
    base_sites = ball_sites(budget.base_radius)

    entries: List[TLEntry] = []
    cross_max = 0.0
    for _ in range(budget.samples):
        h = int(rng.integers(1, X.d + 1))
        h_prime = h if rng.random() < 0.75 else int(rng.integers(1, X.d + 1))
        sigma = 1 if rng.random() < 0.5 else -1
        same_sign = bool(rng.random() < 0.5)
        n = base_sites[int(rng.integers(len(base_sites)))]
        if rng.random() < 0.5:
            m = base_sites[int(rng.integers(len(base_sites)))]
        elif same_sign:
            m = n + differences[int(rng.integers(len(differences)))]
        else:
            m = sums[int(rng.integers(len(sums)))] - n

        step = 1 if same_sign else -1
        series: Dict[int, complex] = {}
        for t in range(-t_max, t_max + 1):
            target_site = n + c.scale(t)
            var_site = m + c.scale(step * t)
            if not (target_site.within(X.R) and var_site.within(X.R)):
                continue
            target = ModeVar(h, target_site, sigma)
            var = ModeVar(h_prime, var_site, sigma if same_sign else -sigma)
            series[t] = _jacobian_entry(by_target, target, var, point)
        if not series:
            continue

        top, bottom = max(series), min(series)
        limit_plus, limit_minus = series[top], series[bottom]
        defect = 0.0
        for t, value in series.items():
            if abs(t) <= K:
                continue
            limit = limit_plus if t > 0 else limit_minus
            defect = max(defect, abs(t) * abs(value - limit))
        offset = (n - m) if same_sign else (n + m)
        peak = max(abs(v) for v in series.values())
        if h != h_prime:
            cross_max = max(cross_max, peak)
        entries.append(TLEntry(
            h=h, h_prime=h_prime, n=n.as_tuple(), m=m.as_tuple(), sigma=sigma, same_sign=same_sign,
            limit=(float(limit_plus.real), float(limit_plus.imag)),
            lipschitz_defect=defect,
            decay_ratio=peak * math.exp(offset.norm * budget.rho),
        ))

    scale = max((abs(v) for _, v in X.items()), default=1.0)
    worst = max((e.lipschitz_defect for e in entries), default=0.0)
    report = TLReport(
        direction=c.as_tuple(),
        K=K,
        t_max=t_max,
        checked=len(entries),
        limits_exist=worst <= budget.tol * max(scale, 1.0),
        max_lipschitz_defect=worst,
        decay_constant=max((e.decay_ratio for e in entries), default=0.0),
        cross_component_max=cross_max,
        entries=entries,
    )
    logger.info(f"✅ Toeplitz-Lipschitz check along {c}: {report.checked} sequences, "
                f"worst defect {report.max_lipschitz_defect:.3e}")
    return report
