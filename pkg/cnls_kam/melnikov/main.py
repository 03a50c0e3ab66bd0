"""
Small-divisor checks of the normal-form frequencies and Monte-Carlo
estimation of the excluded parameter measure.

Every divisor splits into an integer part r * eps^-4 and an analytic part of
order xi. Divisors with r != 0 pass by scale separation; only r == 0 divisors
are evaluated numerically. A divisor is only formed for k whose tangential
momentum sum_a k_a i(a) cancels the momentum of the normal block(s) involved.

Blocks sharing the same analytic matrix (same component, resonance kind and
tangential indices) are grouped into one signature. Inside a signature the
sites are keyed by (integer part, momentum), so each (k, signature) pair is
evaluated once for all sites it reaches.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from scipy import stats

from cnls_kam.birkhoff.main import verify_nondegeneracy
from cnls_kam.birkhoff.models import FOUR_PI_SQ, FrequencyData, MelnikovBlock
from cnls_kam.errors import InvalidConfig
from cnls_kam.lattice.models import Site, SiteTag
from cnls_kam.melnikov.models import (
    ConditionSummary,
    MeasureRow,
    MeasureScan,
    MelnikovReport,
    ParameterBox,
    Witness,
)

logger = logging.getLogger(__name__)

MAX_LISTED_VIOLATIONS = 200
CONDITIONS = ("mel1", "mel2_gap", "mel2", "mel13", "mel14")

# (r, p1, p2) rows are packed into one int64; each entry must stay below KEY_BASE / 2
KEY_BASE = 1 << 20

BlockKey = Tuple[int, int, int]


def l1_ball(dim: int, K: int) -> np.ndarray:
    """Integer vectors with l1 norm <= K, sorted by norm then lexicographically"""
    points = np.zeros((1, 0), dtype=np.int64)
    used = np.zeros(1, dtype=np.int64)
    for _ in range(dim):
        new_points, new_used = [], []
        for t in range(-K, K + 1):
            ok = used + abs(t) <= K
            column = np.full((int(ok.sum()), 1), t, dtype=np.int64)
            new_points.append(np.hstack([points[ok], column]))
            new_used.append(used[ok] + abs(t))
        points = np.vstack(new_points)
        used = np.concatenate(new_used)
    order = np.lexsort(tuple(points[:, c] for c in reversed(range(dim))) + (used,))
    return points[order]


def encode_keys(keys: np.ndarray) -> np.ndarray:
    """Pack integer rows (r, p1, p2) into single int64 codes"""
    shifted = np.asarray(keys, dtype=np.int64) + KEY_BASE // 2
    return (shifted[..., 0] * KEY_BASE + shifted[..., 1]) * KEY_BASE + shifted[..., 2]


def block_momentum(block: MelnikovBlock) -> Site:
    """
    Momentum carried by the first coordinate of a block in the rotating frame:
    n on generic sites, n + i on first-type pairs, n - i on second-type pairs.
    """
    if block.pair is None:
        return block.n
    if block.tag is SiteTag.FIRST_TYPE:
        return block.n + block.pair.i
    return block.n - block.pair.i


def is_representative(block: MelnikovBlock) -> bool:
    """One block per resonant pair; the partner's block is the same one seen from m"""
    return block.pair is None or block.pair == block.pair.canonical()


@dataclass
class Signature:
    """Blocks sharing one analytic matrix; sites maps (integer part, momentum) -> sites"""
    h: int
    tag: SiteTag
    coupling_index: Optional[Tuple[int, int]]
    template: MelnikovBlock
    sites: Dict[BlockKey, List[Site]] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.template.dim

    def key_array(self) -> np.ndarray:
        return np.array(sorted(self.sites), dtype=np.int64).reshape(-1, 3)

    def multiplicity(self) -> np.ndarray:
        return np.array([len(self.sites[key]) for key in sorted(self.sites)], dtype=np.int64)

    def site_count(self) -> int:
        return sum(len(v) for v in self.sites.values())

    def gap_sites(self) -> List[Site]:
        """Sites whose block has zero integer part, where k = 0 gives a divisor"""
        return [n for key, group in sorted(self.sites.items()) if key[0] == 0 for n in group]


@dataclass
class _PairGroup:
    first: int
    second: int
    s2: int
    idx: np.ndarray
    evaluated: int
    total: int


class DivisorEngine:
    """
    Precomputed k-ball, integer parts, momenta and relevant index sets for one
    (FrequencyData, eps, tau, K_max, R). Build once and reuse across samples.
    """

    def __init__(self, freq: FrequencyData, eps: float, tau: float, K_max: int, R: int):
        if tau <= 0:
            raise InvalidConfig(f"tau must be positive, got {tau}")
        if K_max < 1:
            raise InvalidConfig(f"K_max must be at least 1, got {K_max}")
        self.freq = freq
        self.eps = eps
        self.tau = tau
        self.K_max = K_max
        self.R = R
        self.d, self.b = freq.d, freq.b

        self.k = l1_ball(self.d * self.b, K_max)
        self.knorm = np.abs(self.k).sum(axis=1)
        self.weight = np.maximum(self.knorm, 1).astype(float) ** tau
        keys = [(h, a) for h in range(1, self.d + 1) for a in range(self.b)]
        quartic = np.array([freq.omega[key].quartic for key in keys], dtype=np.int64)
        tangential = np.array([freq.I.sites[a].as_tuple() for _, a in keys], dtype=np.int64)
        self.r = self.k @ quartic
        self.momentum = self.k @ tangential
        self.code = encode_keys(np.column_stack([self.r, self.momentum]))
        self.nonzero = self.knorm > 0
        self._codes, self._code_counts = np.unique(self.code[self.nonzero], return_counts=True)

        self.L = np.array([freq.omega[key].lin_vector(self.d, self.b).ravel() for key in keys]) / FOUR_PI_SQ
        self.omega_const = np.array([float(freq.omega[key].const) for key in keys]) / FOUR_PI_SQ

        self.signatures = self._group_blocks(R)
        self.mel1_idx = np.nonzero(self.nonzero & (self.r == 0) & np.all(self.momentum == 0, axis=1))[0]
        self.mel2_idx, self.mel2_counts = self._single_masks()
        self.mel13 = self._pair_masks()
        logger.info(f"✅ Divisor engine: {len(self.k)} k-vectors, {len(self.signatures)} block signatures, "
                    f"{len(self.mel13)} block pairings, "
                    f"{len(self.mel1_idx) + sum(len(i) for i in self.mel2_idx) + sum(len(g.idx) for g in self.mel13)} "
                    f"divisors per sample")

    def _group_blocks(self, R: int) -> List[Signature]:
        groups: Dict[Tuple, Signature] = {}
        for (h, n), block in sorted(self.freq.blocks.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            if not n.within(R) or not is_representative(block):
                continue
            key = (h, block.tag.value, block.coupling_index)
            if key not in groups:
                groups[key] = Signature(h, block.tag, block.coupling_index, block)
            p = block_momentum(block)
            groups[key].sites.setdefault((block.quartic, p.n1, p.n2), []).append(n)
        return [groups[key] for key in sorted(groups, key=lambda k: (k[0], k[1], k[2] or (-1, -1)))]

    def _k_count(self, codes: np.ndarray) -> np.ndarray:
        """Number of nonzero k with each code"""
        if not len(self._codes):
            return np.zeros(len(codes), dtype=np.int64)
        pos = np.minimum(np.searchsorted(self._codes, codes), len(self._codes) - 1)
        return np.where(self._codes[pos] == codes, self._code_counts[pos], 0)

    def _single_masks(self) -> Tuple[List[np.ndarray], List[Tuple[int, int]]]:
        idx, counts = [], []
        nonzero_count = int(self.nonzero.sum())
        for sig in self.signatures:
            targets = encode_keys(-sig.key_array())
            idx.append(np.nonzero(self.nonzero & np.isin(self.code, targets))[0])
            evaluated = int((self._k_count(targets) * sig.multiplicity()).sum())
            counts.append((evaluated, nonzero_count * sig.site_count()))
        return idx, counts

    def _pair_masks(self) -> List[_PairGroup]:
        nonzero_count = int(self.nonzero.sum())
        groups = []
        for p, first in enumerate(self.signatures):
            keys1, mult1 = first.key_array(), first.multiplicity()
            for q in range(p, len(self.signatures)):
                second = self.signatures[q]
                keys2, mult2 = second.key_array(), second.multiplicity()
                pairs = (mult1[:, None] * mult2[None, :]).ravel()
                for s2 in (1, -1):
                    sums = (keys1[:, None, :] + s2 * keys2[None, :, :]).reshape(-1, 3)
                    targets, inverse = np.unique(encode_keys(-sums), return_inverse=True)
                    per_target = np.bincount(inverse.ravel(), weights=pairs, minlength=len(targets))
                    idx = np.nonzero(self.nonzero & np.isin(self.code, targets))[0]
                    evaluated = int(round(float((self._k_count(targets) * per_target).sum())))
                    total = nonzero_count * first.site_count() * second.site_count()
                    groups.append(_PairGroup(p, q, s2, idx, evaluated, total))
        return groups

    # --- evaluation ---------------------------------------------------

    def omega_analytic(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, self.d * self.b)
        return xi @ self.L.T + self.omega_const

    def validate(self, xi: np.ndarray) -> None:
        """Raise InvalidConfig when eps^-4 does not dominate the analytic parts at these points"""
        xi = np.asarray(xi, dtype=float).reshape(-1, self.d, self.b)
        omega = np.abs(self.omega_analytic(xi)).max()
        block_max = 0.0
        for sig in self.signatures:
            block_max = max(block_max, float(np.abs(sig.template.analytic_matrix(xi)).max()))
        bound = self.K_max * omega + 2 * block_max
        if self.eps ** -4 <= bound:
            raise InvalidConfig(f"Scale separation broken: eps^-4 = {self.eps ** -4:.4g} <= "
                                f"K_max * max|affine| = {bound:.4g}")

    @staticmethod
    def _block_smallness(a: np.ndarray, M: np.ndarray) -> np.ndarray:
        """|a + M| for scalar blocks, smallest singular value of a I + M for 2x2 blocks"""
        if M.shape[-1] == 1:
            return np.abs(a + M[:, 0, 0][:, None])
        b11 = a + M[:, 0, 0][:, None]
        b22 = a + M[:, 1, 1][:, None]
        b12 = M[:, 0, 1][:, None]
        b21 = M[:, 1, 0][:, None]
        det = b11 * b22 - b12 * b21
        fro2 = b11 ** 2 + b22 ** 2 + b12 ** 2 + b21 ** 2
        smax = np.sqrt((fro2 + np.sqrt(np.maximum(fro2 ** 2 - 4 * det ** 2, 0.0))) / 2)
        return np.divide(np.abs(det), smax, out=np.zeros_like(smax), where=smax > 0)

    def divisor_values(self, xi: np.ndarray) -> Dict[str, List[Tuple[object, np.ndarray]]]:
        """
        Scaled divisors |divisor| * max(|k|, 1)^tau for a batch of points.

        Returns:
            condition -> list of (group label, array of shape (S, len(group)))
        """
        xi = np.asarray(xi, dtype=float).reshape(-1, self.d, self.b)
        count = xi.shape[0]
        omega = self.omega_analytic(xi)
        out: Dict[str, List[Tuple[object, np.ndarray]]] = {name: [] for name in CONDITIONS}

        a1 = omega @ self.k[self.mel1_idx].T
        out["mel1"].append((None, np.abs(a1) * self.weight[self.mel1_idx]))

        matrices = [sig.template.analytic_matrix(xi) for sig in self.signatures]
        eigen = []
        for M in matrices:
            eigen.append(M[:, :1, 0].astype(complex) if M.shape[-1] == 1 else np.linalg.eigvals(M).astype(complex))

        for s, sig in enumerate(self.signatures):
            if sig.gap_sites():
                out["mel2_gap"].append((s, self._block_smallness(np.zeros((count, 1)), matrices[s])))

        for s, idx in enumerate(self.mel2_idx):
            a = omega @ self.k[idx].T
            out["mel2"].append((s, self._block_smallness(a, matrices[s]) * self.weight[idx]))

        for group in self.mel13:
            a = (omega @ self.k[group.idx].T).astype(complex)
            det = np.ones_like(a)
            for mu in eigen[group.first].T:
                for nu in eigen[group.second].T:
                    det *= a + mu[:, None] + group.s2 * nu[:, None]
            out["mel13"].append((group, np.abs(det) * self.weight[group.idx]))

        for h in range(1, self.d + 1):
            for h_prime in range(h + 1, self.d + 1):
                gap = np.abs(xi[:, h - 1, :].sum(axis=1) - xi[:, h_prime - 1, :].sum(axis=1)) / (2 * math.pi ** 2)
                out["mel14"].append(((h, h_prime), gap[:, None]))
        return out

    def sample_minima(self, xi: np.ndarray) -> np.ndarray:
        """Per-point min over all conditions of the scaled divisors; excluded at gamma iff < gamma"""
        values = self.divisor_values(xi)
        count = np.asarray(xi).reshape(-1, self.d, self.b).shape[0]
        best = np.full(count, np.inf)
        for groups in values.values():
            for _, arr in groups:
                if arr.shape[1]:
                    best = np.minimum(best, arr.min(axis=1))
        return best

    # --- witnesses ----------------------------------------------------

    def _row_key(self, row: int) -> BlockKey:
        return (int(self.r[row]), int(self.momentum[row, 0]), int(self.momentum[row, 1]))

    def _witness(self, condition: str, label, col: int, value: float, gamma: float) -> Witness:
        if condition == "mel14":
            h, h_prime = label
            return Witness(condition=condition, h=h, h_prime=h_prime, value=value, margin=value / gamma)
        if condition == "mel1":
            k = self.k[self.mel1_idx[col]]
            return Witness(condition=condition, k=k.tolist(), h=1, value=value / self.weight[self.mel1_idx[col]],
                           margin=value / gamma)
        if condition == "mel2_gap":
            sig = self.signatures[label]
            return Witness(condition=condition, k=[0] * (self.d * self.b), h=sig.h,
                           n=sig.gap_sites()[0].as_tuple(), value=value, margin=value / gamma)
        if condition == "mel2":
            sig = self.signatures[label]
            row = self.mel2_idx[label][col]
            target = tuple(-v for v in self._row_key(row))
            site = sig.sites[target][0]
            return Witness(condition=condition, k=self.k[row].tolist(), h=sig.h, n=site.as_tuple(),
                           value=value / self.weight[row], margin=value / gamma)
        group: _PairGroup = label
        row = group.idx[col]
        first, second = self.signatures[group.first], self.signatures[group.second]
        target = tuple(-v for v in self._row_key(row))
        n = m = None
        for key1, sites1 in first.sites.items():
            key2 = tuple(group.s2 * (t - v) for t, v in zip(target, key1))
            if key2 in second.sites:
                n, m = sites1[0], second.sites[key2][0]
                break
        return Witness(condition=condition, k=self.k[row].tolist(), h=first.h, h_prime=second.h,
                       n=n.as_tuple() if n else None, m=m.as_tuple() if m else None,
                       value=value / self.weight[row], margin=value / gamma)

    def counts(self, condition: str) -> Tuple[int, int]:
        """(evaluated, auto_passed) divisor counts for a condition"""
        if condition == "mel1":
            nonzero = int(self.nonzero.sum())
            return len(self.mel1_idx), nonzero - len(self.mel1_idx)
        if condition == "mel2_gap":
            evaluated = sum(len(sig.gap_sites()) for sig in self.signatures)
            return evaluated, sum(sig.site_count() for sig in self.signatures) - evaluated
        if condition == "mel2":
            evaluated = sum(c[0] for c in self.mel2_counts)
            return evaluated, sum(c[1] for c in self.mel2_counts) - evaluated
        if condition == "mel13":
            evaluated = sum(g.evaluated for g in self.mel13)
            return evaluated, sum(g.total for g in self.mel13) - evaluated
        pairs = self.d * (self.d - 1) // 2
        return pairs, 0


def _jacobian_integer_matrix(freq: FrequencyData) -> sp.Matrix:
    """d omega / d xi in units of 1/(4 pi^2), rows and columns in (h, a) order"""
    keys = [(h, a) for h in range(1, freq.d + 1) for a in range(freq.b)]
    rows = []
    for key in keys:
        lin = freq.omega[key].lin_map
        rows.append([sp.Rational(lin.get(col, 0)) for col in keys])
    return sp.Matrix(rows)


def frequency_jacobian_det(freq: FrequencyData) -> sp.Expr:
    """Exact determinant of d omega / d xi over all (h, a)"""
    integer = _jacobian_integer_matrix(freq)
    return sp.simplify(integer.det() / (4 * sp.pi ** 2) ** integer.rows)


def check_nondegeneracy(freq: FrequencyData) -> bool:
    """
    The Jacobian d omega / d xi is block diagonal over components with each
    block equal to the closed-form b x b matrix, and its determinant is nonzero.
    """
    template, _ = verify_nondegeneracy(freq.b)
    jacobian = _jacobian_integer_matrix(freq) / (4 * sp.pi ** 2)
    b = freq.b
    for h in range(freq.d):
        for h2 in range(freq.d):
            block = jacobian[h * b:(h + 1) * b, h2 * b:(h2 + 1) * b]
            expected = template if h == h2 else sp.zeros(b, b)
            if block != expected:
                logger.warning(f"⚠️ Frequency Jacobian block ({h + 1},{h2 + 1}) differs from the closed form")
                return False
    return bool(frequency_jacobian_det(freq) != 0)


def check_conditions(xi: np.ndarray, eps: float, gamma: float, tau: float, K_max: int, R: int,
                     freq: FrequencyData, engine: Optional[DivisorEngine] = None) -> MelnikovReport:
    """
    Check the single-site (k != 0), block-gap (k = 0), two-block and component-gap divisors at one point.

    Args:
        xi: Parameter point, shape (d, b)
        eps: Scale parameter (integer parts carry eps^-4)
        gamma: Diophantine constant, > 0
        tau: Diophantine exponent, > 0
        K_max: Largest l1 norm of k
        R: Largest |n| of blocks
        freq: Frequency data
        engine: Reuse a prebuilt engine with matching parameters

    Returns:
        MelnikovReport; failures are listed, not raised

    Raises:
        InvalidConfig: gamma <= 0 or broken scale separation
    """
    if gamma <= 0:
        raise InvalidConfig(f"gamma must be positive, got {gamma}")
    xi = np.asarray(xi, dtype=float).reshape(freq.d, freq.b)
    engine = engine or DivisorEngine(freq, eps, tau, K_max, R)
    engine.validate(xi)
    values = engine.divisor_values(xi[None])

    summaries: List[ConditionSummary] = []
    violations: List[Witness] = []
    violation_count = 0
    for name in CONDITIONS:
        worst: Optional[Witness] = None
        for label, arr in values[name]:
            row = arr[0]
            if row.size == 0:
                continue
            col = int(np.argmin(row))
            if worst is None or row[col] / gamma < worst.margin:
                worst = engine._witness(name, label, col, float(row[col]), gamma)
            failing = np.nonzero(row < gamma)[0]
            violation_count += len(failing)
            for c in failing[:max(0, MAX_LISTED_VIOLATIONS - len(violations))]:
                violations.append(engine._witness(name, label, int(c), float(row[c]), gamma))
        evaluated, auto = engine.counts(name)
        summaries.append(ConditionSummary(name=name, evaluated=evaluated, auto_passed=auto,
                                          worst_margin=worst.margin if worst else None, worst=worst))

    nondegenerate = check_nondegeneracy(freq)
    report = MelnikovReport(
        xi=xi.tolist(),
        epsilon=eps,
        gamma=gamma,
        tau=tau,
        K_max=K_max,
        radius=R,
        conditions=summaries,
        violations=violations,
        violation_count=violation_count,
        nondegenerate=nondegenerate,
        passed=violation_count == 0 and nondegenerate,
    )
    if report.passed:
        logger.info(f"✅ Melnikov conditions hold at gamma={gamma:g} (|k| <= {K_max}, |n| <= {R})")
    else:
        logger.warning(f"⚠️ {violation_count} small divisors below gamma={gamma:g}")
    return report


def scan_measure(box: ParameterBox, gamma_list: Sequence[float], tau: float, eps: float, K_max: int, R: int,
                 samples: int, seed: int, freq: FrequencyData, threads: int = 1, chunk: int = 256) -> MeasureScan:
    """
    Monte-Carlo fraction of the box excluded by any condition, per gamma.

    One pass computes each sample's smallest scaled divisor; a sample is
    excluded at gamma iff that value is below gamma, so the exclusion sets are
    nested in gamma by construction.

    Raises:
        InvalidConfig: gamma <= 0 or broken scale separation on the box
    """
    if any(g <= 0 for g in gamma_list):
        raise InvalidConfig(f"Every gamma must be positive, got {list(gamma_list)}")
    if samples < 1000:
        logger.warning(f"⚠️ Only {samples} samples requested; intervals will be wide")
    engine = DivisorEngine(freq, eps, tau, K_max, R)
    engine.validate(box.corners())
    points = box.sample(samples, seed)

    starts = list(range(0, samples, chunk))

    def run_chunk(start: int) -> np.ndarray:
        return engine.sample_minima(points[start:start + chunk])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]
    minima = np.concatenate(parts) if parts else np.zeros(0)
    logger.info(f"✅ Scanned {samples} parameter points in {len(starts)} chunks")

    rows = []
    for gamma in sorted(gamma_list, reverse=True):
        excluded = int(np.sum(minima < gamma))
        ci = stats.binomtest(excluded, samples).proportion_ci(confidence_level=0.95, method="wilson")
        rows.append(MeasureRow(gamma=gamma, excluded=excluded, excluded_fraction=excluded / samples,
                               ci_low=float(ci.low), ci_high=float(ci.high)))

    monotone = all(rows[p].excluded >= rows[p + 1].excluded for p in range(len(rows) - 1))
    slope = intercept = None
    fit_rows = [r for r in rows if r.excluded > 0]
    if len(fit_rows) >= 2:
        fit = stats.linregress([math.log(r.gamma) for r in fit_rows], [math.log(r.excluded_fraction) for r in fit_rows])
        slope, intercept = float(fit.slope), float(fit.intercept)

    return MeasureScan(samples=samples, seed=seed, tau=tau, epsilon=eps, K_max=K_max, radius=R,
                       rows=rows, monotone=monotone, slope=slope, intercept=intercept)
