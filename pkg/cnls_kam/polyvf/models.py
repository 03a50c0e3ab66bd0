"""
Sparse polynomial vector fields over the mode variables q_{hn}, qbar_{hn}
"""

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from cnls_kam.errors import InvalidConfig, TruncationOverflow
from cnls_kam.lattice.models import Site

# Coefficients below this modulus after merging are structural zeros
PRUNE_THRESHOLD = 1e-15

ModeState = Dict[Tuple[int, Site], complex]


@dataclass(frozen=True, order=True)
class ModeVar:
    """q^sign_{h,n}; sign +1 is q, -1 is qbar"""
    h: int
    n: Site
    sign: int

    def conj(self) -> "ModeVar":
        return ModeVar(self.h, self.n, -self.sign)

    @property
    def mode(self) -> Tuple[int, Site]:
        return (self.h, self.n)

    def __str__(self) -> str:
        return f"{'q' if self.sign > 0 else 'qb'}{self.h}{self.n}"


Factors = Tuple[ModeVar, ...]
TermKey = Tuple[ModeVar, Factors]


def canonical_factors(factors: Iterable[ModeVar]) -> Factors:
    """Multiset of factors in sorted order"""
    return tuple(sorted(factors))


def mirror_key(key: TermKey) -> TermKey:
    target, factors = key
    return target.conj(), canonical_factors(v.conj() for v in factors)


@dataclass(frozen=True)
class MonomialTerm:
    """coeff * prod(factors) d/d(target)"""
    target: ModeVar
    coeff: complex
    factors: Factors

    @property
    def degree(self) -> int:
        return len(self.factors)

    @property
    def key(self) -> TermKey:
        return (self.target, self.factors)

    def sites(self) -> List[Site]:
        """Target site followed by the factor sites"""
        return [self.target.n] + [v.n for v in self.factors]

    def __str__(self) -> str:
        body = "*".join(str(v) for v in self.factors) or "1"
        return f"({self.coeff:.6g}) {body} d/d{self.target}"


class PolyVectorField:
    """
    Finite sum of monomial terms keyed by (target, sorted factors).

    Coefficients of equal keys are merged on insertion; `prune()` removes
    merged coefficients below PRUNE_THRESHOLD and counts them in `pruned`.
    Terms discarded because they left the truncation are counted in `dropped`.
    """

    def __init__(self, d: int, R: int, terms: Optional[Mapping[TermKey, complex]] = None):
        if d < 1:
            raise InvalidConfig(f"Component count must be positive, got {d}")
        self.d = d
        self.R = R
        self._terms: Dict[TermKey, complex] = defaultdict(complex)
        self.dropped = 0
        self.pruned = 0
        self._compiled = None
        if terms:
            for key, value in terms.items():
                self._terms[key] += value

    # --- construction -------------------------------------------------

    def add(self, target: ModeVar, factors: Iterable[ModeVar], coeff: complex, check: bool = True) -> None:
        factors = canonical_factors(factors)
        if check:
            for v in (target,) + factors:
                if not v.n.within(self.R):
                    raise TruncationOverflow(f"Site {v.n} exceeds truncation radius {self.R}")
                if not 1 <= v.h <= self.d:
                    raise InvalidConfig(f"Component {v.h} outside 1..{self.d}")
        self._terms[(target, factors)] += coeff
        self._compiled = None

    def add_key(self, key: TermKey, coeff: complex) -> None:
        self._terms[key] += coeff
        self._compiled = None

    def prune(self, threshold: float = PRUNE_THRESHOLD) -> "PolyVectorField":
        small = [key for key, value in self._terms.items() if abs(value) < threshold]
        for key in small:
            del self._terms[key]
        self.pruned += len(small)
        self._compiled = None
        return self

    def copy(self) -> "PolyVectorField":
        new = PolyVectorField(self.d, self.R, self._terms)
        new.dropped, new.pruned = self.dropped, self.pruned
        return new

    # --- access -------------------------------------------------------

    def coeff(self, target: ModeVar, factors: Iterable[ModeVar]) -> complex:
        return self._terms.get((target, canonical_factors(factors)), 0j)

    def items(self) -> Iterator[Tuple[TermKey, complex]]:
        return iter(self._terms.items())

    def keys(self) -> Iterator[TermKey]:
        return iter(self._terms.keys())

    @property
    def terms(self) -> List[MonomialTerm]:
        return [MonomialTerm(t, c, f) for (t, f), c in sorted(self._terms.items(), key=lambda kv: kv[0])]

    def __iter__(self) -> Iterator[MonomialTerm]:
        for (t, f), c in self._terms.items():
            yield MonomialTerm(t, c, f)

    def __len__(self) -> int:
        return len(self._terms)

    def __contains__(self, key: TermKey) -> bool:
        return key in self._terms

    def degree_part(self, degree: int) -> "PolyVectorField":
        return PolyVectorField(self.d, self.R, {k: v for k, v in self._terms.items() if len(k[1]) == degree})

    def filter(self, predicate) -> "PolyVectorField":
        """Sub-field of the terms for which predicate(key, coeff) holds"""
        return PolyVectorField(self.d, self.R, {k: v for k, v in self._terms.items() if predicate(k, v)})

    def max_abs(self) -> float:
        return max((abs(v) for v in self._terms.values()), default=0.0)

    # --- arithmetic ---------------------------------------------------

    def _check_compatible(self, other: "PolyVectorField") -> None:
        if self.d != other.d:
            raise InvalidConfig(f"Component counts differ: {self.d} vs {other.d}")

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        self._check_compatible(other)
        new = PolyVectorField(self.d, max(self.R, other.R), self._terms)
        for key, value in other._terms.items():
            new._terms[key] += value
        new.dropped = self.dropped + other.dropped
        return new.prune()

    def __neg__(self) -> "PolyVectorField":
        return self * -1.0

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return self + (-other)

    def __mul__(self, scalar: complex) -> "PolyVectorField":
        return PolyVectorField(self.d, self.R, {k: v * scalar for k, v in self._terms.items()})

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"PolyVectorField(d={self.d}, R={self.R}, terms={len(self)})"

    # --- numeric evaluation -------------------------------------------

    def _compile(self):
        """Index modes and pack terms into per-degree arrays for vectorised evaluation"""
        if self._compiled is not None:
            return self._compiled
        modes = sorted({v.mode for (t, f) in self._terms for v in (t,) + f})
        index = {mode: k for k, mode in enumerate(modes)}
        by_degree: Dict[int, List[Tuple[TermKey, complex]]] = defaultdict(list)
        for key, value in self._terms.items():
            by_degree[len(key[1])].append((key, value))
        packed = []
        for degree, entries in sorted(by_degree.items()):
            count = len(entries)
            target_idx = np.empty(count, dtype=np.int64)
            target_sign = np.empty(count, dtype=np.int8)
            factor_idx = np.zeros((count, max(degree, 1)), dtype=np.int64)
            factor_sign = np.ones((count, max(degree, 1)), dtype=np.int8)
            coeffs = np.empty(count, dtype=np.complex128)
            for row, ((target, factors), value) in enumerate(entries):
                target_idx[row] = index[target.mode]
                target_sign[row] = target.sign
                for col, v in enumerate(factors):
                    factor_idx[row, col] = index[v.mode]
                    factor_sign[row, col] = v.sign
                coeffs[row] = value
            packed.append((degree, target_idx, target_sign, factor_idx, factor_sign, coeffs))
        self._compiled = (modes, index, packed)
        return self._compiled

    def evaluate_arrays(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Evaluate at mode values given in `mode_index()` order.

        Args:
            values: complex array of q values, one per indexed mode (qbar = conj)

        Returns:
            (plus, minus): the d/dq and d/dqbar components per indexed mode
        """
        modes, _, packed = self._compile()
        values = np.asarray(values, dtype=np.complex128)
        plus = np.zeros(len(modes), dtype=np.complex128)
        minus = np.zeros(len(modes), dtype=np.complex128)
        conj_values = np.conj(values)
        for degree, target_idx, target_sign, factor_idx, factor_sign, coeffs in packed:
            if degree == 0:
                contrib = coeffs.copy()
            else:
                gathered = np.where(factor_sign > 0, values[factor_idx], conj_values[factor_idx])
                contrib = coeffs * np.prod(gathered[:, :degree], axis=1)
            is_plus = target_sign > 0
            np.add.at(plus, target_idx[is_plus], contrib[is_plus])
            np.add.at(minus, target_idx[~is_plus], contrib[~is_plus])
        return plus, minus

    def mode_index(self) -> List[Tuple[int, Site]]:
        return list(self._compile()[0])

    def evaluate(self, state: ModeState) -> Tuple[ModeState, ModeState]:
        """Tangent vector at a point of the real subspace (qbar = conj q)"""
        modes, _, _ = self._compile()
        values = np.array([state.get(mode, 0j) for mode in modes], dtype=np.complex128)
        plus, minus = self.evaluate_arrays(values)
        return dict(zip(modes, plus)), dict(zip(modes, minus))


class TermCountStats(BaseModel):
    """Bookkeeping attached to a produced field"""
    terms: int = Field(..., description="Number of stored terms")
    dropped: int = Field(0, description="Terms discarded for leaving the truncation")
    pruned: int = Field(0, description="Merged coefficients below the structural-zero threshold")


class TLEntry(BaseModel):
    """One sampled Jacobian entry sequence along n + t c"""
    h: int = Field(..., description="Component of the differentiated field entry")
    h_prime: int = Field(..., description="Component of the differentiation variable")
    n: Tuple[int, int] = Field(..., description="Base site of the field entry")
    m: Tuple[int, int] = Field(..., description="Base site of the variable")
    sigma: int = Field(..., description="Sign of the field entry variable")
    same_sign: bool = Field(..., description="True for d/dz^sigma, False for d/dz^-sigma")
    limit: Tuple[float, float] = Field(..., description="Estimated limit (re, im)")
    lipschitz_defect: float = Field(..., description="max |t| * |entry(t) - limit| over |t| > K")
    decay_ratio: float = Field(..., description="max |entry| * exp(|n -+ m| rho)")


class TLReport(BaseModel):
    """Toeplitz-Lipschitz check along a lattice direction"""
    direction: Tuple[int, int] = Field(..., description="Direction c")
    K: int = Field(..., description="Threshold beyond which the Lipschitz rate is measured")
    t_max: int = Field(..., description="Largest |t| fitting inside the truncation")
    checked: int = Field(..., description="Entry sequences examined")
    limits_exist: bool = Field(..., description="Every sequence is constant for |t| > K")
    max_lipschitz_defect: float = Field(..., description="Worst |t| * |entry(t) - limit|")
    decay_constant: float = Field(..., description="Smallest C with |entry| <= C exp(-|n -+ m| rho)")
    cross_component_max: float = Field(..., description="Largest |entry| with h != h'")
    entries: List[TLEntry] = Field(default_factory=list, description="Per-sequence details")

    class Config:
        json_schema_extra = {
            "example": {
                "direction": [1, 1],
                "K": 2,
                "t_max": 3,
                "checked": 32,
                "limits_exist": True,
                "max_lipschitz_defect": 0.0,
                "decay_constant": 0.05,
                "cross_component_max": 0.0,
                "entries": [],
            }
        }
