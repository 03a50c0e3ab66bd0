"""
Frequency data and normal-form report models
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from cnls_kam.lattice.models import ResonantPair, Site, SiteTag, TangentialSet

FOUR_PI_SQ = 4 * math.pi ** 2

LinKey = Tuple[int, int]  # (h, a) with a the 0-based tangential index


@dataclass(frozen=True)
class AffineFrequency:
    """
    quartic * eps^-4 + (const + sum lin[(h, a)] * xi_{ha}) / (4 pi^2)

    The integer part is kept apart from the analytic part so that divisors can
    be split exactly into an integer and a small remainder.
    """
    quartic: int = 0
    const: Fraction = Fraction(0)
    lin: Tuple[Tuple[LinKey, Fraction], ...] = ()

    @classmethod
    def of(cls, quartic: int = 0, const: Fraction = Fraction(0),
           lin: Optional[Dict[LinKey, Fraction]] = None) -> "AffineFrequency":
        cleaned = tuple(sorted((k, Fraction(v)) for k, v in (lin or {}).items() if v != 0))
        return cls(int(quartic), Fraction(const), cleaned)

    @property
    def lin_map(self) -> Dict[LinKey, Fraction]:
        return dict(self.lin)

    def __add__(self, other: "AffineFrequency") -> "AffineFrequency":
        lin = self.lin_map
        for k, v in other.lin:
            lin[k] = lin.get(k, Fraction(0)) + v
        return AffineFrequency.of(self.quartic + other.quartic, self.const + other.const, lin)

    def __neg__(self) -> "AffineFrequency":
        return AffineFrequency.of(-self.quartic, -self.const, {k: -v for k, v in self.lin})

    def __sub__(self, other: "AffineFrequency") -> "AffineFrequency":
        return self + (-other)

    def scale(self, factor: int) -> "AffineFrequency":
        return AffineFrequency.of(self.quartic * factor, self.const * factor, {k: v * factor for k, v in self.lin})

    def lin_vector(self, d: int, b: int) -> np.ndarray:
        """Coefficients in units of 1/(4 pi^2) as a (d, b) array"""
        out = np.zeros((d, b))
        for (h, a), v in self.lin:
            out[h - 1, a] = float(v)
        return out

    def analytic(self, xi: np.ndarray) -> np.ndarray:
        """(const + <lin, xi>)/(4 pi^2) for xi of shape (..., d, b)"""
        xi = np.asarray(xi, dtype=float)
        d, b = xi.shape[-2], xi.shape[-1]
        value = np.tensordot(xi, self.lin_vector(d, b), axes=([-2, -1], [0, 1]))
        return (float(self.const) + value) / FOUR_PI_SQ

    def evaluate(self, xi: np.ndarray, eps: float) -> np.ndarray:
        return self.quartic * eps ** -4 + self.analytic(xi)


class Coupling(str, Enum):
    SYMMETRIC = "symmetric"          # first type: [[a, A], [A, b]]
    ANTISYMMETRIC = "antisymmetric"  # second type: [[a, A], [-A, b]]


@dataclass(frozen=True)
class MelnikovBlock:
    """
    M_{hn}: scalar Omega_{hn} on generic sites, 2x2 on resonant pairs.

    For a resonant block the coupling is sqrt(xi_{hi} xi_{hj})/(2 pi^2) placed
    symmetrically (first type) or with a negated lower-left entry (second type).
    """
    h: int
    n: Site
    tag: SiteTag
    diagonal: Tuple[AffineFrequency, ...]
    pair: Optional[ResonantPair] = None
    coupling_index: Optional[Tuple[int, int]] = None
    coupling: Optional[Coupling] = None

    @property
    def dim(self) -> int:
        return len(self.diagonal)

    @property
    def quartic(self) -> int:
        """Common integer part of the diagonal entries"""
        return self.diagonal[0].quartic

    def coupling_value(self, xi: np.ndarray) -> np.ndarray:
        if self.coupling_index is None:
            return np.zeros(np.asarray(xi).shape[:-2])
        a, c = self.coupling_index
        xi = np.asarray(xi, dtype=float)
        return np.sqrt(xi[..., self.h - 1, a] * xi[..., self.h - 1, c]) / (2 * math.pi ** 2)

    def analytic_matrix(self, xi: np.ndarray) -> np.ndarray:
        """Block with the integer part removed, shape (..., dim, dim)"""
        xi = np.asarray(xi, dtype=float)
        batch = xi.shape[:-2]
        out = np.zeros(batch + (self.dim, self.dim))
        for k, entry in enumerate(self.diagonal):
            out[..., k, k] = entry.analytic(xi)
        if self.dim == 2:
            A = self.coupling_value(xi)
            out[..., 0, 1] = A
            out[..., 1, 0] = A if self.coupling is Coupling.SYMMETRIC else -A
        return out

    def matrix(self, xi: np.ndarray, eps: float) -> np.ndarray:
        out = self.analytic_matrix(xi)
        for k in range(self.dim):
            out[..., k, k] += self.quartic * eps ** -4
        return out


@dataclass
class FrequencyData:
    """Closed-form frequencies of the normal form"""
    d: int
    I: TangentialSet
    omega: Dict[Tuple[int, int], AffineFrequency]
    Omega: Dict[Tuple[int, Site], AffineFrequency]
    blocks: Dict[Tuple[int, Site], MelnikovBlock] = field(default_factory=dict)

    @property
    def b(self) -> int:
        return self.I.b

    def A(self, h: int, pair: ResonantPair, xi: np.ndarray) -> np.ndarray:
        a, c = self.I.index(pair.i), self.I.index(pair.j)
        return np.sqrt(np.asarray(xi)[..., h - 1, a] * np.asarray(xi)[..., h - 1, c]) / (2 * math.pi ** 2)

    def omega_jacobian(self) -> np.ndarray:
        """d omega / d xi as a (d*b, d*b) array"""
        rows = []
        for h in range(1, self.d + 1):
            for a in range(self.b):
                rows.append(self.omega[(h, a)].lin_vector(self.d, self.b).ravel() / FOUR_PI_SQ)
        return np.array(rows)


class ResonantEntry(BaseModel):
    """A resonant normal-form coefficient compared against its closed form"""
    family: str = Field(..., description="self | cross | normal_action | first_type | second_type")
    h: int = Field(..., description="Component")
    target: str = Field(..., description="Direction d/d(target)")
    monomial: str = Field(..., description="Monomial in the mode variables")
    coefficient: Tuple[float, float] = Field(..., description="Extracted coefficient (re, im)")
    expected: Tuple[float, float] = Field(..., description="Closed-form coefficient (re, im)")
    rel_error: float = Field(..., description="|extracted - expected| / |expected|")


class FTermRecord(BaseModel):
    """One homological term of F"""
    target: str = Field(..., description="Direction d/d(target)")
    monomial: str = Field(..., description="Monomial in the mode variables")
    sites: List[Tuple[int, int]] = Field(..., description="Target site followed by factor sites")
    denominator: int = Field(..., description="sum sigma_v lambda_v - sigma_t lambda_t")
    coefficient: Tuple[float, float] = Field(..., description="F coefficient (re, im) per unit eps")


class FStats(BaseModel):
    """Summary of the homological field"""
    term_count: int = Field(..., description="Number of F terms")
    min_abs_denominator: Optional[int] = Field(None, description="Smallest |denominator| used")
    max_abs_coefficient: float = Field(0.0, description="Largest |F coefficient|")


class RemainderStats(BaseModel):
    """Degree-5 terms generated by the time-1 flow"""
    terms: int = Field(..., description="Number of degree-5 terms of [F, P3] + [F, [F, Lambda]]/2")
    dropped: int = Field(0, description="Terms leaving the truncation")
    norm_bound: float = Field(..., description="Per-monomial upper bound of the remainder norm")
    rho: float = Field(..., description="Weight used in the bound")
    s: float = Field(..., description="Ball radius used in the bound")


class NormalFormReport(BaseModel):
    """Result of extracting the partial normal form"""
    d: int = Field(..., description="Number of components")
    radius: int = Field(..., description="Mode truncation")
    tangential: List[Tuple[int, int]] = Field(..., description="Tangential sites")
    residual_nonresonant: float = Field(..., description="Max |coeff| of nonresonant terms with >= 2 tangential slots")
    resonant_table: List[ResonantEntry] = Field(default_factory=list, description="Extracted vs expected")
    other_resonant: int = Field(0, description="Resonant terms quadratic in the normal modes along tangential directions")
    cross_component_max: float = Field(0.0, description="Largest cubic coefficient mixing components")
    reversible: bool = Field(..., description="Transformed field is S-reversible")
    momentum_conserved: bool = Field(..., description="Both momentum components conserved")
    F_stats: Optional[FStats] = Field(None, description="Homological field summary")
    remainder: Optional[RemainderStats] = Field(None, description="Degree-5 remainder bound")
    errors: List[str] = Field(default_factory=list, description="Mismatches found")
    passed: bool = Field(..., description="No mismatch and residual below tolerance")

    class Config:
        json_schema_extra = {
            "example": {
                "d": 1,
                "radius": 3,
                "tangential": [[1, 0], [-1, 0]],
                "residual_nonresonant": 0.0,
                "resonant_table": [{
                    "family": "self", "h": 1, "target": "q1(1,0)", "monomial": "q1(1,0)*q1(1,0)*qb1(1,0)",
                    "coefficient": [0.0, 0.025330295910584444], "expected": [0.0, 0.025330295910584444],
                    "rel_error": 0.0,
                }],
                "other_resonant": 4,
                "cross_component_max": 0.0,
                "reversible": True,
                "momentum_conserved": True,
                "F_stats": {"term_count": 120, "min_abs_denominator": 2, "max_abs_coefficient": 0.0127},
                "remainder": None,
                "errors": [],
                "passed": True,
            }
        }
