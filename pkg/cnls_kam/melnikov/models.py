"""
Parameter box and Melnikov report models
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from cnls_kam.errors import InvalidConfig


@dataclass(frozen=True)
class ParameterBox:
    """O = prod_h [h - 1/2, h]^b"""
    d: int
    b: int

    def __post_init__(self):
        if self.d < 1 or self.b < 1:
            raise InvalidConfig(f"Box needs d >= 1 and b >= 1, got d={self.d}, b={self.b}")

    @property
    def lower(self) -> np.ndarray:
        return np.repeat((np.arange(1, self.d + 1) - 0.5)[:, None], self.b, axis=1)

    @property
    def upper(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.d + 1, dtype=float)[:, None], self.b, axis=1)

    def contains(self, xi: np.ndarray) -> bool:
        xi = np.asarray(xi, dtype=float)
        return bool(np.all(xi >= self.lower) and np.all(xi <= self.upper))

    @property
    def separation(self) -> float:
        """min_{h != h'} |xi_h - xi_h'|_1 over the box"""
        return self.b / 2 if self.d > 1 else math.inf

    @property
    def gap_lower_bound(self) -> float:
        """min over the box of |sum xi_h - sum xi_h'| / (2 pi^2) for h != h'"""
        return self.b / (4 * math.pi ** 2) if self.d > 1 else math.inf

    def sample(self, n: int, seed: int) -> np.ndarray:
        """n uniform points, shape (n, d, b)"""
        rng = np.random.default_rng(seed)
        return rng.uniform(self.lower, self.upper, size=(n, self.d, self.b))

    def corners(self) -> np.ndarray:
        """All 2^(d b) corners, shape (2^(d b), d, b)"""
        count = self.d * self.b
        bits = ((np.arange(2 ** count)[:, None] >> np.arange(count)) & 1).astype(float)
        flat_lo, flat_hi = self.lower.ravel(), self.upper.ravel()
        return (flat_lo + bits * (flat_hi - flat_lo)).reshape(-1, self.d, self.b)

    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2


class Witness(BaseModel):
    """A divisor with its location"""
    condition: str = Field(..., description="mel1 | mel2_gap | mel2 | mel13 | mel14")
    k: List[int] = Field(default_factory=list, description="Integer vector k in (h, a) order")
    h: int = Field(..., description="Component of the (first) block")
    h_prime: Optional[int] = Field(None, description="Component of the second block")
    n: Optional[Tuple[int, int]] = Field(None, description="Site of the (first) block")
    m: Optional[Tuple[int, int]] = Field(None, description="Site of the second block")
    value: float = Field(..., description="|divisor| (smallest singular value for mel2 and mel2_gap)")
    margin: float = Field(..., description="|divisor| * max(|k|, 1)^tau / gamma")


class ConditionSummary(BaseModel):
    """Per-condition counts and the worst case"""
    name: str = Field(..., description="mel1 | mel2_gap | mel2 | mel13 | mel14")
    evaluated: int = Field(..., description="Divisors evaluated numerically (zero integer part)")
    auto_passed: int = Field(..., description="Divisors passed by scale separation")
    worst_margin: Optional[float] = Field(None, description="Smallest margin; pass iff >= 1")
    worst: Optional[Witness] = Field(None, description="Where the smallest margin occurs")


class MelnikovReport(BaseModel):
    """Small-divisor verdict at one parameter point"""
    xi: List[List[float]] = Field(..., description="Parameter point, one row per component")
    epsilon: float = Field(..., description="Scale parameter")
    gamma: float = Field(..., description="Diophantine constant")
    tau: float = Field(..., description="Diophantine exponent")
    K_max: int = Field(..., description="Largest l1 norm of k checked")
    radius: int = Field(..., description="Largest |n| of blocks checked")
    k_norm: str = Field("l1", description="Norm used for |k|")
    mel2_measure: str = Field("smallest singular value", description="How matrix divisors are measured")
    conditions: List[ConditionSummary] = Field(default_factory=list, description="Per-condition summary")
    violations: List[Witness] = Field(default_factory=list, description="Failing divisors (capped)")
    violation_count: int = Field(0, description="Total number of failing divisors")
    nondegenerate: bool = Field(True, description="Frequency map Jacobian is invertible")
    passed: bool = Field(..., description="Every margin >= 1 and nondegenerate")

    class Config:
        json_schema_extra = {
            "example": {
                "xi": [[0.75, 0.75], [1.75, 1.75]],
                "epsilon": 0.1,
                "gamma": 0.001,
                "tau": 7,
                "K_max": 15,
                "radius": 15,
                "k_norm": "l1",
                "mel2_measure": "smallest singular value",
                "conditions": [{"name": "mel14", "evaluated": 1, "auto_passed": 0, "worst_margin": 101.32}],
                "violations": [],
                "violation_count": 0,
                "nondegenerate": True,
                "passed": True,
            }
        }


class MeasureRow(BaseModel):
    """Excluded fraction at one gamma"""
    gamma: float = Field(..., description="Diophantine constant")
    excluded: int = Field(..., description="Samples failing some condition")
    excluded_fraction: float = Field(..., description="excluded / samples")
    ci_low: float = Field(..., description="Wilson 95% lower bound")
    ci_high: float = Field(..., description="Wilson 95% upper bound")


class MeasureScan(BaseModel):
    """Monte-Carlo estimate of the excluded parameter measure"""
    samples: int = Field(..., description="Number of sampled parameter points")
    seed: int = Field(..., description="Sampling seed")
    tau: float = Field(..., description="Diophantine exponent")
    epsilon: float = Field(..., description="Scale parameter")
    K_max: int = Field(..., description="Largest l1 norm of k checked")
    radius: int = Field(..., description="Largest |n| of blocks checked")
    rows: List[MeasureRow] = Field(default_factory=list, description="One row per gamma, decreasing gamma")
    monotone: bool = Field(..., description="Fractions non-increasing as gamma decreases")
    slope: Optional[float] = Field(None, description="Fitted d log(fraction) / d log(gamma)")
    intercept: Optional[float] = Field(None, description="Fitted log(fraction) at log(gamma) = 0")
