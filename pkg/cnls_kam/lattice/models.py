"""
Lattice value types and verdict models
"""

from dataclasses import dataclass
from enum import Enum
from math import isqrt, sqrt
from typing import Iterable, List, Optional, Tuple

from pydantic import BaseModel, Field

from cnls_kam.errors import InvalidTangentialSet


@dataclass(frozen=True, order=True)
class Site:
    """Integer lattice point n = (n1, n2) of the Fourier lattice Z^2"""
    n1: int
    n2: int

    @property
    def norm_sq(self) -> int:
        # eigenvalue lambda_n of -Laplacian
        return self.n1 * self.n1 + self.n2 * self.n2

    @property
    def norm(self) -> float:
        return sqrt(self.norm_sq)

    def __add__(self, other: "Site") -> "Site":
        return Site(self.n1 + other.n1, self.n2 + other.n2)

    def __sub__(self, other: "Site") -> "Site":
        return Site(self.n1 - other.n1, self.n2 - other.n2)

    def __neg__(self) -> "Site":
        return Site(-self.n1, -self.n2)

    def scale(self, t: int) -> "Site":
        return Site(t * self.n1, t * self.n2)

    def component(self, l: int) -> int:
        """(n)_l for l in {1, 2}"""
        return self.n1 if l == 1 else self.n2

    def within(self, radius: int) -> bool:
        return self.norm_sq <= radius * radius

    def is_positive(self) -> bool:
        """Lexicographically positive (strictly greater than the origin)"""
        return self.n1 > 0 or (self.n1 == 0 and self.n2 > 0)

    def as_tuple(self) -> Tuple[int, int]:
        return (self.n1, self.n2)

    def __str__(self) -> str:
        return f"({self.n1},{self.n2})"


def ball_sites(radius: int) -> List[Site]:
    """All sites with |n| <= radius, in lexicographic order"""
    r2 = radius * radius
    sites = []
    for a in range(-radius, radius + 1):
        span = isqrt(r2 - a * a)
        for c in range(-span, span + 1):
            sites.append(Site(a, c))
    return sites


@dataclass(frozen=True)
class TangentialSet:
    """Ordered tangential set I = {i(1), ..., i(b)}"""
    sites: Tuple[Site, ...]

    def __post_init__(self):
        if len(self.sites) == 0:
            raise InvalidTangentialSet("Tangential set must contain at least one site")
        if len(set(self.sites)) != len(self.sites):
            raise InvalidTangentialSet(f"Tangential sites must be distinct: {[str(s) for s in self.sites]}")

    @classmethod
    def of(cls, points: Iterable[Tuple[int, int]]) -> "TangentialSet":
        return cls(tuple(p if isinstance(p, Site) else Site(int(p[0]), int(p[1])) for p in points))

    @property
    def b(self) -> int:
        return len(self.sites)

    @property
    def max_norm(self) -> float:
        return max(s.norm for s in self.sites)

    def __contains__(self, site: Site) -> bool:
        return site in self.sites

    def __iter__(self):
        return iter(self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def index(self, site: Site) -> int:
        return self.sites.index(site)


class ResonanceKind(str, Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True, order=True)
class ResonantPair:
    """A resonant pair (n, m) with its tangential triplet data (i, j)"""
    kind: ResonanceKind
    n: Site
    m: Site
    i: Site
    j: Site

    def is_valid(self) -> bool:
        if self.kind is ResonanceKind.FIRST:
            momentum = self.i - self.j + self.n - self.m
            energy = self.i.norm_sq - self.j.norm_sq + self.n.norm_sq - self.m.norm_sq
            return momentum == Site(0, 0) and energy == 0 and self.n != self.m
        momentum = self.n + self.m - self.i - self.j
        energy = self.n.norm_sq + self.m.norm_sq - self.i.norm_sq - self.j.norm_sq
        return momentum == Site(0, 0) and energy == 0

    def mirrored(self) -> "ResonantPair":
        """The same resonance seen from the partner site"""
        if self.kind is ResonanceKind.FIRST:
            return ResonantPair(self.kind, self.m, self.n, self.j, self.i)
        return ResonantPair(self.kind, self.m, self.n, self.i, self.j)

    def canonical(self) -> "ResonantPair":
        """Representative with lexicographically positive difference vector"""
        if self.kind is ResonanceKind.FIRST:
            return self if (self.i - self.j).is_positive() else self.mirrored()
        return self if (self.n - self.m).is_positive() else self.mirrored()

    def to_record(self) -> "PairRecord":
        return PairRecord(kind=self.kind.value, n=self.n.as_tuple(), m=self.m.as_tuple(),
                          i=self.i.as_tuple(), j=self.j.as_tuple())


class SiteTag(str, Enum):
    TANGENTIAL = "tangential"
    FIRST_TYPE = "first_type"
    SECOND_TYPE = "second_type"
    GENERIC = "generic"


@dataclass(frozen=True)
class SiteClass:
    """Classification of a single site"""
    site: Site
    tag: SiteTag
    pair: Optional[ResonantPair] = None

    @property
    def block_dim(self) -> int:
        # phi(n): 1 on Z^2_2, 2 on L1 / L2
        return 2 if self.tag in (SiteTag.FIRST_TYPE, SiteTag.SECOND_TYPE) else 1


class PairRecord(BaseModel):
    """Serialisable resonant pair"""
    kind: str = Field(..., description="'first' or 'second'")
    n: Tuple[int, int] = Field(..., description="Resonant site")
    m: Tuple[int, int] = Field(..., description="Partner site")
    i: Tuple[int, int] = Field(..., description="First tangential site of the triplet")
    j: Tuple[int, int] = Field(..., description="Second tangential site of the triplet")


class Violation(BaseModel):
    """An admissibility failure with its witnesses"""
    site: Tuple[int, int] = Field(..., description="Offending normal site")
    condition: str = Field(..., description="unique_first | unique_second | disjoint | involution")
    witnesses: List[PairRecord] = Field(default_factory=list, description="Triplets found for the site")


class AdmissibilityVerdict(BaseModel):
    """Result of checking uniqueness and disjointness up to a radius"""
    admissible: bool = Field(..., description="True when no violation was found")
    radius: int = Field(..., description="Radius R that was scanned")
    radius_verified: int = Field(..., description="Largest r <= R with every |n| <= r passing")
    L1: List[PairRecord] = Field(default_factory=list, description="First-type pairs within R")
    L2: List[PairRecord] = Field(default_factory=list, description="Second-type pairs (finite)")
    violations: List[Violation] = Field(default_factory=list, description="Failures with witnesses")
    unverified_conditions: List[str] = Field(default_factory=list,
                                             description="Admissibility conditions not checked here")

    class Config:
        json_schema_extra = {
            "example": {
                "admissible": True,
                "radius": 20,
                "radius_verified": 20,
                "L1": [{"kind": "first", "n": [-1, 1], "m": [1, 1], "i": [1, 0], "j": [-1, 0]}],
                "L2": [{"kind": "second", "n": [0, 1], "m": [0, -1], "i": [1, 0], "j": [-1, 0]}],
                "violations": [],
                "unverified_conditions": ["cited admissibility conditions beyond uniqueness/disjointness"],
            }
        }
