"""
Simulation configuration, field state, trace and verdict models
"""

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from cnls_kam.errors import InvalidConfig
from cnls_kam.lattice.models import Site, TangentialSet

# Largest linear phase e^{i |n|^2 dt} allowed on the grid
MAX_PHASE_PER_STEP = math.pi


class GTerm(BaseModel):
    """coeff * s_1^powers[0] * ... * s_d^powers[d-1]"""
    coeff: float = Field(..., description="Real coefficient")
    powers: List[int] = Field(..., description="Exponent of each s_h, one per component")

    @property
    def degree(self) -> int:
        return sum(self.powers)


class SimConfig(BaseModel):
    """Everything a run needs; `check()` enforces the grid and polynomial constraints"""
    d: int = Field(..., description="Number of coupled components")
    sites: List[Tuple[int, int]] = Field(..., description="Tangential sites, shared by every component")
    xi: List[List[float]] = Field(..., description="Amplitude parameters xi_{ha}, one row per component")
    G: List[List[GTerm]] = Field(default_factory=list, description="Coupling polynomial G_h in s = (|u_1|^2, ...)")
    N: int = Field(64, description="Grid points per dimension (power of 2)")
    dt: float = Field(1e-3, description="Time step")
    T: float = Field(200.0, description="Final time")
    stride: int = Field(50, description="Steps between trace samples")
    cubic: float = Field(1.0, description="Multiplier of |u_h|^2 u_h (0 switches it off)")
    dealias: bool = Field(True, description="Apply the 2/3 rule once per step")
    first_order_correction: bool = Field(False, description="Start from x0 + F(x0) instead of x0")
    track: List[Tuple[int, Tuple[int, int]]] = Field(default_factory=list, description="Extra (h, site) modes to trace")
    seed: int = Field(0, description="Recorded for the manifest; the integrator is deterministic")
    blowup_bound: float = Field(1.0, description="Abort once sup |u_h| exceeds this")
    tol_amp: float = Field(0.01, description="Relative amplitude drift allowed")
    c_norm: float = Field(10.0, description="Normal sup must stay below c_norm * max(xi)^(3/2)")
    tol_freq: float = Field(1e-5, description="Allowed |fitted - predicted| frequency")
    tol_mass: float = Field(1e-10, description="Relative mass drift allowed")

    class Config:
        json_schema_extra = {
            "example": {
                "d": 2,
                "sites": [[1, 0], [-1, 0]],
                "xi": [[1e-3, 6e-4], [8e-4, 1.2e-3]],
                "G": [[{"coeff": 1.0, "powers": [1, 2]}], [{"coeff": 1.0, "powers": [2, 1]}]],
                "N": 32,
                "dt": 2e-3,
                "T": 200.0,
                "stride": 50,
            }
        }

    @classmethod
    def default_scenario(cls, **overrides) -> "SimConfig":
        values = dict(
            d=2,
            sites=[(1, 0), (-1, 0)],
            xi=[[1e-3, 6e-4], [8e-4, 1.2e-3]],
            G=[[GTerm(coeff=1.0, powers=[1, 2])], [GTerm(coeff=1.0, powers=[2, 1])]],
            N=32,
            dt=2e-3,
            T=200.0,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def tangential(self) -> TangentialSet:
        return TangentialSet.of(self.sites)

    @property
    def xi_array(self) -> np.ndarray:
        return np.asarray(self.xi, dtype=float).reshape(self.d, len(self.sites))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def check(self) -> "SimConfig":
        """Raise InvalidConfig on a grid, shape or coupling polynomial the integrator cannot use"""
        if self.d < 1:
            raise InvalidConfig(f"d must be >= 1, got {self.d}")
        if self.N < 4 or self.N & (self.N - 1):
            raise InvalidConfig(f"N must be a power of 2 (>= 4), got {self.N}")
        if self.dt <= 0 or self.T < 0:
            raise InvalidConfig(f"Need dt > 0 and T >= 0, got dt={self.dt}, T={self.T}")
        max_phase = self.dt * 2 * (self.N // 2) ** 2
        if max_phase > MAX_PHASE_PER_STEP:
            raise InvalidConfig(f"dt * max|n|^2 = {max_phase:.3g} exceeds {MAX_PHASE_PER_STEP:.3g}; reduce dt or N")
        if len(self.xi) != self.d or any(len(row) != len(self.sites) for row in self.xi):
            raise InvalidConfig(f"xi must have {self.d} rows of {len(self.sites)} values")
        if np.any(self.xi_array < 0):
            raise InvalidConfig("xi must be non-negative")
        limit = self.N // 2
        for n1, n2 in self.sites + [site for _, site in self.track]:
            if not (-limit < n1 < limit and -limit < n2 < limit):
                raise InvalidConfig(f"Site ({n1},{n2}) is outside the grid |n_i| < {limit}")
        if any(not 1 <= h <= self.d for h, _ in self.track):
            raise InvalidConfig(f"Tracked component outside 1..{self.d}")
        if self.G and len(self.G) != self.d:
            raise InvalidConfig(f"G needs one polynomial per component ({self.d}), got {len(self.G)}")
        for h, poly in enumerate(self.G, start=1):
            for term in poly:
                if len(term.powers) != self.d or any(p < 0 for p in term.powers):
                    raise InvalidConfig(f"G_{h} term needs {self.d} non-negative powers, got {term.powers}")
                if term.coeff != 0 and term.degree < 3:
                    raise InvalidConfig(f"G_{h} term {term.powers} has degree {term.degree} < 3 in s")
        return self


@dataclass
class FieldState:
    """Fourier coefficients q_{hn}, shape (d, N, N) in FFT ordering"""
    q: np.ndarray
    t: float = 0.0

    @property
    def d(self) -> int:
        return self.q.shape[0]

    @property
    def N(self) -> int:
        return self.q.shape[-1]

    def copy(self) -> "FieldState":
        return FieldState(self.q.copy(), self.t)

    def mode(self, h: int, n: Site) -> complex:
        return complex(self.q[h - 1, n.n1 % self.N, n.n2 % self.N])

    def mass(self) -> np.ndarray:
        """sum_n |q_{hn}|^2 per component"""
        return np.sum(np.abs(self.q) ** 2, axis=(-2, -1))


@dataclass
class ModeTrace:
    """Sampled time series of a run"""
    times: np.ndarray
    modes: List[Tuple[int, Site]]
    values: np.ndarray                  # (samples, len(modes)) complex
    mass: np.ndarray                    # (samples, d)
    normal_sup: np.ndarray              # (samples, d)
    tangential: List[Tuple[int, Site]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def series(self, h: int, n: Site) -> np.ndarray:
        return self.values[:, self.modes.index((h, n))]


class ModeCheck(BaseModel):
    """Amplitude and frequency of one tangential mode"""
    h: int = Field(..., description="Component")
    site: Tuple[int, int] = Field(..., description="Tangential site")
    amplitude_drift: float = Field(..., description="max_t ||q(t)| - |q(0)|| / |q(0)|")
    fitted: Optional[float] = Field(None, description="Fitted frequency")
    predicted: float = Field(..., description="First-order frequency")
    error: Optional[float] = Field(None, description="|fitted - predicted|")
    fit_residual: Optional[float] = Field(None, description="RMS phase residual of the fit")


class ResidualCheck(BaseModel):
    """Defect of the first-order torus at xi and xi/4"""
    residual: float = Field(..., description="Residual at xi")
    residual_quarter: float = Field(..., description="Residual at xi/4")
    ratio: Optional[float] = Field(None, description="residual / residual_quarter, 8 for a 3/2 power law")
    exponent: Optional[float] = Field(None, description="log(ratio)/log(4)")
    ok: bool = Field(True, description="Exponent within 0.2 of 3/2")


class QPVerdict(BaseModel):
    """Quasi-periodicity checks of a run"""
    sign_convention: str = Field("q_n ~ exp(+i |n|^2 t)", description="Phase convention of the linear flow")
    modes: List[ModeCheck] = Field(default_factory=list, description="Per tangential mode")
    amplitude_ok: bool = Field(..., description="Every drift <= tol_amp")
    normal_sup: float = Field(..., description="max over t and h of max_{n not in I} |q_hn|")
    normal_threshold: float = Field(..., description="c_norm * max(xi)^(3/2)")
    normal_ok: bool = Field(..., description="normal_sup <= normal_threshold")
    frequency_ok: bool = Field(..., description="Every frequency error <= tol_freq")
    mass_drift: List[float] = Field(default_factory=list, description="Relative mass drift per component")
    mass_ok: bool = Field(..., description="Every mass drift <= tol_mass")
    residual: Optional[ResidualCheck] = Field(None, description="Residual scaling block (verify only)")
    errors: List[str] = Field(default_factory=list, description="Failed checks")
    passed: bool = Field(..., description="All checks passed")

    class Config:
        json_schema_extra = {
            "example": {
                "sign_convention": "q_n ~ exp(+i |n|^2 t)",
                "modes": [{
                    "h": 1, "site": [1, 0], "amplitude_drift": 2.1e-4, "fitted": 1.0000557,
                    "predicted": 1.0000557, "error": 3e-9, "fit_residual": 1e-6,
                }],
                "amplitude_ok": True,
                "normal_sup": 4.2e-7,
                "normal_threshold": 4.16e-4,
                "normal_ok": True,
                "frequency_ok": True,
                "mass_drift": [1e-13, 2e-13],
                "mass_ok": True,
                "residual": None,
                "errors": [],
                "passed": True,
            }
        }


class FrequencyFit(NamedTuple):
    omega: float
    residual: float
