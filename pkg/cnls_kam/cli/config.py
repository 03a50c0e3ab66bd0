"""
Run configuration: a flat key=value file resolved into a validated RunConfig
"""

import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError

from cnls_kam.errors import ConfigError
from cnls_kam.lattice.models import TangentialSet
from cnls_kam.simulate.models import GTerm, SimConfig

logger = logging.getLogger(__name__)

# Ansatz validity domain for simulate / verify
XI_MAX = 1e-2

_FACTOR = re.compile(r"^s(\d+)(?:\^(\d+))?$")


def parse_sites(text: str) -> List[Tuple[int, int]]:
    """'1,0; -1,0' -> [(1, 0), (-1, 0)]"""
    sites = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 2:
            raise ValueError(f"site '{chunk.strip()}' needs two integers")
        sites.append((int(parts[0]), int(parts[1])))
    return sites


def parse_floats(text: str) -> List[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def parse_matrix(text: str) -> List[List[float]]:
    """'a,b; c,d' -> [[a, b], [c, d]] (one row per component)"""
    return [parse_floats(row) for row in text.split(";") if row.strip()]


def parse_monomial(text: str, d: int) -> GTerm:
    """'2*s1^2*s2' -> GTerm(coeff=2, powers=[2, 1])"""
    coeff, powers = 1.0, [0] * d
    for factor in (f.strip() for f in text.split("*")):
        match = _FACTOR.match(factor)
        if match is None:
            coeff *= float(factor)
            continue
        h = int(match.group(1))
        if not 1 <= h <= d:
            raise ValueError(f"variable s{h} outside s1..s{d}")
        powers[h - 1] += int(match.group(2) or 1)
    return GTerm(coeff=coeff, powers=powers)


def parse_polynomials(text: str, d: int) -> List[List[GTerm]]:
    """'1*s1*s2^2; 1*s1^2*s2' -> one polynomial per component, '+' between monomials, '0' for none"""
    polys = []
    for chunk in text.split(";"):
        terms = [t.strip() for t in chunk.split("+") if t.strip()]
        polys.append([parse_monomial(t, d) for t in terms if t != "0"])
    return polys


def parse_track(text: str) -> List[Tuple[int, Tuple[int, int]]]:
    """'1:0,1; 2:3,0' -> [(1, (0, 1)), (2, (3, 0))]"""
    out = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        h, _, site = chunk.partition(":")
        if not site:
            raise ValueError(f"tracked mode '{chunk.strip()}' must read h:n1,n2")
        out.append((int(h), parse_sites(site)[0]))
    return out


class RunConfig(BaseModel):
    """Resolved configuration shared by every subcommand"""
    d: int = Field(..., description="Number of coupled components")
    b: Optional[int] = Field(None, description="Number of tangential sites (checked against sites)")
    sites: List[Tuple[int, int]] = Field(..., description="Tangential sites")
    xi: List[List[float]] = Field(default_factory=list, description="Simulation amplitudes, one row per component")
    G: List[List[GTerm]] = Field(default_factory=list, description="Coupling polynomials")
    N: int = Field(64, description="Grid points per dimension")
    dt: float = Field(1e-3, description="Time step")
    T: float = Field(200.0, description="Final time")
    stride: int = Field(50, description="Steps between trace samples")
    cubic: float = Field(1.0, description="Multiplier of the cubic term")
    dealias: bool = Field(True, description="2/3 rule on the nonlinear substep")
    first_order_correction: bool = Field(False, description="Start from x0 + F(x0)")
    track: List[Tuple[int, Tuple[int, int]]] = Field(default_factory=list, description="Extra traced modes")
    blowup_bound: float = Field(1.0, description="Abort once sup |u_h| exceeds this")
    radius: int = Field(5, description="Truncation radius R")
    kmax: int = Field(15, description="Largest l1 norm of k")
    tau: Optional[float] = Field(None, description="Diophantine exponent, default 2b + 3")
    epsilon: float = Field(0.1, description="Scale parameter")
    gamma: float = Field(1e-3, description="Diophantine constant for single-point checks")
    gamma_list: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5], description="Scan constants")
    samples: int = Field(10000, description="Monte-Carlo samples (0 skips the scan)")
    box_point: Optional[List[List[float]]] = Field(None, description="Parameter point, default box center")
    remainder: bool = Field(False, description="Bound the degree-5 remainder in normalform")
    seed: int = Field(0, description="Sampling seed")
    tol_amp: float = Field(0.01, description="Relative amplitude drift allowed")
    c_norm: float = Field(10.0, description="Normal sup constant")
    tol_freq: float = Field(1e-5, description="Frequency tolerance")
    tol_mass: float = Field(1e-10, description="Relative mass drift allowed")
    rho: float = Field(0.5, description="Weight of the sequence norm")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {"d": 1, "b": 1, "sites": [[1, 0]], "xi": [[1e-4]], "N": 64, "dt": 1e-3}
        }

    @property
    def tangential(self) -> TangentialSet:
        return TangentialSet.of(self.sites)

    def resolved(self) -> "RunConfig":
        """Fill b and tau and check the shapes that depend on them"""
        b = len(self.sites)
        if self.b is not None and self.b != b:
            raise ConfigError(f"b={self.b} but {b} sites were given", key="b")
        if self.xi and (len(self.xi) != self.d or any(len(row) != b for row in self.xi)):
            raise ConfigError(f"xi needs {self.d} rows of {b} values", key="xi")
        if self.G and len(self.G) != self.d:
            raise ConfigError(f"G needs {self.d} polynomials", key="G")
        if self.box_point is not None and (len(self.box_point) != self.d or any(len(r) != b for r in self.box_point)):
            raise ConfigError(f"box_point needs {self.d} rows of {b} values", key="box_point")
        tau = self.tau if self.tau is not None else 2 * b + 3
        return self.model_copy(update={"b": b, "tau": float(tau)})

    def check_simulation(self):
        """xi must lie in (0, 1e-2] for an ansatz run"""
        if not self.xi:
            raise ConfigError("simulate needs xi", key="xi")
        for row in self.xi:
            for value in row:
                if not 0 < value <= XI_MAX:
                    raise ConfigError(f"xi value {value} outside (0, {XI_MAX}]", key="xi")

    def to_sim_config(self) -> SimConfig:
        self.check_simulation()
        return SimConfig(
            d=self.d, sites=self.sites, xi=self.xi, G=self.G, N=self.N, dt=self.dt, T=self.T,
            stride=self.stride, cubic=self.cubic, dealias=self.dealias,
            first_order_correction=self.first_order_correction, track=self.track, seed=self.seed,
            blowup_bound=self.blowup_bound, tol_amp=self.tol_amp, c_norm=self.c_norm,
            tol_freq=self.tol_freq, tol_mass=self.tol_mass,
        ).check()


def default_run_config() -> RunConfig:
    """Built-in two-component scenario used when no config file is given"""
    scenario = SimConfig.default_scenario()
    return RunConfig(d=scenario.d, sites=scenario.sites, xi=scenario.xi, G=scenario.G,
                     N=scenario.N, dt=scenario.dt, T=scenario.T).resolved()


def _key_lines(path: Path) -> Dict[str, int]:
    lines = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.strip()
        if text.startswith("export "):
            text = text[len("export "):]
        key, sep, _ = text.partition("=")
        if sep and not text.startswith("#"):
            lines.setdefault(key.strip(), number)
    return lines


def _convert(key: str, value: str, d: Optional[int]):
    if key == "sites":
        return parse_sites(value)
    if key in ("xi", "box_point"):
        return parse_matrix(value)
    if key == "gamma_list":
        return parse_floats(value)
    if key == "track":
        return parse_track(value)
    if key == "G":
        if d is None:
            raise ValueError("G needs d to be set")
        return parse_polynomials(value, d)
    return value


def _validation_error(exc: ValidationError, lines: Dict[str, int]) -> ConfigError:
    first = exc.errors()[0]
    key = str(first["loc"][0]) if first.get("loc") else None
    return ConfigError(first.get("msg", str(exc)), key=key, line=lines.get(key) if key else None)


def parse_config(path: Optional[Path]) -> RunConfig:
    """
    Read a key=value run configuration.

    Args:
        path: Config file; None gives the built-in default scenario

    Returns:
        RunConfig with every default resolved

    Raises:
        ConfigError: unknown key, malformed value or inconsistent shapes
    """
    if path is None:
        return default_run_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} not found")
    raw = dotenv_values(path)
    lines = _key_lines(path)
    known = set(RunConfig.model_fields)
    for key in raw:
        if key not in known:
            raise ConfigError(f"Unknown key '{key}'", key=key, line=lines.get(key))

    d = None
    if raw.get("d"):
        try:
            d = int(raw["d"])
        except ValueError:
            raise ConfigError(f"d must be an integer, got '{raw['d']}'", key="d", line=lines.get("d"))
    values = {}
    for key, value in raw.items():
        if value is None or value.strip() == "":
            raise ConfigError("Missing value", key=key, line=lines.get(key))
        try:
            values[key] = _convert(key, value.strip(), d)
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"Cannot parse '{value.strip()}': {exc}", key=key, line=lines.get(key))
    try:
        config = RunConfig(**values)
    except ValidationError as exc:
        raise _validation_error(exc, lines)
    return config.resolved()


def apply_overrides(config: RunConfig, overrides: Dict[str, object]) -> RunConfig:
    """Command-line values win over the file; None means 'not given'"""
    update = {k: v for k, v in overrides.items() if v is not None}
    if not update:
        return config
    if "sites" in update and len(update["sites"]) != config.b:
        b = len(update["sites"])
        update["b"] = None
        if "tau" not in update and config.tau == 2 * config.b + 3:
            update["tau"] = None
        # xi and box_point of the old site count no longer apply
        for key in ("xi", "box_point"):
            rows = getattr(config, key)
            if key not in update and rows and any(len(row) != b for row in rows):
                logger.warning(f"⚠️ Dropping configured {key}: it has {config.b} sites per row, --sites gives {b}")
                update[key] = [] if key == "xi" else None
    try:
        merged = RunConfig(**{**config.model_dump(), **update})
    except ValidationError as exc:
        raise _validation_error(exc, {})
    return merged.resolved()
