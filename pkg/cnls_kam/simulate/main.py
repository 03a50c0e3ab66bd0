"""
Pseudospectral split-step integration of the coupled NLS system on T^2.

The state holds the Fourier coefficients q_{hn} of u_h = sum_n q_{hn} phi_n,
phi_n = exp(i<n,x>)/(2 pi), so u = (N^2/2pi) ifft2(q). The linear substep is
q_{hn} <- exp(i |n|^2 dt) q_{hn}. The nonlinear substep rotates u_h pointwise
by exp(i dt (c |u_h|^2 + dG_h/ds_h(s))) with s = (|u_1|^2, ..., |u_d|^2), which
leaves every |u_h| unchanged, so both substeps conserve each component's mass.
"""

import logging
import math
import time
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import fft

from cnls_kam.birkhoff.main import first_order_torus, tangential_omega, torus_point
from cnls_kam.errors import BlowUp, ConfigError, DegenerateFit, InvalidConfig
from cnls_kam.lattice.main import enumerate_first_type, enumerate_second_type
from cnls_kam.lattice.models import Site
from cnls_kam.simulate.models import (
    FieldState,
    FrequencyFit,
    GTerm,
    ModeCheck,
    ModeTrace,
    QPVerdict,
    ResidualCheck,
    SimConfig,
)

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi

# Fits need |q(t)| >= AMPLITUDE_FLOOR * max |q| over the window
AMPLITUDE_FLOOR = 1e-3
# Phase increments this close to pi cannot be told apart from aliasing
MAX_PHASE_STEP = 0.9 * math.pi
# Allowed deviation of the fitted residual exponent from 3/2
RESIDUAL_EXPONENT_TOL = 0.2


def wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers in FFT ordering"""
    return np.rint(fft.fftfreq(N, d=1.0 / N)).astype(int)


def laplacian_symbol(N: int) -> np.ndarray:
    """lambda_n = |n|^2 on the (N, N) grid"""
    k = wavenumbers(N)
    return (k[:, None] ** 2 + k[None, :] ** 2).astype(float)


def dealias_mask(N: int) -> np.ndarray:
    """2/3 rule: keep |n_1|, |n_2| <= N/3"""
    keep = np.abs(wavenumbers(N)) <= N // 3
    return keep[:, None] & keep[None, :]


def to_physical(q: np.ndarray) -> np.ndarray:
    N = q.shape[-1]
    return (N * N / TWO_PI) * fft.ifft2(q, axes=(-2, -1))


def to_fourier(u: np.ndarray) -> np.ndarray:
    N = u.shape[-1]
    return (TWO_PI / (N * N)) * fft.fft2(u, axes=(-2, -1))


def grid_index(n: Site, N: int) -> Tuple[int, int]:
    return n.n1 % N, n.n2 % N


def phase_potential(s: np.ndarray, G: List[List[GTerm]], cubic: float = 1.0) -> np.ndarray:
    """
    V_h = cubic * s_h + dG_h/ds_h(s) for s of shape (d, ...).

    The nonlinearity of component h is i V_h u_h.
    """
    V = cubic * s
    for h, poly in enumerate(G):
        for term in poly:
            power = term.powers[h]
            if power == 0 or term.coeff == 0:
                continue
            part = np.full(s.shape[1:], term.coeff * power)
            for l, p in enumerate(term.powers):
                exponent = p - 1 if l == h else p
                if exponent:
                    part = part * s[l] ** exponent
            V[h] = V[h] + part
    return V


class SplitStepper:
    """Strang splitting N(dt/2) L(dt) N(dt/2) with cached multipliers"""

    def __init__(self, config: SimConfig, dt: Optional[float] = None):
        self.config = config
        self.dt = config.dt if dt is None else dt
        self.linear_phase = np.exp(1j * laplacian_symbol(config.N) * self.dt)
        self.mask = dealias_mask(config.N) if config.dealias else None

    def nonlinear(self, u: np.ndarray, tau: float) -> np.ndarray:
        V = phase_potential(np.abs(u) ** 2, self.config.G, self.config.cubic)
        return u * np.exp(1j * tau * V)

    def check_bound(self, u: np.ndarray, t: float):
        sup = np.max(np.abs(u), axis=(-2, -1))
        if not np.all(np.isfinite(sup)) or np.any(sup > self.config.blowup_bound):
            worst = int(np.argmax(np.nan_to_num(sup, nan=np.inf))) + 1
            raise BlowUp(f"sup |u_{worst}| = {sup[worst - 1]:.3e} exceeds {self.config.blowup_bound:.3e} at t={t:.6g}")

    def advance(self, q: np.ndarray, steps: int, t0: float = 0.0) -> np.ndarray:
        """
        Apply `steps` Strang steps to q.

        Adjacent nonlinear half steps are merged; the 2/3 rule, when enabled, is
        applied once per step to the spectral image before the linear substep.
        """
        if steps <= 0:
            return q
        u = self.nonlinear(to_physical(q), self.dt / 2)
        for k in range(steps):
            q = to_fourier(u)
            if self.mask is not None:
                q = q * self.mask
            u = to_physical(q * self.linear_phase)
            u = self.nonlinear(u, self.dt if k < steps - 1 else self.dt / 2)
        self.check_bound(u, t0 + steps * self.dt)
        return to_fourier(u)


def build_ansatz(config: SimConfig) -> FieldState:
    """
    q_{h i(a)} = sqrt(xi_{ha}) on the tangential sites, zero elsewhere.

    With `first_order_correction` the image F(x0) of the homological field is
    added, which removes the first-order oscillation of the normal modes.
    """
    config.check()
    I, xi, N = config.tangential, config.xi_array, config.N
    q = np.zeros((config.d, N, N), dtype=complex)
    if config.first_order_correction and np.any(xi > 0):
        point = first_order_torus(I, xi)
    else:
        point = torus_point(I, xi)
    limit = N // 2
    for (h, n), value in point.items():
        if value == 0:
            continue
        if not (abs(n.n1) < limit and abs(n.n2) < limit):
            raise InvalidConfig(f"Initial mode {n} of component {h} is outside the grid |n_i| < {limit}")
        q[(h - 1,) + grid_index(n, N)] += value
    return FieldState(q, 0.0)


def rhs(state: FieldState, config: SimConfig) -> np.ndarray:
    """dq/dt = i |n|^2 q + i P_N[(c |u_h|^2 + dG_h/ds_h) u_h]"""
    q = state.q
    u = to_physical(q)
    V = phase_potential(np.abs(u) ** 2, config.G, config.cubic)
    return 1j * laplacian_symbol(state.N) * q + 1j * to_fourier(V * u)


def step_strang(state: FieldState, dt: float, config: SimConfig) -> FieldState:
    stepper = SplitStepper(config, dt)
    return FieldState(stepper.advance(state.q, 1, state.t), state.t + dt)


def evolve(state: FieldState, config: SimConfig, steps: int) -> FieldState:
    stepper = SplitStepper(config)
    return FieldState(stepper.advance(state.q, steps, state.t), state.t + steps * config.dt)


def reverse_evolve(state: FieldState, config: SimConfig, T: Optional[float] = None) -> FieldState:
    """
    S Phi_T S Phi_T applied to the state, with S: q -> qbar.

    For a reversible flow this returns the initial state.
    """
    steps = config.n_steps if T is None else int(round(T / config.dt))
    forward = evolve(state, config, steps)
    back = evolve(FieldState(np.conj(forward.q), forward.t), config, steps)
    return FieldState(np.conj(back.q), state.t)


def _unique(items: Iterable) -> List:
    seen, out = set(), []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def tracked_modes(config: SimConfig) -> Tuple[List[Tuple[int, Site]], List[Tuple[int, Site]]]:
    """
    Tangential modes, second-type sites, first-type sites near I and the user list.

    Returns:
        (all tracked modes, tangential modes), each as (h, site).
    """
    I, limit = config.tangential, config.N // 2
    tangential = [(h, i) for h in range(1, config.d + 1) for i in I]
    radius = int(math.ceil(2 * I.max_norm))
    sites: List[Site] = []
    for pair in enumerate_second_type(I) + enumerate_first_type(I, radius):
        sites.extend([pair.n, pair.m])
    sites = [n for n in _unique(sites) if abs(n.n1) < limit and abs(n.n2) < limit]
    normal = [(h, n) for h in range(1, config.d + 1) for n in sites]
    user = [(h, Site(*n)) for h, n in config.track]
    return _unique(tangential + normal + user), tangential


def _normal_mask(config: SimConfig) -> np.ndarray:
    mask = np.ones((config.N, config.N), dtype=bool)
    for i in config.tangential:
        mask[grid_index(i, config.N)] = False
    return mask


def run(config: SimConfig, state: Optional[FieldState] = None) -> ModeTrace:
    """
    Integrate from the ansatz (or `state`) to T, sampling every `stride` steps.

    Raises:
        ConfigError: T is not a whole number of steps or stride does not divide them.
        BlowUp: the field left `blowup_bound`.
    """
    config.check()
    steps = config.n_steps
    if abs(steps * config.dt - config.T) > 1e-9 * max(config.T, 1.0):
        raise ConfigError(f"T={config.T} is not a multiple of dt={config.dt}", key="T")
    if config.stride < 1 or steps % config.stride:
        raise ConfigError(f"stride={config.stride} does not divide the {steps} steps", key="stride")
    state = build_ansatz(config) if state is None else state
    modes, tangential = tracked_modes(config)
    index = tuple(np.array(ix) for ix in zip(*[(h - 1,) + grid_index(n, config.N) for h, n in modes]))
    normal = _normal_mask(config)
    samples = steps // config.stride + 1
    times = state.t + config.dt * config.stride * np.arange(samples)
    values = np.zeros((samples, len(modes)), dtype=complex)
    mass = np.zeros((samples, config.d))
    normal_sup = np.zeros((samples, config.d))

    def record(row: int, q: np.ndarray):
        values[row] = q[index]
        mass[row] = np.sum(np.abs(q) ** 2, axis=(-2, -1))
        normal_sup[row] = np.max(np.abs(q[:, normal]), axis=-1)

    logger.info(f"Integrating d={config.d}, N={config.N}, dt={config.dt}, T={config.T} ({steps} steps)")
    started = time.time()
    stepper = SplitStepper(config)
    q = state.q
    record(0, q)
    for row in range(1, samples):
        q = stepper.advance(q, config.stride, times[row - 1])
        record(row, q)
    logger.info(f"✅ Integration finished in {time.time() - started:.1f}s, {samples} samples")
    return ModeTrace(times=times, modes=modes, values=values, mass=mass, normal_sup=normal_sup, tangential=tangential)


def fit_phase(times: np.ndarray, series: np.ndarray) -> FrequencyFit:
    """Least-squares slope of the unwrapped phase of a complex series"""
    amplitude = np.abs(series)
    if len(series) < 2 or amplitude.max() == 0:
        raise DegenerateFit("Need at least two samples with nonzero amplitude")
    if amplitude.min() < AMPLITUDE_FLOOR * amplitude.max():
        raise DegenerateFit(f"Amplitude drops to {amplitude.min():.3e} (max {amplitude.max():.3e})")
    phase = np.unwrap(np.angle(series))
    jumps = np.abs(np.diff(phase))
    if np.any(jumps > MAX_PHASE_STEP):
        raise DegenerateFit(f"Phase advances {jumps.max():.3f} rad per sample; reduce stride")
    slope, intercept = np.polyfit(times, phase, 1)
    residual = float(np.sqrt(np.mean((phase - (slope * times + intercept)) ** 2)))
    return FrequencyFit(omega=float(slope), residual=residual)


def fit_frequencies(trace: ModeTrace,
                    modes: Optional[List[Tuple[int, Site]]] = None) -> Dict[Tuple[int, Site], FrequencyFit]:
    """Fitted frequency of each mode (the tangential modes by default)"""
    modes = trace.tangential if modes is None else modes
    return {mode: fit_phase(trace.times, trace.series(*mode)) for mode in modes}


def predicted_frequencies(config: SimConfig, xi: Optional[np.ndarray] = None) -> Dict[Tuple[int, Site], float]:
    """
    omega_{hi} = |i|^2 + xi_{hi}/(4 pi^2) + sum_{j != i} xi_{hj}/(2 pi^2).

    The shift scales with the cubic multiplier; G only enters at higher order.
    """
    I = config.tangential
    xi = config.xi_array if xi is None else np.asarray(xi, dtype=float)
    out = {}
    for h in range(1, config.d + 1):
        for a, i in enumerate(I):
            shift = float(tangential_omega(I, h, a).analytic(xi))
            out[(h, i)] = i.norm_sq + config.cubic * shift
    return out


def verify_quasiperiodic(trace: ModeTrace, config: SimConfig,
                         residual: Optional[ResidualCheck] = None) -> QPVerdict:
    """Compare a run against the first-order torus; failures go into the verdict"""
    xi = config.xi_array
    predicted = predicted_frequencies(config)
    errors: List[str] = []
    checks: List[ModeCheck] = []
    degenerate = False
    for h, n in trace.tangential:
        series = trace.series(h, n)
        a0 = abs(series[0])
        check = ModeCheck(h=h, site=n.as_tuple(), amplitude_drift=0.0, predicted=predicted[(h, n)])
        if a0 > 0:
            check.amplitude_drift = float(np.max(np.abs(np.abs(series) - a0)) / a0)
            try:
                fit = fit_phase(trace.times, series)
                check.fitted, check.fit_residual = fit.omega, fit.residual
                check.error = abs(fit.omega - check.predicted)
            except DegenerateFit as exc:
                degenerate = True
                errors.append(f"q{h}{n}: {exc}")
        checks.append(check)

    amplitude_ok = all(c.amplitude_drift <= config.tol_amp for c in checks)
    if not amplitude_ok:
        worst = max(checks, key=lambda c: c.amplitude_drift)
        errors.append(f"Amplitude drift {worst.amplitude_drift:.3e} of q{worst.h}{Site(*worst.site)} exceeds {config.tol_amp}")

    normal_sup = float(trace.normal_sup.max()) if len(trace) else 0.0
    normal_threshold = config.c_norm * float(xi.max()) ** 1.5 if xi.size else 0.0
    normal_ok = normal_sup <= normal_threshold
    if not normal_ok:
        errors.append(f"Normal sup {normal_sup:.3e} exceeds {normal_threshold:.3e}")

    frequency_ok = not degenerate
    for c in checks:
        if c.error is not None and c.error > config.tol_freq:
            frequency_ok = False
            errors.append(f"Frequency of q{c.h}{Site(*c.site)}: |{c.fitted:.10f} - {c.predicted:.10f}| > {config.tol_freq}")

    mass0 = trace.mass[0]
    safe = np.where(mass0 > 0, mass0, 1.0)
    drift = np.max(np.abs(trace.mass - mass0), axis=0) / safe
    mass_drift = [float(v) for v in drift]
    mass_ok = all(v <= config.tol_mass for v in mass_drift)
    if not mass_ok:
        errors.append(f"Mass drift {max(mass_drift):.3e} exceeds {config.tol_mass}")

    if residual is not None and not residual.ok:
        errors.append(f"Residual exponent {residual.exponent:.3f} is not 1.5 +- {RESIDUAL_EXPONENT_TOL}")
    passed = amplitude_ok and normal_ok and frequency_ok and mass_ok and (residual is None or residual.ok)
    if passed:
        logger.info("✅ Quasi-periodicity checks passed")
    else:
        logger.warning(f"⚠️ Quasi-periodicity checks failed: {len(errors)} issue(s)")
    return QPVerdict(
        modes=checks,
        amplitude_ok=amplitude_ok,
        normal_sup=normal_sup,
        normal_threshold=normal_threshold,
        normal_ok=normal_ok,
        frequency_ok=frequency_ok,
        mass_drift=mass_drift,
        mass_ok=mass_ok,
        residual=residual,
        errors=errors,
        passed=passed,
    )


def residual_norm(config: SimConfig, xi: Optional[np.ndarray] = None,
                  times: Optional[Iterable[float]] = None) -> float:
    """
    sup_t sum_{h,n} |dq/dt - rhs(q)| for the rotating torus
    q_{hi}(t) = sqrt(xi_{hi}) exp(i omega_{hi} t) with first-order omega.
    """
    xi = config.xi_array if xi is None else np.asarray(xi, dtype=float)
    I, N = config.tangential, config.N
    omega = predicted_frequencies(config, xi)
    times = np.linspace(0.0, TWO_PI, 16) if times is None else times
    x0 = torus_point(I, xi)
    worst = 0.0
    for t in times:
        q = np.zeros((config.d, N, N), dtype=complex)
        qdot = np.zeros_like(q)
        for (h, n), value in x0.items():
            ix = (h - 1,) + grid_index(n, N)
            q[ix] = value * np.exp(1j * omega[(h, n)] * t)
            qdot[ix] = 1j * omega[(h, n)] * q[ix]
        defect = qdot - rhs(FieldState(q, float(t)), config)
        worst = max(worst, float(np.sum(np.abs(defect))))
    return worst


def residual_scaling(config: SimConfig) -> ResidualCheck:
    """Residual at xi and xi/4; a 3/2 power law gives a ratio of 8"""
    xi = config.xi_array
    full = residual_norm(config, xi)
    quarter = residual_norm(config, xi / 4)
    ratio = full / quarter if quarter > 0 else None
    exponent = math.log(ratio) / math.log(4) if ratio else None
    ok = exponent is None or abs(exponent - 1.5) <= RESIDUAL_EXPONENT_TOL
    return ResidualCheck(residual=full, residual_quarter=quarter, ratio=ratio, exponent=exponent, ok=ok)
