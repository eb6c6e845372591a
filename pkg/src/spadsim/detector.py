"""Stochastic physics model of the thick-junction silicon SPAD.

All laws are phenomenological and anchored to a reference operating point
(45 V excess bias, 268 K).  Times returned by the samplers are picoseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

V_EX_REF = 45.0
T_REF = 268.0
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class DomainError(ValueError):
    """Operating point outside the model validity range."""


@dataclass(frozen=True)
class OperatingPoint:
    v_ex: float = V_EX_REF
    temperature: float = T_REF

    def __post_init__(self):
        if not 0.0 <= self.v_ex <= 50.0:
            raise DomainError(f"v_ex={self.v_ex} V outside [0, 50] V")
        if not 250.0 <= self.temperature <= 300.0:
            raise DomainError(f"temperature={self.temperature} K outside [250, 300] K")


def _saturation(v_ex, v_sat):
    return -np.expm1(-np.asarray(v_ex, dtype=float) / v_sat)


V_SAT_DEFAULT = 12.0
ETA_MAX_DEFAULT = 0.844 / float(_saturation(V_EX_REF, V_SAT_DEFAULT))

# Detector-only jitter core (ps) at the bias settings giving 75 %, 81 % and
# 84.4 % efficiency.  Values are solved by calibrate_jitter_core() so that the
# full timing response (core + tail + 70 ps laser + 30 ps system) has a FWHM of
# 540, 430 and 360 ps respectively.
SIGMA_CORE_DEFAULT = (
    (24.274659, 220.99564),
    (33.203153, 173.66898),
    (45.0, 143.55616),
)


@dataclass(frozen=True)
class DetectorParams:
    v_br: float = 170.0
    eta_max: float = ETA_MAX_DEFAULT
    v_sat: float = V_SAT_DEFAULT
    dcr_ref: float = 260.0
    alpha_dcr: float = 0.05
    beta_dcr: float = math.log(260.0 / 80.0) / 10.0
    pap_ref: float = 0.029
    # expected trapped carriers per avalanche at the reference point; fixed by
    # calibrate.calibrate_trap_yield() against pap_ref
    traps_ref: float = 0.064192
    gamma_ap: float = math.log(2.9 / 1.2) / 20.0
    kappa_ap: float = 0.05
    tau_trap_ns: float = 100.0
    sigma_core_ps: tuple[tuple[float, float], ...] = field(default=SIGMA_CORE_DEFAULT)
    tau_tail_ps: float = 120.0
    frac_tail: float = 0.2
    delay0_ns: float = 20.0
    # 5 ns less propagation delay between the 75 % and 84.4 % settings
    delay_slope_ns_per_v: float = 5.0 / (45.0 - 24.274659)

    def __post_init__(self):
        if not 0.0 < self.eta_max <= 1.0:
            raise ValueError(f"eta_max={self.eta_max} must lie in (0, 1]")
        if self.v_sat <= 0:
            raise ValueError("v_sat must be positive")
        for name in ("dcr_ref", "pap_ref", "traps_ref", "tau_trap_ns", "tau_tail_ps", "frac_tail"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.frac_tail >= 1.0:
            raise ValueError("frac_tail must be < 1")
        if not self.sigma_core_ps:
            raise ValueError("sigma_core_ps needs at least one (v_ex, sigma) point")
        vs = [v for v, _ in self.sigma_core_ps]
        if any(b <= a for a, b in zip(vs, vs[1:])):
            raise ValueError("sigma_core_ps bias points must be strictly increasing")
        if any(s < 0 for _, s in self.sigma_core_ps):
            raise ValueError("sigma_core_ps widths must be non-negative")


class TrapIntensity(NamedTuple):
    expected_traps: float
    tau_ns: float


def efficiency_curve(v_ex, p: DetectorParams):
    """Saturating efficiency law, vectorised and without range checks."""
    return p.eta_max * _saturation(v_ex, p.v_sat)


def pde(op: OperatingPoint, p: DetectorParams) -> float:
    """Photon detection efficiency at ``op`` (temperature independent)."""
    return float(efficiency_curve(op.v_ex, p))


def bias_for_pde(target: float, p: DetectorParams) -> float:
    """Excess bias at which :func:`pde` equals ``target``."""
    if not 0.0 <= target < p.eta_max:
        raise DomainError(f"pde {target} unreachable (eta_max={p.eta_max:.4f})")
    return -p.v_sat * math.log1p(-target / p.eta_max)


def dark_rate(op: OperatingPoint, p: DetectorParams) -> float:
    """Primary dark carrier rate in counts/s."""
    return (p.dcr_ref
            * math.exp(p.alpha_dcr * (op.v_ex - V_EX_REF))
            * math.exp(p.beta_dcr * (op.temperature - T_REF)))


def afterpulse_intensity(op: OperatingPoint, p: DetectorParams) -> TrapIntensity:
    n = (p.traps_ref
         * math.exp(p.kappa_ap * (op.v_ex - V_EX_REF))
         * math.exp(-p.gamma_ap * (op.temperature - T_REF)))
    return TrapIntensity(n, p.tau_trap_ns)


def sigma_core(v_ex: float, p: DetectorParams) -> float:
    """Gaussian core width (ps); piecewise linear, held constant outside the table."""
    vs, ss = zip(*p.sigma_core_ps)
    return float(np.interp(v_ex, vs, ss))


def propagation_delay_ps(v_ex: float, p: DetectorParams) -> float:
    return 1e3 * (p.delay0_ns - p.delay_slope_ns_per_v * v_ex)


def sample_response_delay(op: OperatingPoint, p: DetectorParams, rng: np.random.Generator,
                          size=None):
    """Draw avalanche-to-output delays in ps.

    A Gaussian core, plus with probability ``frac_tail`` an exponential
    diffusion delay that only ever pushes the output later.
    """
    x = rng.normal(propagation_delay_ps(op.v_ex, p), sigma_core(op.v_ex, p), size)
    tail = rng.random(size) < p.frac_tail
    x = x + np.where(tail, rng.exponential(p.tau_tail_ps, size) if p.tau_tail_ps > 0 else 0.0, 0.0)
    if size is None:
        return float(x)
    return x


# --- timing-response calibration -------------------------------------------

def response_density(x, sigma_total: float, frac_tail: float, tau_tail: float):
    """Density of the zero-delay response convolved with Gaussian instrument jitter."""
    from scipy.stats import exponnorm, norm

    x = np.asarray(x, dtype=float)
    core = norm.pdf(x, scale=sigma_total)
    if frac_tail == 0.0 or tau_tail == 0.0:
        return core
    tail = exponnorm.pdf(x, tau_tail / sigma_total, scale=sigma_total)
    return (1.0 - frac_tail) * core + frac_tail * tail


def response_fwhm(sigma_total: float, frac_tail: float, tau_tail: float) -> float:
    """FWHM (ps) of :func:`response_density`, from its half-maximum roots."""
    from scipy.optimize import brentq, minimize_scalar

    def f(x):
        return float(response_density(x, sigma_total, frac_tail, tau_tail))

    hi = sigma_total + tau_tail
    peak = minimize_scalar(lambda x: -f(x), bounds=(-sigma_total, hi), method="bounded",
                           options={"xatol": 1e-9 * sigma_total}).x
    half = 0.5 * f(peak)
    left = brentq(lambda x: f(x) - half, peak - 10 * sigma_total, peak, xtol=1e-10)
    right = brentq(lambda x: f(x) - half, peak, peak + 10 * hi, xtol=1e-10)
    return right - left


def calibrate_jitter_core(target_fwhm: float, frac_tail: float, tau_tail: float,
                          laser_fwhm: float = 70.0, system_fwhm: float = 30.0) -> float:
    """Core sigma (ps) such that the full measured response has ``target_fwhm``.

    The laser and system widths combine with the core in quadrature.  With no
    tail this reduces to ``sqrt(target^2 - laser^2 - system^2) / 2.3548``.
    """
    from scipy.optimize import brentq

    instrument_var = (laser_fwhm ** 2 + system_fwhm ** 2) / FWHM_PER_SIGMA ** 2

    def mismatch(s):
        return response_fwhm(math.sqrt(s * s + instrument_var), frac_tail, tau_tail) - target_fwhm

    return brentq(mismatch, 1e-3, target_fwhm, xtol=1e-9)
