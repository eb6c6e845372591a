"""End-to-end calibration of the trap yield against a target afterpulse probability."""

from __future__ import annotations

import dataclasses
import logging
import math

from .characterize import CalibrationReport, estimate_dcr, report
from .engine import SimConfig, run

logger = logging.getLogger(__name__)

DARK_SEED_BIT = 1 << 62


def dark_config(cfg: SimConfig) -> SimConfig:
    """Same detector with the laser blocked; seed decorrelated from the light run."""
    return dataclasses.replace(cfg, source=dataclasses.replace(cfg.source, mu=0.0),
                               seed=cfg.seed ^ DARK_SEED_BIT)


def characterize_point(cfg: SimConfig, dark_duration_s: float | None = None) -> CalibrationReport:
    """Dark run followed by a laser run at the same operating point."""
    dark_cfg = dark_config(cfg)
    if dark_duration_s is not None:
        dark_cfg = dataclasses.replace(dark_cfg, duration_s=dark_duration_s)
    dark = run(dark_cfg)
    dcr = estimate_dcr(dark.times_ps, dark.kinds, dark_cfg.duration_s)
    return report(run(cfg), dcr)


def measured_pap(cfg: SimConfig, traps_ref: float) -> float:
    det = dataclasses.replace(cfg.detector, traps_ref=traps_ref)
    return characterize_point(dataclasses.replace(cfg, detector=det)).p_ap


def calibrate_trap_yield(cfg: SimConfig, target: float | None = None, tol: float = 5e-4,
                         max_iter: int = 30) -> tuple[float, float]:
    """Bisect ``traps_ref`` until the simulated afterpulse probability hits ``target``.

    Every evaluation reuses the seeds of ``cfg`` so the objective is a
    deterministic, monotone function of the trap yield.  Returns
    ``(traps_ref, measured p_ap)``.
    """
    target = cfg.detector.pap_ref if target is None else target
    # traps released after the dead time survive with exp(-dead/tau); afterpulses cascade
    survive = math.exp(-cfg.timing.dead_time_ns / cfg.detector.tau_trap_ns)
    guess = target / (survive * (1.0 + target))
    lo, hi = 0.0, 2.0 * guess
    p_hi = measured_pap(cfg, hi)
    while p_hi < target:
        lo, hi = hi, 2.0 * hi
        p_hi = measured_pap(cfg, hi)
    for i in range(max_iter):
        mid = 0.5 * (lo + hi)
        p = measured_pap(cfg, mid)
        logger.info("bisection %d: traps_ref=%.6f p_ap=%.5f", i, mid, p)
        if abs(p - target) < tol:
            return mid, p
        if p < target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"trap-yield bisection did not reach |p_ap - {target}| < {tol}")
