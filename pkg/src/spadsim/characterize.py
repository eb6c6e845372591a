"""Calibration pipeline: timestamp streams to PDE, DCR, afterpulsing and jitter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .engine import DETECTION, PS_PER_S, SYNC, RunResult, SimConfig

PHOTON_WINDOW_PS = 2000.0
BIN_WIDTH_PS = 10


class SaturationError(ValueError):
    """Detection rate at or above the laser repetition rate."""


class Measurement(NamedTuple):
    value: float
    stderr: float


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    origin: float
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.counts.size) + 0.5) * self.bin_width


@dataclass(frozen=True)
class Classification:
    photon_counts: int
    other_counts: int
    histogram: Histogram
    peak_ps: float


@dataclass(frozen=True)
class CalibrationReport:
    pde: float
    pde_err: float
    dcr: float
    dcr_err: float
    p_ap: float
    p_ap_err: float
    fwhm: float
    r_ph: float
    r_ap: float
    counts_total: int
    flags: tuple[str, ...] = field(default=())


def estimate_pde(r_ph: float, mu: float, f: float, duration_s: float | None = None) -> Measurement:
    """Poisson-corrected efficiency from the photon count rate.

    The standard error follows from the binomial variance of the per-pulse
    detection probability over ``f * duration_s`` pulses (nan if no duration).
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if r_ph < 0:
        raise ValueError("r_ph must be >= 0")
    if r_ph >= f:
        raise SaturationError(f"r_ph={r_ph} >= f={f}: one detection per pulse, formula undefined")
    p = r_ph / f
    value = -math.log1p(-p) / mu
    if duration_s is None:
        return Measurement(value, math.nan)
    n = f * duration_s
    return Measurement(value, math.sqrt(p * (1.0 - p) / n) / (mu * (1.0 - p)))


def fold(times_ps: np.ndarray, sync_ps: np.ndarray, period_ps: float) -> np.ndarray:
    """Detection times relative to the laser pulse train, in [0, period)."""
    return np.mod(times_ps - float(sync_ps[0]), period_ps)


def classify_events(times_ps, kinds, f: float, window_ps: float = PHOTON_WINDOW_PS,
                    bin_width: float = BIN_WIDTH_PS) -> Classification:
    """Split detections into laser-correlated photons and everything else.

    Detections are folded onto one laser period.  The photon peak is the mode
    of the folded histogram; counts within ``window_ps/2`` of its centre are
    photons.
    """
    times_ps = np.asarray(times_ps)
    kinds = np.asarray(kinds)
    sync = times_ps[kinds == SYNC]
    if sync.size == 0:
        raise ValueError("no sync records in stream")
    period = PS_PER_S / f
    if window_ps >= period:
        raise ValueError("photon window must be shorter than the laser period")
    folded = fold(times_ps[kinds == DETECTION], sync, period)
    nbins = int(math.ceil(period / bin_width))
    counts = np.bincount(np.minimum((folded // bin_width).astype(np.int64), nbins - 1),
                         minlength=nbins)
    hist = Histogram(bin_width, 0.0, counts)
    if folded.size == 0:
        return Classification(0, 0, hist, math.nan)
    peak = float(hist.centers[int(np.argmax(counts))])
    # distance on the circle, so a peak near the period edge still works
    d = np.abs(folded - peak)
    d = np.minimum(d, period - d)
    photons = int(np.count_nonzero(d <= 0.5 * window_ps))
    return Classification(photons, int(folded.size) - photons, hist, peak)


def estimate_afterpulse(photon_counts: float, other_counts: int, dcr: float,
                        live_time_s: float) -> Measurement:
    """Afterpulse probability from the excess of non-photon counts over dark counts.

    ``live_time_s`` is the time outside the photon windows.  Both rates share
    the run duration, so it cancels from the ratio.
    """
    if photon_counts <= 0:
        raise ValueError("afterpulse probability undefined without photon counts")
    dark = dcr * live_time_s
    excess = max(0.0, other_counts - dark)
    p = excess / photon_counts
    var = (other_counts + dark) / photon_counts ** 2 + p * p / photon_counts
    return Measurement(p, math.sqrt(var))


def estimate_dcr(times_ps, kinds, duration_s: float) -> Measurement:
    if duration_s <= 0:
        raise ValueError("duration must be > 0")
    n = int(np.count_nonzero(np.asarray(kinds) == DETECTION))
    return Measurement(n / duration_s, math.sqrt(n) / duration_s)


def fwhm(h: Histogram) -> float:
    """Full width at half maximum with linear interpolation between bin centres."""
    c = np.asarray(h.counts, dtype=float)
    if c.size == 0 or c.max() <= 0:
        raise ValueError("empty histogram")
    if c.min() == c.max():
        raise ValueError("flat histogram has no maximum")
    top = c.max()
    half = 0.5 * top
    at_max = np.flatnonzero(c == top)
    x = h.centers

    i = at_max[0]
    while i > 0 and c[i - 1] >= half:
        i -= 1
    if i == 0:
        raise ValueError("histogram never falls below half maximum on the left")
    left = x[i - 1] + (half - c[i - 1]) / (c[i] - c[i - 1]) * h.bin_width

    j = at_max[-1]
    while j < c.size - 1 and c[j + 1] >= half:
        j += 1
    if j == c.size - 1:
        raise ValueError("histogram never falls below half maximum on the right")
    right = x[j] + (c[j] - half) / (c[j] - c[j + 1]) * h.bin_width
    return float(right - left)


def report(result: RunResult, dcr: Measurement | float, window_ps: float = PHOTON_WINDOW_PS,
           mu: float | None = None, duration_s: float | None = None) -> CalibrationReport:
    """Full calibration of a laser run.

    ``dcr`` comes from a separate dark run.  Dark counts leaking into the
    photon window are subtracted before the efficiency estimate.
    """
    cfg: SimConfig = result.config
    f = cfg.source.rep_rate
    mu = cfg.source.mu if mu is None else mu
    T = cfg.duration_s if duration_s is None else duration_s
    if not isinstance(dcr, Measurement):
        dcr = Measurement(float(dcr), math.nan)
    flags = []

    cls = classify_events(result.times_ps, result.kinds, f, window_ps)
    in_window = window_ps * 1e-12 * f
    photons = cls.photon_counts - dcr.value * in_window * T
    if photons < 0:
        flags.append("photon_rate_clamped")
        photons = 0.0
    r_ph = photons / T
    pde = estimate_pde(r_ph, mu, f, T)

    if photons > 0:
        ap = estimate_afterpulse(photons, cls.other_counts, dcr.value, T * (1.0 - in_window))
        if cls.other_counts < dcr.value * T * (1.0 - in_window):
            flags.append("afterpulse_rate_clamped")
    else:
        ap = Measurement(math.nan, math.nan)
    width = fwhm(cls.histogram) if cls.photon_counts else math.nan
    return CalibrationReport(
        pde=pde.value, pde_err=pde.stderr, dcr=dcr.value, dcr_err=dcr.stderr,
        p_ap=ap.value, p_ap_err=ap.stderr, fwhm=width, r_ph=r_ph, r_ap=ap.value * r_ph,
        counts_total=int(np.count_nonzero(result.kinds == DETECTION)), flags=tuple(flags))


REPORT_COLUMNS = ("temperature_K", "v_ex_V", "pde", "pde_err", "dcr_cps", "dcr_err", "p_ap",
                  "p_ap_err", "fwhm_ps", "counts_total", "seed")


def report_row(rep: CalibrationReport, cfg: SimConfig) -> dict:
    return {
        "temperature_K": cfg.operating.temperature, "v_ex_V": cfg.operating.v_ex,
        "pde": rep.pde, "pde_err": rep.pde_err, "dcr_cps": rep.dcr, "dcr_err": rep.dcr_err,
        "p_ap": rep.p_ap, "p_ap_err": rep.p_ap_err, "fwhm_ps": rep.fwhm,
        "counts_total": rep.counts_total, "seed": cfg.seed,
    }


def write_histogram(path, h: Histogram, lo: float | None = None, hi: float | None = None) -> None:
    """``bin_start_ps,count`` CSV, optionally restricted to bins starting in [lo, hi)."""
    starts = h.origin + np.arange(h.counts.size) * h.bin_width
    keep = np.ones(starts.size, bool)
    if lo is not None:
        keep &= starts >= lo
    if hi is not None:
        keep &= starts < hi
    with open(path, "w") as fh:
        fh.write("bin_start_ps,count\n")
        for s, n in zip(starts[keep].tolist(), h.counts[keep].tolist()):
            fh.write(f"{s:g},{n}\n")
