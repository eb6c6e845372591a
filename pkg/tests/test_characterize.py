import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spadsim.characterize import (Histogram, Measurement, SaturationError, classify_events,
                                  estimate_afterpulse, estimate_dcr, estimate_pde, fwhm, report,
                                  write_histogram)
from spadsim.engine import DETECTION, SYNC, SRC_PHOTON, RunResult, SimConfig, SourceParams

F = 1e5
PERIOD = 1e7
HAND = Histogram(10.0, -5.0, np.array([0, 1, 3, 8, 10, 8, 3, 1, 0]))


def test_pde_examples():
    assert estimate_pde(0.0, 1.0, F).value == 0.0
    assert estimate_pde(57000.0, 1.0, F).value == pytest.approx(-math.log(0.43), rel=1e-15)
    assert estimate_pde(57000.0, 1.0, F).value == pytest.approx(0.8440, abs=5e-5)
    assert estimate_pde(4877.1, 0.1, F).value == pytest.approx(0.500, abs=5e-4)


def test_pde_stderr_from_binomial():
    m = estimate_pde(57000.0, 1.0, F, duration_s=10.0)
    p = 0.57
    assert m.stderr == pytest.approx(math.sqrt(p * (1 - p) / 1e6) / (1 - p))
    assert math.isnan(estimate_pde(57000.0, 1.0, F).stderr)


def test_pde_errors():
    with pytest.raises(SaturationError):
        estimate_pde(F, 1.0, F)
    with pytest.raises(ValueError):
        estimate_pde(100.0, 0.0, F)
    with pytest.raises(ValueError):
        estimate_pde(-1.0, 1.0, F)


@given(st.floats(1e-3, 1 - 1e-3), st.floats(0.01, 10.0))
def test_pde_analytic_inverse(eta, mu):
    r_ph = F * -math.expm1(-mu * eta)
    assert estimate_pde(r_ph, mu, F).value == pytest.approx(eta, rel=1e-12)


@given(st.lists(st.floats(0.0, F * (1 - 1e-9)), min_size=2, max_size=20))
def test_pde_monotone(rates):
    rates = sorted(rates)
    values = [estimate_pde(r, 1.0, F).value for r in rates]
    assert all(a <= b for a, b in zip(values, values[1:]))


def _stream(detections, n_sync=10):
    sync = np.arange(n_sync) * PERIOD
    t = np.concatenate([sync, np.asarray(detections, float)])
    k = np.concatenate([np.full(n_sync, SYNC), np.full(len(detections), DETECTION)]).astype(np.uint8)
    order = np.lexsort((k, t))
    return t[order].astype(np.int64), k[order]


def test_single_detection_at_peak():
    t, k = _stream([3 * PERIOD + 20_005])
    cls = classify_events(t, k, F)
    assert cls.photon_counts == 1 and cls.other_counts == 0
    assert cls.peak_ps == 20_005


def test_classification_partitions_and_window():
    rng = np.random.default_rng(0)
    pulses = rng.integers(0, 100, 5000) * PERIOD
    photons = pulses + 20e6 % PERIOD + rng.normal(0, 150, 5000)
    others = rng.uniform(0, 100 * PERIOD, 3000)
    t, k = _stream(np.concatenate([photons, others]), n_sync=100)
    cls = classify_events(t, k, F)
    assert cls.photon_counts + cls.other_counts == 8000
    assert int(cls.histogram.counts.sum()) == 8000
    leak = 3000 * 2000 / PERIOD
    assert abs(cls.photon_counts - 5000 - leak) < 3 * math.sqrt(leak) + 1


def test_peak_near_period_edge_wraps():
    t, k = _stream([p * PERIOD + PERIOD - 300 for p in range(5)] + [p * PERIOD + 300 for p in range(1, 5)])
    cls = classify_events(t, k, F)
    assert cls.photon_counts == 9


def test_dark_stream_leakage_into_window():
    rng = np.random.default_rng(3)
    n = 200_000
    t, k = _stream(np.sort(rng.uniform(0, 1000 * PERIOD, n)), n_sync=1000)
    cls = classify_events(t, k, F)
    expected = n * 2000 / PERIOD
    # the mode of a flat histogram sits on an upward fluctuation, so allow the peak-bin excess
    assert abs(cls.photon_counts - expected) < 3 * math.sqrt(expected) + cls.histogram.counts.max()


def test_classify_requires_sync_and_short_window():
    with pytest.raises(ValueError, match="sync"):
        classify_events(np.array([5]), np.array([DETECTION]), F)
    t, k = _stream([100.0])
    with pytest.raises(ValueError):
        classify_events(t, k, F, window_ps=PERIOD)


def test_afterpulse_examples():
    assert estimate_afterpulse(1000, 50, 5.0, 10.0).value == 0.0
    # R_ap = 29, R_ph = 1000 over a 1 s live time, no dark counts
    assert estimate_afterpulse(1000, 29, 0.0, 1.0).value == pytest.approx(0.029)
    assert estimate_afterpulse(1000, 10, 20.0, 1.0).value == 0.0
    with pytest.raises(ValueError):
        estimate_afterpulse(0, 5, 1.0, 1.0)


def test_dcr_examples():
    assert estimate_dcr([], [], 10.0) == Measurement(0.0, 0.0)
    kinds = np.full(2600, DETECTION)
    m = estimate_dcr(np.zeros(2600), kinds, 10.0)
    assert m.value == 260.0 and m.stderr == pytest.approx(5.1, abs=0.05)
    assert estimate_dcr(np.zeros(800), np.full(800, DETECTION), 10.0).value == 80.0
    with pytest.raises(ValueError):
        estimate_dcr([], [], 0.0)


def test_fwhm_hand_example():
    assert fwhm(HAND) == 32.0


@pytest.mark.parametrize("scale", [1, 3, 1000])
def test_fwhm_scale_invariant(scale):
    h = Histogram(HAND.bin_width, HAND.origin, HAND.counts * scale)
    assert fwhm(h) == pytest.approx(32.0, rel=1e-12)


def test_fwhm_of_dense_gaussian():
    sigma, bw = 150.0, 10.0
    x = np.arange(-2000.0, 2000.0, bw) + bw / 2
    counts = np.round(1e6 * np.exp(-0.5 * (x / sigma) ** 2)).astype(np.int64)
    assert abs(fwhm(Histogram(bw, -2000.0, counts)) - 2.3548 * sigma) < bw / 2


def test_fwhm_plateau_peak():
    h = Histogram(10.0, 0.0, np.array([0, 4, 10, 10, 10, 4, 0]))
    # half max 5: left crossing 15 + 10/6, right crossing 45 + 50/6
    assert fwhm(h) == pytest.approx((45 + 50 / 6) - (15 + 10 / 6), abs=1e-9)


@pytest.mark.parametrize("counts", [[], [0, 0, 0], [4, 4, 4]])
def test_fwhm_rejects_empty_or_flat(counts):
    with pytest.raises(ValueError):
        fwhm(Histogram(10.0, 0.0, np.array(counts, dtype=np.int64)))


def test_report_on_synthetic_stream():
    rng = np.random.default_rng(8)
    n_pulses = 100_000
    duration = n_pulses / F
    sync = np.arange(n_pulses) * PERIOD
    hit = rng.random(n_pulses) < 0.5
    photons = sync[hit] + 50_000 + rng.normal(0, 100, hit.sum())
    t = np.concatenate([sync, photons])
    k = np.concatenate([np.full(n_pulses, SYNC), np.full(photons.size, DETECTION)]).astype(np.uint8)
    order = np.lexsort((k, t))
    cfg = SimConfig(duration_s=duration, source=SourceParams(mu=1.0))
    res = RunResult(cfg, t[order].astype(np.int64), k[order], None, None)
    rep = report(res, Measurement(0.0, 0.0))
    assert rep.pde == pytest.approx(-math.log(1 - hit.mean()), rel=1e-12)
    assert rep.p_ap == 0.0 and rep.flags == ()
    assert rep.fwhm == pytest.approx(235.5, abs=15)
    assert rep.counts_total == photons.size


def test_report_flags_clamped_afterpulse():
    t, k = _stream([p * PERIOD + 1000 for p in range(10)])
    cfg = SimConfig(duration_s=10 * PERIOD / 1e12)
    rep = report(RunResult(cfg, t, k, None, None), 1e3)
    assert "afterpulse_rate_clamped" in rep.flags and rep.p_ap == 0.0


def test_reference_photon_fraction_matches_detection_probability(reference):
    light, _, _ = reference
    cls = classify_events(light.times_ps, light.kinds, F)
    true_photons = np.count_nonzero(light.avalanche_sources == SRC_PHOTON)
    assert abs(cls.photon_counts - true_photons) < 0.002 * true_photons


def test_write_histogram(tmp_path):
    path = tmp_path / "h.csv"
    write_histogram(path, HAND, lo=10.0, hi=40.0)
    assert path.read_text() == "bin_start_ps,count\n15,3\n25,8\n35,10\n"
