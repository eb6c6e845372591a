import dataclasses
import math

import numpy as np
import pytest

from conftest import replace_detector
from spadsim.circuit import Mode, Phase
from spadsim.detector import OperatingPoint
from spadsim.engine import (DETECTION, SRC_DARK, SRC_PHOTON, ConfigError, GateSchedule,
                            SimConfig, SourceParams, apply_tdc, generate_dark_arrivals,
                            generate_photon_arrivals, run)


@pytest.mark.parametrize("t,expected", [(0.0, 0), (13.0, 10), (15.0, 20), (14.999, 10),
                                        (-5.0, 0), (25.0, 30)])
def test_apply_tdc(t, expected):
    assert apply_tdc(t, 10) == expected


def test_apply_tdc_vectorised():
    out = apply_tdc(np.array([0.0, 4.9, 5.0, 99994.9]), 10)
    assert out.dtype == np.int64
    assert out.tolist() == [0, 0, 10, 99990]


def test_no_photons_when_mu_zero():
    photons, sync = generate_photon_arrivals(SourceParams(mu=0.0), 0.1, np.random.default_rng(0))
    assert photons.size == 0
    assert sync.size == 10 ** 4


def test_photon_count_is_poisson():
    photons, sync = generate_photon_arrivals(SourceParams(mu=1.0), 10.0, np.random.default_rng(1))
    assert sync.size == 10 ** 6
    assert abs(photons.size - 10 ** 6) < 3e3
    assert np.all(np.diff(photons) >= 0)


def test_sync_count_at_100khz():
    _, sync = generate_photon_arrivals(SourceParams(), 1.0, np.random.default_rng(0))
    assert sync.size == 10 ** 5
    assert sync[1] - sync[0] == 1e7


def test_photon_jitter_matches_laser_width():
    photons, sync = generate_photon_arrivals(SourceParams(laser_fwhm_ps=70.0), 1.0,
                                             np.random.default_rng(2))
    offsets = np.mod(photons + 5e6, 1e7) - 5e6
    assert offsets.std() == pytest.approx(70.0 / 2.3548, rel=0.01)


def test_dark_arrivals():
    assert generate_dark_arrivals(0.0, 10.0, np.random.default_rng(0)).size == 0
    t = generate_dark_arrivals(260.0, 10.0, np.random.default_rng(4))
    assert abs(t.size - 2600) <= 153
    assert t.max() < 10e12


def test_dark_interarrival_mean():
    rate = 1e5
    t = generate_dark_arrivals(rate, 1.0, np.random.default_rng(9))
    gaps = np.diff(t)[:10 ** 5]
    mean = 1e12 / rate
    assert abs(gaps.mean() - mean) < 3 * mean / math.sqrt(gaps.size)


def _dark_cfg(rate=260.0, duration=10.0, **kw):
    cfg = SimConfig(duration_s=duration, source=SourceParams(mu=0.0), **kw)
    return replace_detector(cfg, dcr_ref=rate)


def test_dark_only_dead_time_corrected_count():
    cfg = replace_detector(_dark_cfg(), traps_ref=0.0)
    n = run(cfg).detections.size
    expected = 2600 * (1 - 260 * 80e-9)
    assert abs(n - expected) < 3 * math.sqrt(expected)


def test_records_sorted_and_quantized():
    r = run(SimConfig(duration_s=0.05, seed=3, tdc_resolution_ps=10))
    assert np.all(np.diff(r.times_ps) >= 0)
    assert np.all(r.times_ps % 10 == 0)
    recs = list(r.records())
    assert recs[0].kind == "S" and {x.kind for x in recs} == {"S", "D"}


def test_same_seed_same_output():
    cfg = SimConfig(duration_s=0.05, seed=42)
    a, b = run(cfg), run(cfg)
    assert np.array_equal(a.times_ps, b.times_ps) and np.array_equal(a.kinds, b.kinds)
    c = run(dataclasses.replace(cfg, seed=43))
    assert not np.array_equal(a.times_ps, c.times_ps)


def test_free_running_min_gap_without_jitter():
    cfg = SimConfig(duration_s=2e-3, seed=5, source=SourceParams(mu=0.0, system_jitter_ps=0.0))
    cfg = replace_detector(cfg, dcr_ref=5e7, frac_tail=0.0, sigma_core_ps=((45.0, 0.0),))
    d = run(cfg).detections
    assert d.size > 1000
    assert np.diff(d).min() >= 80_000


def test_config_validation():
    with pytest.raises(ConfigError, match="duration"):
        SimConfig(duration_s=0.0)
    with pytest.raises(ConfigError, match="gate_schedule"):
        SimConfig(mode=Mode.GATING)
    with pytest.raises(ConfigError, match="gate_schedule"):
        SimConfig(gate=GateSchedule(1000.0, 100.0))
    with pytest.raises(ConfigError):
        GateSchedule(100.0, 100.0)
    with pytest.raises(ConfigError):
        SourceParams(rep_rate=0.0)


def _gate_windows(gate, duration_ps):
    w = np.array(list(gate.windows(duration_ps)))
    return w[:, 0], w[:, 1]


def test_gating_one_avalanche_per_gate_inside_armed_window():
    gate = GateSchedule(period_ns=1000.0, width_ns=300.0, offset_ns=100.0)
    cfg = _dark_cfg(rate=2e7, duration=1e-3, mode=Mode.GATING, gate=gate)
    r = run(cfg, record_transitions=True)
    rise, fall = _gate_windows(gate, 1e9)
    k = np.searchsorted(rise, r.avalanche_times, side="right") - 1
    assert np.all(r.avalanche_times >= rise[k] + 15e3)
    assert np.all(r.avalanche_times < fall[k])
    assert np.all(np.bincount(k, minlength=rise.size) <= 1)
    # every gate ends in GateOff before the next one rises
    phases = [rec.after for rec in r.transitions]
    assert phases.count(Phase.GATE_OFF) == rise.size


def test_gating_without_gates_reaching_carriers_detects_nothing():
    # 10 ns gate with a 15 ns turn-on never arms the device
    gate = GateSchedule(period_ns=1000.0, width_ns=10.0)
    cfg = _dark_cfg(rate=1e8, duration=1e-4, mode=Mode.GATING, gate=gate)
    assert run(cfg).detections.size == 0


def test_hybrid_rearms_inside_gate():
    gate = GateSchedule(period_ns=2000.0, width_ns=600.0)
    cfg = _dark_cfg(rate=1e8, duration=1e-3, mode=Mode.HYBRID, gate=gate)
    r = run(cfg)
    rise, fall = _gate_windows(gate, 1e9)
    k = np.searchsorted(rise, r.avalanche_times, side="right") - 1
    assert np.all(r.avalanche_times >= rise[k] + 15e3)
    assert np.all(r.avalanche_times < fall[k])
    per_gate = np.bincount(k, minlength=rise.size)
    assert per_gate.max() >= 5
    gaps = np.diff(r.avalanche_times)[np.diff(k) == 0]
    assert gaps.min() >= 80e3


def test_reference_detection_probability(reference):
    light, _, _ = reference
    n_pulses = light.syncs.size
    p = np.count_nonzero(light.avalanche_sources == SRC_PHOTON) / n_pulses
    assert p == pytest.approx(1 - math.exp(-0.844), abs=0.002)


def test_trap_releases_only_after_rearm(reference):
    light, _, _ = reference
    t = light.avalanche_times
    assert np.diff(t).min() >= 80e3
    assert np.count_nonzero(light.avalanche_sources == SRC_DARK) > 0


def test_lower_bias_is_slower():
    a = run(SimConfig(duration_s=0.02, seed=1))
    b = run(SimConfig(duration_s=0.02, seed=1, operating=OperatingPoint(24.27, 268.0)))
    off_a = np.median(np.mod(a.detections, 10 ** 7))
    off_b = np.median(np.mod(b.detections, 10 ** 7))
    assert off_b - off_a == pytest.approx(5000.0, abs=100.0)
