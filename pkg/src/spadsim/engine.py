"""Discrete-event simulation of the detector module.

Carrier streams (laser photons, dark carriers) are pre-generated in sorted
chunks; trap releases, circuit timers and gate edges go through a heap.
While the readout is not armed, stream carriers up to the next scheduled
event are dropped in bulk, so the cost of a run scales with the number of
avalanches rather than the number of carriers.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .circuit import (CircuitParams, CircuitState, Event, Mode, Phase, TimingParams,
                      TransitionRecord, initial_state, transition)
from .detector import (FWHM_PER_SIGMA, DetectorParams, OperatingPoint, afterpulse_intensity,
                       dark_rate, pde, sample_response_delay)

logger = logging.getLogger(__name__)

PS_PER_S = 1e12
CHUNK = 1 << 16

# event-queue priorities for simultaneous events
PRIO_GATE, PRIO_TIMER, PRIO_CARRIER = 0, 1, 2
TRAP = -1

SYNC, DETECTION = 0, 1
KIND_CODES = {SYNC: "S", DETECTION: "D"}

SRC_PHOTON, SRC_DARK, SRC_TRAP = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SourceParams:
    rep_rate: float = 100e3
    mu: float = 1.0
    laser_fwhm_ps: float = 70.0
    system_jitter_ps: float = 30.0

    def __post_init__(self):
        if not self.rep_rate > 0:
            raise ConfigError("source.rep_rate", "must be > 0")
        if self.mu < 0:
            raise ConfigError("source.mu", "must be >= 0")
        if self.laser_fwhm_ps < 0:
            raise ConfigError("source.laser_fwhm_ps", "must be >= 0")
        if self.system_jitter_ps < 0:
            raise ConfigError("source.system_jitter_ps", "must be >= 0")


@dataclass(frozen=True)
class GateSchedule:
    period_ns: float
    width_ns: float
    offset_ns: float = 0.0

    def __post_init__(self):
        if not 0 < self.width_ns < self.period_ns:
            raise ConfigError("gate.width_ns", "need 0 < width_ns < period_ns")
        if self.offset_ns < 0:
            raise ConfigError("gate.offset_ns", "must be >= 0")

    def windows(self, duration_ps: float) -> Iterator[tuple[float, float]]:
        """(rise, fall) times in ps for every gate starting before ``duration_ps``."""
        k = 0
        while True:
            rise = 1e3 * (self.offset_ns + k * self.period_ns)
            if rise >= duration_ps:
                return
            yield rise, rise + 1e3 * self.width_ns
            k += 1


@dataclass(frozen=True)
class SimConfig:
    mode: Mode = Mode.FREE_RUNNING
    duration_s: float = 1.0
    seed: int = 1
    gate: GateSchedule | None = None
    tdc_resolution_ps: int = 10
    detector: DetectorParams = field(default_factory=DetectorParams)
    operating: OperatingPoint = field(default_factory=OperatingPoint)
    circuit: CircuitParams = field(default_factory=CircuitParams)
    timing: TimingParams = field(default_factory=TimingParams)
    source: SourceParams = field(default_factory=SourceParams)

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ConfigError("sim.duration_s", "must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("sim.seed", "must be an unsigned 64-bit integer")
        if self.tdc_resolution_ps <= 0:
            raise ConfigError("sim.tdc_resolution_ps", "must be > 0")
        if self.mode is Mode.FREE_RUNNING and self.gate is not None:
            raise ConfigError("gate_schedule", "not allowed in free-running mode")
        if self.mode is not Mode.FREE_RUNNING and self.gate is None:
            raise ConfigError("gate_schedule", f"required in {self.mode.value} mode")


class TimestampRecord(NamedTuple):
    time_ps: int
    kind: str


@dataclass
class RunResult:
    config: SimConfig
    times_ps: np.ndarray          # int64, sorted
    kinds: np.ndarray             # uint8, SYNC / DETECTION
    avalanche_times: np.ndarray   # float ps, onset of every avalanche
    avalanche_sources: np.ndarray  # uint8, SRC_*
    transitions: list[TransitionRecord] | None = None

    @property
    def detections(self) -> np.ndarray:
        return self.times_ps[self.kinds == DETECTION]

    @property
    def syncs(self) -> np.ndarray:
        return self.times_ps[self.kinds == SYNC]

    def records(self) -> Iterator[TimestampRecord]:
        for t, k in zip(self.times_ps.tolist(), self.kinds.tolist()):
            yield TimestampRecord(t, KIND_CODES[k])


def apply_tdc(time_ps, resolution: float = 10):
    """Round half-up to the nearest TDC code, returned in integer ps."""
    codes = np.floor(np.asarray(time_ps, dtype=float) / resolution + 0.5)
    out = (codes * resolution).astype(np.int64)
    return int(out) if out.ndim == 0 else out


# --- carrier generation ----------------------------------------------------

def _n_pulses(s: SourceParams, duration_s: float) -> int:
    n = duration_s * s.rep_rate
    return int(math.ceil(n - 1e-9 * max(1.0, n)))


def sync_times_ps(s: SourceParams, duration_s: float) -> np.ndarray:
    return np.arange(_n_pulses(s, duration_s)) * (PS_PER_S / s.rep_rate)


def _photon_chunks(s: SourceParams, duration_s: float, rng: np.random.Generator,
                   chunk: int = CHUNK) -> Iterator[np.ndarray]:
    n_pulses = _n_pulses(s, duration_s)
    period = PS_PER_S / s.rep_rate
    sigma = s.laser_fwhm_ps / FWHM_PER_SIGMA
    end = duration_s * PS_PER_S
    last = -math.inf
    for start in range(0, n_pulses, chunk):
        k = np.arange(start, min(n_pulses, start + chunk))
        n = rng.poisson(s.mu, k.size)
        t = np.repeat(k * period, n) + rng.normal(0.0, sigma, int(n.sum()))
        t.sort()
        t = t[(t >= 0.0) & (t < end)]
        if t.size and t[0] < last:
            raise RuntimeError("laser jitter exceeds the chunk boundary guard")
        if t.size:
            last = t[-1]
        yield t


def generate_photon_arrivals(s: SourceParams, duration_s: float, rng: np.random.Generator):
    """All photon arrival times (ps) and the sync pulse times, both sorted."""
    chunks = list(_photon_chunks(s, duration_s, rng))
    photons = np.concatenate(chunks) if chunks else np.empty(0)
    return photons, sync_times_ps(s, duration_s)


def _dark_chunks(rate: float, duration_s: float, rng: np.random.Generator,
                 chunk: int = CHUNK) -> Iterator[np.ndarray]:
    if rate <= 0:
        return
    end = duration_s * PS_PER_S
    mean = PS_PER_S / rate
    last = 0.0
    while True:
        t = last + np.cumsum(rng.exponential(mean, chunk))
        last = t[-1]
        if last >= end:
            yield t[t < end]
            return
        yield t


def generate_dark_arrivals(rate: float, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson arrival times (ps) on [0, duration)."""
    chunks = list(_dark_chunks(rate, duration_s, rng))
    return np.concatenate(chunks) if chunks else np.empty(0)


class _Stream:
    """Cursor over a lazily produced sequence of sorted chunks."""

    def __init__(self, chunks: Iterator[np.ndarray], keep=None):
        self._chunks = chunks
        self._keep = keep
        self._buf: list[float] = []
        self._i = 0
        self.next = math.inf
        self._load()

    def _load(self):
        for arr in self._chunks:
            if self._keep is not None:
                arr = arr[self._keep(arr.size)]
            if arr.size:
                self._arr = arr
                self._buf = arr.tolist()
                self._i = 0
                self.next = self._buf[0]
                return
        self._buf, self._i, self.next = [], 0, math.inf

    def pop(self) -> float:
        t = self.next
        self._i += 1
        if self._i < len(self._buf):
            self.next = self._buf[self._i]
        else:
            self._load()
        return t

    def drop_before(self, t: float) -> None:
        while self.next < t:
            j = int(np.searchsorted(self._arr, t, side="left"))
            if j < len(self._buf):
                self._i = j
                self.next = self._buf[j]
                return
            self._load()


class _Draws:
    """Block-buffered scalar draws from one generator."""

    def __init__(self, draw, block: int = 4096):
        self._draw = draw
        self._block = block
        self._buf: list = []
        self._i = 0

    def __call__(self):
        if self._i == len(self._buf):
            self._buf = self._draw(self._block).tolist()
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


# --- engine ----------------------------------------------------------------

def run(config: SimConfig, record_transitions: bool = False) -> RunResult:
    """Simulate ``config`` and return the TDC-quantized timestamp stream."""
    cfg = config
    op, det, tim, src = cfg.operating, cfg.detector, cfg.timing, cfg.source
    mode = cfg.mode
    end = cfg.duration_s * PS_PER_S

    streams = np.random.SeedSequence(cfg.seed).spawn(7)
    rng_photon, rng_trial, rng_dark, rng_resp, rng_sys, rng_ntrap, rng_trel = (
        np.random.default_rng(s) for s in streams)

    eta = pde(op, det)
    traps = afterpulse_intensity(op, det)
    sys_sigma = src.system_jitter_ps / FWHM_PER_SIGMA

    # photons that fail the avalanche trial never change the state: thin them up front
    photons = _Stream(_photon_chunks(src, cfg.duration_s, rng_photon),
                      keep=lambda n: rng_trial.random(n) < eta)
    darks = _Stream(_dark_chunks(dark_rate(op, det), cfg.duration_s, rng_dark))
    response = _Draws(lambda n: sample_response_delay(op, det, rng_resp, n))
    system = _Draws(lambda n: rng_sys.normal(0.0, sys_sigma, n))
    n_traps = _Draws(lambda n: rng_ntrap.poisson(traps.expected_traps, n))
    trap_delay = _Draws(lambda n: rng_trel.exponential(1e3 * traps.tau_ns, n))

    heap: list = []
    seq = 0

    def push(time, prio, code, epoch=0):
        nonlocal seq
        heapq.heappush(heap, (time, prio, seq, code, epoch))
        seq += 1

    state = initial_state(mode)
    epoch = 0
    log: list[TransitionRecord] | None = [] if record_transitions else None

    def fire(event, now):
        nonlocal state, epoch
        new, timers = transition(state, event, now, tim, mode)
        if log is not None:
            log.append(TransitionRecord(now, event, state.phase, new.phase))
        if new.phase is not state.phase:
            epoch += 1
        state = new
        for when, ev in timers:
            push(when, PRIO_TIMER, ev, epoch)

    gates = cfg.gate.windows(end) if cfg.gate is not None else iter(())
    next_gate = next(gates, None)
    if next_gate is not None:
        push(next_gate[0], PRIO_GATE, Event.GATE_RISE)

    det_raw: list[float] = []
    av_times: list[float] = []
    av_src: list[int] = []

    def avalanche(now, source):
        av_times.append(now)
        av_src.append(source)
        det_raw.append(now + response() + system())
        for _ in range(n_traps()):
            push(now + trap_delay(), PRIO_CARRIER, TRAP)
        fire(Event.AVALANCHE_ONSET, now)

    ARMED = Phase.ARMED
    while True:
        te = heap[0][0] if heap else math.inf
        tc = photons.next if photons.next <= darks.next else darks.next
        if te <= tc:
            if te >= end:
                break
            now, _, _, code, ep = heapq.heappop(heap)
            if code == TRAP:
                if state.phase is ARMED:
                    avalanche(now, SRC_TRAP)
            elif code == Event.GATE_RISE:
                fire(Event.GATE_RISE, now)
                push(next_gate[1], PRIO_GATE, Event.GATE_FALL)
            elif code == Event.GATE_FALL:
                fire(Event.GATE_FALL, now)
                next_gate = next(gates, None)
                if next_gate is not None:
                    push(next_gate[0], PRIO_GATE, Event.GATE_RISE)
            elif ep == epoch:
                fire(code, now)
        else:
            if tc >= end:
                break
            if state.phase is not ARMED:
                if te == math.inf:
                    break
                photons.drop_before(te)
                darks.drop_before(te)
            elif photons.next <= darks.next:
                avalanche(photons.pop(), SRC_PHOTON)
            else:
                avalanche(darks.pop(), SRC_DARK)

    res = cfg.tdc_resolution_ps
    det_ps = apply_tdc(np.asarray(det_raw, dtype=float), res)
    sync_ps = apply_tdc(sync_times_ps(src, cfg.duration_s), res)
    times = np.concatenate([sync_ps, det_ps]).astype(np.int64)
    kinds = np.concatenate([np.full(sync_ps.size, SYNC, np.uint8),
                            np.full(det_ps.size, DETECTION, np.uint8)])
    order = np.lexsort((kinds, times))
    logger.debug("run seed=%d: %d avalanches, %d sync", cfg.seed, len(av_times), sync_ps.size)
    return RunResult(cfg, times[order], kinds[order], np.asarray(av_times),
                     np.asarray(av_src, dtype=np.uint8), log)
