"""Quenching / avalanche-extraction readout circuit.

Two independent pieces live here:

* the idle-state working point of the quenching transistor M1, found as the
  intersection of the Zener-branch and current-balance curves;
* a timed state machine for the QUENCHING/RESET logic in free-running,
  gating and hybrid operation.

Times handled by the state machine are picoseconds; TimingParams stores ns.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class NoBracket(ValueError):
    """The two branch curves do not cross on [0, v_zener]."""


class IllegalTransition(RuntimeError):
    pass


@dataclass(frozen=True)
class CircuitParams:
    v_dd: float = 53.0
    v_cc: float = 5.0
    v_zener: float = 4.3
    v_on: float = 2.5
    r1: float = 1e3
    r2: float = 20e3
    r3: float = 1e3
    r_on: float = 1.0
    r_off: float = 1e9
    i0_zener: float = 10e-6
    v_slope: float = 0.1
    # M1 turn-on: log-resistance logistic, centred below v_on so that R_M1 has
    # already reached ~r_on at the threshold
    m1_midpoint: float = 2.34
    m1_width: float = 0.02

    def __post_init__(self):
        if not self.v_on < self.v_zener < self.v_dd:
            raise ValueError("need v_on < v_zener < v_dd")
        for name in ("r1", "r2", "r3", "r_on", "r_off"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.v_slope <= 0 or self.m1_width <= 0:
            raise ValueError("v_slope and m1_width must be positive")
        if self.i0_zener < 0:
            raise ValueError("i0_zener must be non-negative")


class WorkingPoint(NamedTuple):
    v_gs: float
    v_s: float
    i1: float
    residual: float


def zener_current(v_gs, c: CircuitParams):
    return c.i0_zener * np.exp((np.asarray(v_gs, dtype=float) - c.v_zener) / c.v_slope)


def zener_branch_vs(v_gs, c: CircuitParams):
    """Source voltage seen from the V_dd-R1-L1-D1-D2 branch."""
    return c.v_dd - zener_current(v_gs, c) * c.r1 - v_gs


def m1_resistance(v_gs, c: CircuitParams):
    x = (np.asarray(v_gs, dtype=float) - c.m1_midpoint) / c.m1_width
    on = 0.5 * (1.0 + np.tanh(0.5 * x))  # logistic, overflow-free
    return np.exp(math.log(c.r_off) + on * (math.log(c.r_on) - math.log(c.r_off)))


def balance_vs(i1, r_m1, r_load, v_dd):
    """Solve ``i1 + (v_dd - v_s)/r_m1 = v_s/r_load`` for v_s; r_m1 may be inf."""
    g = np.where(np.isinf(r_m1), 0.0, 1.0 / np.asarray(r_m1, dtype=float))
    return (i1 + v_dd * g) / (g + 1.0 / r_load)


def balance_branch_vs(v_gs, c: CircuitParams):
    """Source voltage from current balance at the SPAD anode (load R = r2)."""
    return balance_vs(zener_current(v_gs, c), m1_resistance(v_gs, c), c.r2, c.v_dd)


def _mismatch(v_gs, c):
    return zener_branch_vs(v_gs, c) - balance_branch_vs(v_gs, c)


def solve_working_point(c: CircuitParams, tol: float = 1e-6, max_iter: int = 400) -> WorkingPoint:
    """Bisect for the idle-state equilibrium where the two branch curves cross."""
    lo, hi = 0.0, c.v_zener
    f_lo, f_hi = float(_mismatch(lo, c)), float(_mismatch(hi, c))
    if not (f_lo > 0.0 and f_hi < 0.0):
        raise NoBracket(
            f"branch mismatch has no sign change on [0, {c.v_zener}] V "
            f"(f(0)={f_lo:.4g} V, f(v_zener)={f_hi:.4g} V)")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = float(_mismatch(mid, c))
        if abs(f_mid) < tol:
            break
        if f_mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, hi):
            break
    else:
        raise RuntimeError("working-point bisection did not converge")
    if abs(f_mid) >= tol:
        raise RuntimeError(f"bisection interval collapsed with residual {f_mid:.3g} V >= tol")
    return WorkingPoint(mid, float(zener_branch_vs(mid, c)), float(zener_current(mid, c)), f_mid)


# --- state machine ---------------------------------------------------------

@dataclass(frozen=True)
class TimingParams:
    detect_delay_ns: float = 20.0
    holdoff_ns: float = 50.0
    reset_width_ns: float = 10.0
    gate_on_delay_ns: float = 10.0
    gate_on_fall_ns: float = 5.0
    gate_off_delay_ns: float = 15.0
    gate_off_rise_ns: float = 10.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if not v > 0:
                raise ValueError(f"timing.{k} must be strictly positive")

    @property
    def dead_time_ns(self) -> float:
        return self.detect_delay_ns + self.holdoff_ns + self.reset_width_ns


class Mode(enum.Enum):
    FREE_RUNNING = "free-running"
    GATING = "gating"
    HYBRID = "hybrid"


class Phase(enum.IntEnum):
    ARMED = 0
    AVALANCHING = 1
    QUENCHED = 2
    RESETTING = 3
    GATE_OFF = 4
    GATE_TURNING_ON = 5
    GATE_TURNING_OFF = 6


# Anode sits at the quench level (device out of Geiger mode).
HIGH_PHASES = frozenset({Phase.QUENCHED, Phase.GATE_OFF})


class Event(enum.IntEnum):
    AVALANCHE_ONSET = 0
    AVALANCHE_DETECTED = 1
    HOLDOFF_EXPIRED = 2
    RESET_DONE = 3
    GATE_RISE = 4
    GATE_FALL = 5
    GATE_OFF_SETTLED = 6


class CircuitState(NamedTuple):
    phase: Phase
    since: float = 0.0
    gate_high: bool = True


def initial_state(mode: Mode) -> CircuitState:
    if mode is Mode.FREE_RUNNING:
        return CircuitState(Phase.ARMED, 0.0, True)
    return CircuitState(Phase.GATE_OFF, 0.0, False)


def transition(state: CircuitState, event: Event, now: float, t: TimingParams,
               mode: Mode) -> tuple[CircuitState, list[tuple[float, Event]]]:
    """Advance the readout logic by one event.

    Returns the successor state and the timer events it schedules, as
    ``(absolute time in ps, event)`` pairs.  Stale timers (scheduled before
    the last phase change) must be filtered out by the caller.
    """
    ph, _, gate = state

    if mode is not Mode.GATING:
        # active quenching path (free-running, and hybrid inside a gate)
        if event is Event.AVALANCHE_ONSET and ph is Phase.ARMED:
            return (CircuitState(Phase.AVALANCHING, now, gate),
                    [(now + 1e3 * t.detect_delay_ns, Event.AVALANCHE_DETECTED)])
        if event is Event.AVALANCHE_DETECTED and ph is Phase.AVALANCHING:
            return (CircuitState(Phase.QUENCHED, now, gate),
                    [(now + 1e3 * t.holdoff_ns, Event.HOLDOFF_EXPIRED)])
        if event is Event.HOLDOFF_EXPIRED and ph is Phase.QUENCHED:
            if gate:
                return (CircuitState(Phase.RESETTING, now, gate),
                        [(now + 1e3 * t.reset_width_ns, Event.RESET_DONE)])
            return CircuitState(Phase.GATE_OFF, now, gate), []
        if event is Event.RESET_DONE and ph is Phase.RESETTING:
            return CircuitState(Phase.ARMED, now, gate), []
    elif event is Event.AVALANCHE_ONSET and ph is Phase.ARMED:
        # gating: no active quench, the gate end quenches passively
        return CircuitState(Phase.AVALANCHING, now, gate), []

    if mode is not Mode.FREE_RUNNING:
        if event is Event.GATE_FALL:
            if ph is Phase.QUENCHED:
                return state._replace(gate_high=False), []
            if ph in (Phase.ARMED, Phase.AVALANCHING, Phase.RESETTING, Phase.GATE_TURNING_ON):
                settle = now + 1e3 * (t.gate_off_delay_ns + t.gate_off_rise_ns)
                return (CircuitState(Phase.GATE_TURNING_OFF, now, False),
                        [(settle, Event.GATE_OFF_SETTLED)])
        if event is Event.GATE_RISE:
            if ph is Phase.QUENCHED:
                return state._replace(gate_high=True), []
            if ph in (Phase.GATE_OFF, Phase.GATE_TURNING_OFF):
                armed = now + 1e3 * (t.gate_on_delay_ns + t.gate_on_fall_ns)
                return CircuitState(Phase.GATE_TURNING_ON, now, True), [(armed, Event.RESET_DONE)]
        if event is Event.GATE_OFF_SETTLED and ph is Phase.GATE_TURNING_OFF:
            return CircuitState(Phase.GATE_OFF, now, gate), []
        if event is Event.RESET_DONE and ph is Phase.GATE_TURNING_ON:
            return CircuitState(Phase.ARMED, now, gate), []

    raise IllegalTransition(f"{event.name} in {ph.name} ({mode.value}, gate_high={gate})")


class TransitionRecord(NamedTuple):
    time: float
    event: Event
    before: Phase
    after: Phase


# --- anode waveform --------------------------------------------------------

def anode_waveform(log, t: TimingParams, c: CircuitParams | None = None,
                   initial: Phase = Phase.ARMED, end: float | None = None,
                   quench_level: float | None = None) -> list[tuple[float, float]]:
    """Piecewise-linear anode trace (ps, V) rebuilt from a transition log.

    The quench level defaults to the solved idle working point.  Edges that
    start before a previous ramp has finished begin from the voltage reached.
    """
    if quench_level is None:
        quench_level = solve_working_point(c or CircuitParams()).v_s
    v0 = quench_level if initial in HIGH_PHASES or initial is Phase.GATE_TURNING_ON else 0.0
    pts: list[tuple[float, float]] = [(0.0, v0)]

    def level_at(time):
        # value of the trace at ``time``, dropping breakpoints past it
        while len(pts) > 1 and pts[-1][0] > time:
            (ta, va), (tb, vb) = pts[-2], pts[-1]
            if ta <= time:
                pts[-1] = (time, va + (vb - va) * (time - ta) / (tb - ta))
                break
            pts.pop()
        return pts[-1][1]

    def ramp(start, delay_ns, width_ns, target):
        t0 = start + 1e3 * delay_ns
        v = level_at(t0)
        if pts[-1][0] < t0:
            pts.append((t0, v))
        if v != target:
            pts.append((t0 + 1e3 * width_ns, target))

    for rec in log:
        if rec.after is Phase.QUENCHED and rec.before is Phase.AVALANCHING:
            ramp(rec.time, 0.0, t.gate_off_rise_ns, quench_level)
        elif rec.after is Phase.RESETTING:
            ramp(rec.time, 0.0, t.gate_on_fall_ns, 0.0)
        elif rec.after is Phase.GATE_TURNING_ON:
            ramp(rec.time, t.gate_on_delay_ns, t.gate_on_fall_ns, 0.0)
        elif rec.after is Phase.GATE_TURNING_OFF:
            ramp(rec.time, t.gate_off_delay_ns, t.gate_off_rise_ns, quench_level)
    if end is not None and end > pts[-1][0]:
        pts.append((end, level_at(end)))
    return pts


def scripted_log(scenario: str, t: TimingParams) -> tuple[list[TransitionRecord], Phase, float]:
    """Drive the state machine through a canned Fig.-4 style scenario.

    Returns (log, initial phase, suggested end time in ps).
    """
    if scenario == "free-running-pulse":
        mode, script = Mode.FREE_RUNNING, [(50e3, Event.AVALANCHE_ONSET)]
        end = 50e3 + 1e3 * t.dead_time_ns + 50e3
    elif scenario == "gate-cycle":
        mode, script = Mode.GATING, [(50e3, Event.GATE_RISE), (150e3, Event.GATE_FALL)]
        end = 250e3
    elif scenario == "no-event":
        mode, script, end = Mode.FREE_RUNNING, [], 100e3
    else:
        raise ValueError(f"unknown waveform scenario {scenario!r}")

    state = initial_state(mode)
    start = state.phase
    pending = sorted(script)
    log = []
    while pending:
        now, ev = pending.pop(0)
        new, timers = transition(state, ev, now, t, mode)
        log.append(TransitionRecord(now, ev, state.phase, new.phase))
        state = new
        pending = sorted(pending + timers)
    return log, start, end


def write_waveform(path, trace) -> None:
    with open(path, "w") as fh:
        for time_ps, volts in trace:
            fh.write(f"{int(round(time_ps))} {volts:.3f}\n")
