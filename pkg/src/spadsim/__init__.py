"""Discrete-event simulator and calibration pipeline for a silicon SPAD module."""

from .characterize import CalibrationReport, Histogram, estimate_pde, fwhm, report
from .circuit import CircuitParams, Mode, TimingParams, solve_working_point
from .detector import DetectorParams, OperatingPoint, dark_rate, pde
from .engine import SimConfig, SourceParams, GateSchedule, apply_tdc, run

__version__ = "0.1.0"

__all__ = [
    "CalibrationReport", "CircuitParams", "DetectorParams", "GateSchedule", "Histogram", "Mode",
    "OperatingPoint", "SimConfig", "SourceParams", "TimingParams", "apply_tdc", "dark_rate",
    "estimate_pde", "fwhm", "pde", "report", "run", "solve_working_point",
]
