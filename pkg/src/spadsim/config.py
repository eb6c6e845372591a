"""Flat ``section.key = value`` configuration files and the timestamp file format.

Example::

    sim.mode = hybrid
    sim.duration_s = 0.5
    gate.period_ns = 1000
    gate.width_ns = 400
    operating.v_ex = 40
    detector.sigma_core_ps = 24.27:221.0, 33.2:173.7, 45:143.6

Unknown keys and malformed values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .circuit import CircuitParams, Mode, TimingParams
from .detector import DetectorParams, OperatingPoint
from .engine import (DETECTION, SYNC, ConfigError, GateSchedule, RunResult, SimConfig,
                     SourceParams)

SECTIONS = {
    "detector": DetectorParams,
    "operating": OperatingPoint,
    "circuit": CircuitParams,
    "timing": TimingParams,
    "source": SourceParams,
}
SIM_KEYS = {"mode": str, "duration_s": float, "seed": int, "tdc_resolution_ps": int}
GATE_KEYS = ("period_ns", "width_ns", "offset_ns")


def parse_lines(lines, source="<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(key, "given twice")
        out[key] = value
    return out


def _convert(key, text, default):
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            pairs = []
            for item in text.split(","):
                v, s = item.split(":")
                pairs.append((float(v), float(s)))
            return tuple(pairs)
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None
    return text


def _build(cls, section, items):
    defaults = cls()
    names = {f.name for f in fields(cls)}
    kw = {}
    for k, v in items.items():
        if k not in names:
            raise ConfigError(f"{section}.{k}", "unknown key")
        kw[k] = _convert(f"{section}.{k}", v, getattr(defaults, k))
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(section, str(exc)) from None


def config_from_dict(d: dict[str, str], extra_sections=()) -> SimConfig:
    """Build a SimConfig; keys under ``extra_sections`` are ignored here."""
    grouped: dict[str, dict[str, str]] = {}
    for key, value in d.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(key, "keys must be 'section.name'")
        if section in extra_sections:
            continue
        if section not in SECTIONS and section not in ("sim", "gate"):
            raise ConfigError(key, "unknown section")
        grouped.setdefault(section, {})[name] = value

    kw = {s: _build(cls, s, grouped.get(s, {})) for s, cls in SECTIONS.items()}
    sim = grouped.get("sim", {})
    for name, text in sim.items():
        if name not in SIM_KEYS:
            raise ConfigError(f"sim.{name}", "unknown key")
        kw[name] = _convert(f"sim.{name}", text, SIM_KEYS[name]())
    if "mode" in kw:
        try:
            kw["mode"] = Mode(kw["mode"])
        except ValueError:
            raise ConfigError("sim.mode", f"unknown mode {kw['mode']!r} "
                              f"(choose from {', '.join(m.value for m in Mode)})") from None
    gate = grouped.get("gate")
    if gate:
        for name in gate:
            if name not in GATE_KEYS:
                raise ConfigError(f"gate.{name}", "unknown key")
        for name in ("period_ns", "width_ns"):
            if name not in gate:
                raise ConfigError(f"gate.{name}", "missing from gate_schedule")
        kw["gate"] = GateSchedule(**{k: _convert(f"gate.{k}", v, 0.0) for k, v in gate.items()})
    return SimConfig(**kw)


def load_config(path) -> SimConfig:
    text = Path(path).read_text()
    return config_from_dict(parse_lines(text.splitlines(), str(path)))


def _fmt(v) -> str:
    if isinstance(v, Mode):
        return v.value
    if isinstance(v, tuple):
        return ", ".join(f"{a!r}:{b!r}" for a, b in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: SimConfig) -> list[str]:
    """Every key of ``cfg`` as ``key = value`` lines; round-trips through parse_lines."""
    lines = [f"sim.{k} = {_fmt(getattr(cfg, k))}" for k in SIM_KEYS]
    if cfg.gate is not None:
        lines += [f"gate.{k} = {_fmt(getattr(cfg.gate, k))}" for k in GATE_KEYS]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        lines += [f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
    return lines


# --- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    v_ex: tuple[float, ...]
    temperature: tuple[float, ...]
    duration_s: float
    base: SimConfig
    dark_duration_s: float | None = None

    def __post_init__(self):
        if not self.v_ex:
            raise ConfigError("sweep.v_ex", "empty list")
        if not self.temperature:
            raise ConfigError("sweep.temperature", "empty list")
        if not self.duration_s > 0:
            raise ConfigError("sweep.duration_s", "must be > 0")
        for v in self.v_ex:
            for t in self.temperature:
                try:
                    OperatingPoint(v, t)
                except ValueError as exc:
                    raise ConfigError("sweep", str(exc)) from None

    def points(self) -> list[SimConfig]:
        """Configs sorted by (temperature, v_ex); point i uses seed base_seed XOR i."""
        grid = sorted((t, v) for t in set(self.temperature) for v in set(self.v_ex))
        return [dataclasses.replace(self.base, operating=OperatingPoint(v, t),
                                    duration_s=self.duration_s, seed=self.base.seed ^ i)
                for i, (t, v) in enumerate(grid)]


def load_sweep(path) -> SweepSpec:
    d = parse_lines(Path(path).read_text().splitlines(), str(path))
    sweep = {k.partition(".")[2]: v for k, v in d.items() if k.startswith("sweep.")}
    for k in sweep:
        if k not in ("v_ex", "temperature", "duration_s", "dark_duration_s"):
            raise ConfigError(f"sweep.{k}", "unknown key")

    def floats(key):
        text = sweep.get(key, "")
        try:
            return tuple(float(x) for x in text.split(",") if x.strip())
        except ValueError:
            raise ConfigError(f"sweep.{key}", f"cannot parse {text!r}") from None

    base = config_from_dict(d, extra_sections=("sweep",))
    dark = sweep.get("dark_duration_s")
    return SweepSpec(
        v_ex=floats("v_ex"), temperature=floats("temperature"),
        duration_s=_convert("sweep.duration_s", sweep.get("duration_s", "1.0"), 0.0),
        base=base,
        dark_duration_s=None if dark is None else _convert("sweep.dark_duration_s", dark, 0.0))


# --- timestamp files -------------------------------------------------------

def write_timestamps(path, result: RunResult, block: int = 1 << 16) -> None:
    """Header (``#`` config echo) then ``<time_ps> <D|S>`` per record."""
    codes = np.array(["S", "D"])
    with open(path, "w") as fh:
        fh.write("# spadsim timestamp file\n")
        fh.write(f"# seed = {result.config.seed}\n")
        for line in dump_config(result.config):
            fh.write(f"# {line}\n")
        for i in range(0, result.times_ps.size, block):
            t = result.times_ps[i:i + block].tolist()
            k = codes[result.kinds[i:i + block]].tolist()
            fh.write("".join(f"{a} {b}\n" for a, b in zip(t, k)))


def read_timestamps(path) -> tuple[SimConfig, np.ndarray, np.ndarray]:
    """Parse a timestamp file back into (config, times_ps, kinds)."""
    header, body = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                if "=" in line:
                    header.append(line[1:])
            else:
                body.append(line)
                body.extend(fh)
                break
    d = {k: v for k, v in parse_lines(header, str(path)).items() if k != "seed"}
    cfg = config_from_dict(d)
    tokens = "".join(body).split()
    if len(tokens) % 2:
        raise ValueError(f"{path}: truncated record")
    times = np.array(tokens[0::2], dtype=np.int64)
    labels = np.array(tokens[1::2])
    bad = ~np.isin(labels, ("D", "S"))
    if bad.any():
        raise ValueError(f"{path}: unknown record kind {labels[bad][0]!r}")
    kinds = np.where(labels == "D", DETECTION, SYNC).astype(np.uint8)
    return cfg, times, kinds
