"""
Parameter types, unit conventions and configuration loading.

Unit convention
---------------
Every frequency and rate is stored as an ordinary frequency in Hz (or 1/s).
Where an equation needs angular units the factor ``2*pi`` is applied at the
call site.  Powers of the resonant lasers are in nW, powers of the charge
repump lasers in uW, photon energies in eV and durations in s.

Configuration format
--------------------
A single JSON document with up to three top-level sections::

    {
      "emitter":    {"gamma0": 25e6, ...},
      "charge":     {"k_capture": 1.28, ...},
      "simulation": {"capture": {"n_reps": 500}, "cpt": {...}, ...}
    }

Missing fields take the defaults below.  Unknown keys raise ``ConfigError``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError, ValidationError

__all__ = [
    "EmitterParams", "ChargeParams", "LaserPulse", "PulseSequence",
    "PULSE_ROLES", "SimulationSettings", "Config",
    "load_config", "parse_config", "dump_config",
    "power_broadened_width", "saturation_parameter", "signal_rate",
]


def _require_positive(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ValidationError(name, f"must be strictly positive, got {value!r}")


def _require_nonnegative(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
            raise ValidationError(name, f"must be non-negative, got {value!r}")


def _require_probability(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
            raise ValidationError(name, f"must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class EmitterParams:
    """Optical, spin and detection constants of a single emitter.

    Attributes
    ----------
    gamma0 : float
        Natural FWHM linewidth of the C-transition, Hz.
    p_sat : float
        Saturation power of the resonant transition, nW.
    c_max : float
        Detected count rate at excited-state population 1/2, counts/s.
    dark_rate : float
        Detector dark count rate, counts/s.
    eta_branch : float
        Cycling ratio, spin-conserving to spin-flipping decay.
    t1_spin : float
        Ground-state spin lifetime, s.
    gamma_s : float
        Ground-state spin dephasing rate as an ordinary frequency, Hz.
    """

    gamma0: float = 25e6
    p_sat: float = 2.0
    c_max: float = 45e3
    dark_rate: float = 150.0
    eta_branch: float = 650.0
    t1_spin: float = 22e-3
    gamma_s: float = 64e3

    def __post_init__(self):
        _require_positive(self, "gamma0", "p_sat", "c_max", "eta_branch", "t1_spin", "gamma_s")
        # zero dark counts is a useful idealised limit
        _require_nonnegative(self, "dark_rate")
        if self.eta_branch < 1:
            raise ValidationError("eta_branch", f"must be >= 1, got {self.eta_branch!r}")


@dataclass(frozen=True)
class ChargeParams:
    """Effective rates of the bright/dark charge cycle.

    ``k_capture`` is in Hz/nW of resonant power, ``k_init`` in Hz/uW of
    repump power.  ``eta_max`` caps the per-pulse success of a repump pulse.
    ``blue_capture`` (Hz/uW, default 0) optionally lets the repump laser
    itself drive the bright centre dark.
    """

    k_capture: float = 1.28
    k_init: float = 190.0
    eta_max: float = 0.91
    repump_threshold: float = 2.4
    repump_unity: float = 3.0
    repump_shape: str = "linear"
    blue_capture: float = 0.0

    def __post_init__(self):
        _require_positive(self, "k_capture", "k_init", "repump_threshold", "repump_unity")
        _require_nonnegative(self, "blue_capture")
        if not (0.0 < self.eta_max <= 1.0):
            raise ValidationError("eta_max", f"must lie in (0, 1], got {self.eta_max!r}")
        if not self.repump_threshold < self.repump_unity:
            raise ValidationError("repump_threshold", "must be below repump_unity")
        if self.repump_shape not in ("linear", "logistic"):
            raise ValidationError("repump_shape", "must be 'linear' or 'logistic'")


PULSE_ROLES = ("resonant_C", "resonant_A1", "resonant_B2",
               "blue_445", "green_532", "supercontinuum")
RESONANT_ROLES = frozenset({"resonant_C", "resonant_A1", "resonant_B2"})
REPUMP_ROLES = frozenset({"blue_445", "green_532", "supercontinuum"})


@dataclass(frozen=True)
class LaserPulse:
    """One rectangular laser pulse.  ``power`` is always given in nW."""

    role: str
    power: float
    duration: float
    start: float = 0.0
    photon_energy: float | None = None

    def __post_init__(self):
        if self.role not in PULSE_ROLES:
            raise ValidationError("role", f"unknown pulse role {self.role!r}")
        _require_nonnegative(self, "power", "start")
        _require_positive(self, "duration")
        if self.role == "supercontinuum":
            if self.photon_energy is None or not self.photon_energy > 0:
                raise ValidationError("photon_energy", "required (> 0) for supercontinuum pulses")

    @property
    def end(self):
        return self.start + self.duration


@dataclass(frozen=True)
class PulseSequence:
    """Ordered pulses repeated ``repeat_count`` times with the given period.

    Overlapping pulses are rejected unless ``co_illumination`` is set.
    ``period`` defaults to the end of the last pulse.
    """

    pulses: tuple
    repeat_count: int = 1
    period: float | None = None
    co_illumination: bool = False

    def __post_init__(self):
        pulses = tuple(self.pulses)
        object.__setattr__(self, "pulses", pulses)
        if not pulses:
            raise ValidationError("pulses", "sequence must contain at least one pulse")
        if not isinstance(self.repeat_count, int) or self.repeat_count < 1:
            raise ValidationError("repeat_count", "must be a positive integer")
        last_end = max(p.end for p in pulses)
        if self.period is None:
            object.__setattr__(self, "period", last_end)
        elif self.period < last_end * (1 - 1e-12):
            raise ValidationError("period", f"{self.period} s is shorter than the last pulse end {last_end} s")
        if not self.co_illumination:
            ordered = sorted(pulses, key=lambda p: p.start)
            for a, b in zip(ordered, ordered[1:]):
                if b.start < a.end - 1e-15:
                    raise ValidationError("pulses", f"{a.role} and {b.role} overlap; set co_illumination")


def saturation_parameter(params: EmitterParams, power):
    return power / params.p_sat


def signal_rate(params: EmitterParams, power):
    """Detected count rate of the bright centre on resonance, counts/s.

    ``2*c_max`` times the incoherent excited-state population
    ``s / (2 (1 + s))`` with ``s = P / p_sat``.
    """
    s = saturation_parameter(params, power)
    return 2.0 * params.c_max * s / (2.0 * (1.0 + s))


def power_broadened_width(params: EmitterParams, power):
    """FWHM of the power-broadened line, ``gamma0 * sqrt(1 + P/p_sat)``.

    Parameters
    ----------
    params : EmitterParams
    power : float or array_like
        Resonant laser power in nW, must be non-negative.

    Returns
    -------
    float or ndarray
        Linewidth in Hz.
    """
    import numpy as np

    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValidationError("power", "must be non-negative")
    width = params.gamma0 * np.sqrt(1.0 + power / params.p_sat)
    return float(width) if width.ndim == 0 else width


# ---------------------------------------------------------------------------
# Per-experiment simulation settings

@dataclass(frozen=True)
class TelegraphSettings:
    blue_power: float = 50.0          # uW
    blue_duration: float = 10e-3
    gap: float = 5e-6
    resonant_power: float = 20.7      # nW
    resonant_duration: float = 1.0
    repeat_count: int = 5
    bin_width: float = 1e-3
    start_state: str = "dark"

    def __post_init__(self):
        _require_positive(self, "blue_duration", "resonant_duration", "bin_width")
        _require_nonnegative(self, "blue_power", "gap", "resonant_power")
        if self.start_state not in ("bright", "dark"):
            raise ValidationError("start_state", "must be 'bright' or 'dark'")


@dataclass(frozen=True)
class CaptureSettings:
    powers: tuple = (5.0, 10.0, 15.0, 20.7, 30.0, 40.0)   # nW
    n_reps: int = 500
    pulse_length: float = 1.0
    blue_power: float = 50.0          # uW
    blue_duration: float = 10e-3
    binning: Any = "fd"

    def __post_init__(self):
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        if not self.powers or min(self.powers) < 0:
            raise ValidationError("powers", "need at least one non-negative power")
        if self.n_reps < 50:
            raise ValidationError("n_reps", "must be >= 50")
        _require_positive(self, "pulse_length", "blue_duration", "blue_power")


@dataclass(frozen=True)
class InitEffSettings:
    blue_power: float = 50.0          # uW
    pulse_lengths: tuple = (0.0, 0.1e-3, 0.2e-3, 0.4e-3, 0.6e-3, 0.8e-3, 1.0e-3, 1.3e-3,
                            1.6e-3, 2.0e-3, 2.5e-3, 3.0e-3, 4.0e-3, 5.0e-3, 7.0e-3)
    n_reps: int = 250
    probe_power: float = 46.0 / 1.28  # nW, gives 46 Hz capture with the default slope
    probe_duration: float = 0.5
    gap: float = 5e-6
    threshold_counts: int = 5
    window: float | None = 2e-3

    def __post_init__(self):
        object.__setattr__(self, "pulse_lengths", tuple(float(t) for t in self.pulse_lengths))
        if not self.pulse_lengths or min(self.pulse_lengths) < 0:
            raise ValidationError("pulse_lengths", "need non-negative pulse lengths")
        _require_positive(self, "blue_power", "probe_power", "probe_duration", "n_reps")
        _require_nonnegative(self, "gap", "threshold_counts")
        if self.window is not None:
            _require_positive(self, "window")


@dataclass(frozen=True)
class EnhanceSettings:
    energies: tuple = tuple(round(2.1 + 0.05 * i, 4) for i in range(19))   # eV
    repump_power_scale: float = 2000.0   # Hz
    resonant_power: float = 20.7         # nW
    residual_recovery_rate: float = 0.0  # Hz
    integration_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        _require_positive(self, "resonant_power", "integration_time")
        _require_nonnegative(self, "repump_power_scale", "residual_recovery_rate")


@dataclass(frozen=True)
class PLESettings:
    """Defaults reproduce the low-power series (four-MHz case)."""

    power: float = 0.5                # nW
    n_scans: int = 60
    scan_period: float = 60.0
    grid_span: float = 300e6          # full span, Hz
    grid_points: int = 151
    dwell: float = 0.05
    sigma_jitter: float = 1.8e6
    tau_corr: float = 120.0
    drift_amplitude: float = 4.6e6
    drift_period: float = 600.0
    wavemeter_sigma: float = 2e6
    extra_width: float = 3.5e6        # homogeneous residual broadening, Hz

    def __post_init__(self):
        if self.n_scans < 2:
            raise ValidationError("n_scans", "must be >= 2")
        if self.grid_points < 5:
            raise ValidationError("grid_points", "must be >= 5")
        _require_positive(self, "scan_period", "grid_span", "dwell")
        _require_nonnegative(self, "power", "sigma_jitter", "tau_corr", "drift_amplitude",
                             "drift_period", "wavemeter_sigma", "extra_width")


@dataclass(frozen=True)
class CPTSettings:
    rabi_carrier: float = 3.5e6       # Hz, g2 <-> e
    rabi_sideband: float = 3.5e6      # Hz, g1 <-> e
    delta1: float = 0.0
    gamma_s: float | None = None      # falls back to EmitterParams.gamma_s
    delta_span: float = 2e6
    delta_points: int = 101
    background: float = 1000.0        # counts/s
    dwell: float = 1.0                # s per point; 0 disables shot noise
    taper: float = 0.0                # relative sideband Rabi change per Hz of detuning
    fit: bool = True
    free: tuple = ("gamma_s",)

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        _require_nonnegative(self, "rabi_carrier", "rabi_sideband", "background", "dwell")
        _require_positive(self, "delta_span")
        if self.gamma_s is not None:
            _require_nonnegative(self, "gamma_s")
        if self.delta_points < 3:
            raise ValidationError("delta_points", "must be >= 3")


@dataclass(frozen=True)
class ReadoutSettings:
    init_pulse: float = 200e-6
    read_pulse: float = 200e-6
    gap: float = 300e-6
    rest: float = 50e-3
    n_shots: int = 11139
    scatter_rate: float | None = None      # None: calibrated default
    flip_per_photon: float | None = None   # None: calibrated default
    collection_eff: float = 2e-3
    init_fidelity: float = 0.989
    threshold: int = 1
    background_rate: float = 0.0
    bin_width: float = 10e-6

    def __post_init__(self):
        _require_positive(self, "init_pulse", "read_pulse", "gap", "rest", "bin_width")
        _require_probability(self, "collection_eff", "init_fidelity")
        _require_nonnegative(self, "threshold", "background_rate")
        if self.n_shots < 1:
            raise ValidationError("n_shots", "must be >= 1")


@dataclass(frozen=True)
class FitSettings:
    max_iter: int = 500
    xtol: float = 1e-10
    gtol: float = 1e-12

    def __post_init__(self):
        _require_positive(self, "max_iter", "xtol", "gtol")


_SECTIONS = {
    "telegraph": TelegraphSettings,
    "capture": CaptureSettings,
    "init_eff": InitEffSettings,
    "enhance": EnhanceSettings,
    "ple": PLESettings,
    "cpt": CPTSettings,
    "readout": ReadoutSettings,
    "fit": FitSettings,
}


@dataclass(frozen=True)
class SimulationSettings:
    telegraph: TelegraphSettings = field(default_factory=TelegraphSettings)
    capture: CaptureSettings = field(default_factory=CaptureSettings)
    init_eff: InitEffSettings = field(default_factory=InitEffSettings)
    enhance: EnhanceSettings = field(default_factory=EnhanceSettings)
    ple: PLESettings = field(default_factory=PLESettings)
    cpt: CPTSettings = field(default_factory=CPTSettings)
    readout: ReadoutSettings = field(default_factory=ReadoutSettings)
    fit: FitSettings = field(default_factory=FitSettings)


@dataclass(frozen=True)
class Config:
    """Validated result of :func:`load_config`."""

    emitter: EmitterParams
    charge: ChargeParams
    simulation: SimulationSettings
    provenance: Mapping[str, str]

    def __iter__(self):
        # allows ``emitter, charge, sim = load_config(path)``
        return iter((self.emitter, self.charge, self.simulation))


def _build(cls, data, section, provenance):
    if not isinstance(data, Mapping):
        raise ConfigError(f"section must be an object, got {type(data).__name__}", key=section)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError("unknown key", key=f"{section}.{unknown[0]}")
    kwargs = {}
    for name, f in known.items():
        if name in data:
            value = data[name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[name] = value
            provenance[f"{section}.{name}"] = "config"
        else:
            provenance[f"{section}.{name}"] = "default"
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError(str(exc), key=section) from None


def parse_config(text: str) -> Config:
    """Parse a JSON configuration document (see module docstring)."""
    if text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno) from None
    else:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", line=1)
    unknown = sorted(set(data) - {"emitter", "charge", "simulation"})
    if unknown:
        raise ConfigError("unknown top-level section", key=unknown[0])
    provenance = {}
    emitter = _build(EmitterParams, data.get("emitter", {}), "emitter", provenance)
    charge = _build(ChargeParams, data.get("charge", {}), "charge", provenance)
    sim_data = data.get("simulation", {})
    if not isinstance(sim_data, dict):
        raise ConfigError("section must be an object", key="simulation")
    unknown = sorted(set(sim_data) - set(_SECTIONS))
    if unknown:
        raise ConfigError("unknown key", key=f"simulation.{unknown[0]}")
    sections = {name: _build(cls, sim_data.get(name, {}), f"simulation.{name}", provenance)
                for name, cls in _SECTIONS.items()}
    return Config(emitter, charge, SimulationSettings(**sections), provenance)


def load_config(path) -> Config:
    """Load and validate a configuration file.

    Returns a :class:`Config`, which also unpacks as
    ``(emitter, charge, simulation)``.  ``Config.provenance`` maps every
    dotted field name to ``"config"`` or ``"default"``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", key=str(path)) from None
    return parse_config(text)


def config_to_dict(cfg) -> dict:
    def plain(obj):
        out = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    return {
        "emitter": plain(cfg.emitter),
        "charge": plain(cfg.charge),
        "simulation": {name: plain(getattr(cfg.simulation, name)) for name in _SECTIONS},
    }


def dump_config(cfg) -> str:
    """Serialise a :class:`Config` to JSON text that :func:`parse_config` reads back."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
