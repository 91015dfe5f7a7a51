"""Charge-cycle, spectral-diffusion, CPT and spin-readout simulations for
tin-vacancy colour centres in diamond, with the fitters that analyse them.

Submodules
----------
model      parameter types, unit conventions, JSON configuration
chargesim  bright/dark charge telegraph, capture and initialisation runs
lindblad   three-level Lambda-system master equation and CPT spectra
spectra    PLE scan series with spectral diffusion
readout    single-shot spin readout Monte Carlo and fidelity analysis
fit        Levenberg-Marquardt engine and model fitters
cli        command-line front end (``g4vdyn``)
"""
from .errors import (ConfigError, DegeneracyError, FitError, G4VError,
                     InsufficientStatisticsError, RankDeficiencyError, SimulationError,
                     StatisticsError, StiffnessError, ValidationError)
from .model import (ChargeParams, Config, EmitterParams, LaserPulse, PulseSequence,
                    load_config, parse_config)

__version__ = "0.1.0"

__all__ = [
    "ChargeParams", "Config", "EmitterParams", "LaserPulse", "PulseSequence",
    "load_config", "parse_config", "ConfigError", "DegeneracyError", "FitError",
    "G4VError", "InsufficientStatisticsError", "RankDeficiencyError", "SimulationError",
    "StatisticsError", "StiffnessError", "ValidationError", "__version__",
]
