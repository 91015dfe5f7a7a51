"""Single-shot spin readout by photon counting.

Sequence per shot: ``rest`` (spin relaxes towards 50/50) -> ``init_pulse``
(optical pumping into the read-addressed spin state) -> ``gap`` ->
``read_pulse``.  During a pulse the addressed state cycles, emitting
``scatter_rate / collection_eff`` photons per second, and each scattered
photon flips the spin with probability ``flip_per_photon``.  The spin that
the read laser addresses is called ``UP`` (bright).

Every shot also records a dark-pulse window of ``read_pulse`` length in
which no emitter fluorescence reaches the detector.  It provides the
reference for the dark-state error and the dark-count subtraction.
"""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from ._util import rng_for
from .errors import FitError, StatisticsError, ValidationError
from .model import EmitterParams

__all__ = [
    "Spin", "ReadoutConfig", "ShotRecord", "FidelityReport", "simulate_initialization",
    "calibrated_pump_power", "bright_count_statistics", "read_statistics", "calibrate_readout",
    "calibrated_readout_config", "simulate_shots", "analyze", "sequence_histogram",
    "READOUT_TARGETS",
]

# Targets of the two-parameter calibration: dark-subtracted mean photons per
# read pulse and P(counts < threshold) over all shots prepared bright.
READOUT_TARGETS = {"mean_photons_dark_subtracted": 1.13, "eps_B": 0.45}

_MAX_EXACT = 200_000


class Spin(enum.Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class ReadoutConfig:
    """Timing, rates and analysis threshold of the readout sequence.

    ``scatter_rate`` is the detected photon rate of the bright state and
    must be set (see :func:`calibrated_readout_config`).  ``flip_per_photon``
    defaults to ``1 / eta_branch`` of the emitter when left as None.
    ``background_rate`` adds laser-induced counts during every laser-on
    window on top of the detector dark rate.
    """

    init_pulse: float = 200e-6
    read_pulse: float = 200e-6
    gap: float = 300e-6
    rest: float = 50e-3
    n_shots: int = 11139
    scatter_rate: float | None = None
    flip_per_photon: float | None = None
    collection_eff: float = 2e-3
    init_fidelity: float = 0.989
    threshold: int = 1
    background_rate: float = 0.0
    pump_transition: str = "B2"
    read_transition: str = "A1"

    def __post_init__(self):
        for name in ("init_pulse", "read_pulse", "gap", "rest"):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be > 0")
        if self.n_shots < 1:
            raise ValidationError("n_shots", "must be >= 1")
        if self.scatter_rate is not None and not self.scatter_rate >= 0:
            raise ValidationError("scatter_rate", "must be >= 0")
        for name in ("flip_per_photon", "init_fidelity"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValidationError(name, "must lie in [0, 1]")
        if not 0.0 < self.collection_eff <= 1.0:
            raise ValidationError("collection_eff", "must lie in (0, 1]")
        if self.threshold < 0 or int(self.threshold) != self.threshold:
            raise ValidationError("threshold", "must be a non-negative integer")
        if not self.background_rate >= 0:
            raise ValidationError("background_rate", "must be >= 0")

    @property
    def period(self) -> float:
        return self.rest + self.init_pulse + self.gap + self.read_pulse

    def flip(self, emitter: EmitterParams) -> float:
        return 1.0 / emitter.eta_branch if self.flip_per_photon is None else self.flip_per_photon

    def emitted_rate(self) -> float:
        return self._scatter() / self.collection_eff

    def _scatter(self) -> float:
        if self.scatter_rate is None:
            raise ValidationError("scatter_rate", "not set; use calibrated_readout_config")
        return self.scatter_rate

    def replace(self, **changes) -> "ReadoutConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ShotRecord:
    """One shot.  ``flip_time`` is measured from the start of the read pulse."""

    true_initial_spin: Spin
    detected_photons: int
    flip_time: float | None = None
    dark_photons: int = 0
    init_photons: int = 0
    initial_spin_before_pump: Spin = Spin.DOWN
    init_emission: float = 0.0   # time the pumped state kept cycling during init

    @property
    def bright(self) -> bool:
        return self.true_initial_spin is Spin.UP


@dataclass
class FidelityReport:
    hist_bright: dict
    hist_dark: dict
    eps_B: float
    eps_D: float
    fidelity: float
    mean_photons_raw: float
    mean_photons_dark_subtracted: float
    dark_pulse_mean: float = np.nan
    n_bright: int = 0
    n_dark: int = 0

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hist_bright"] = {str(k): v for k, v in sorted(self.hist_bright.items())}
        out["hist_dark"] = {str(k): v for k, v in sorted(self.hist_dark.items())}
        return out


# ---------------------------------------------------------------------------
# Optical pumping

def _pump_rate(emitter: EmitterParams, pump_power):
    s = pump_power / emitter.p_sat
    rho_ee = s / (2.0 * (1.0 + s))
    return 2 * np.pi * emitter.gamma0 * rho_ee / (1.0 + emitter.eta_branch)


def simulate_initialization(emitter: EmitterParams, pump_duration, pump_power=None, *,
                            t1=None, start=0.5):
    """Probability of ending in the target spin state after optical pumping.

    Rate model for the pumped-state population ``p``::

        dp/dt = -R_pump p - (p - 1/2) / T1

    with ``R_pump = 2 pi gamma0 rho_ee(P) / (1 + eta_branch)``.  ``start``
    is the initial target population (thermal 1/2).  ``pump_power`` (nW)
    defaults to the value returned by :func:`calibrated_pump_power`.
    """
    if not pump_duration >= 0:
        raise ValidationError("pump_duration", "must be >= 0")
    if pump_power is None:
        pump_power = calibrated_pump_power(emitter)
    t1 = emitter.t1_spin if t1 is None else t1
    g1 = 0.0 if not np.isfinite(t1) else 1.0 / t1
    rate = _pump_rate(emitter, pump_power) + g1
    p0 = 1.0 - start
    p_inf = 0.5 * g1 / rate if rate > 0 else p0
    p = p_inf + (p0 - p_inf) * np.exp(-rate * pump_duration)
    return float(1.0 - p)


def calibrated_pump_power(emitter: EmitterParams, duration=200e-6, target=0.989):
    """Pump power (nW) that reaches ``target`` after ``duration``."""
    f = lambda logp: simulate_initialization(emitter, duration, np.exp(logp)) - target
    lo, hi = np.log(1e-8 * emitter.p_sat), np.log(1e6 * emitter.p_sat)
    if f(hi) < 0:
        raise ValidationError("target", "not reachable within one pump pulse")
    return float(np.exp(optimize.brentq(f, lo, hi, xtol=1e-12)))


# ---------------------------------------------------------------------------
# Bright-state count statistics

def bright_count_statistics(scatter_rate, flip_per_photon, cfg: ReadoutConfig,
                            emitter: EmitterParams):
    """Exact ``(mean, P(counts < threshold))`` of a bright read pulse.

    The flip happens on scattered photon ``k ~ Geometric(flip)`` so the
    cycling lasts ``min(read_pulse, k / emitted_rate)``.  Detector dark and
    background counts are included.
    """
    T = cfg.read_pulse
    ext = (emitter.dark_rate + cfg.background_rate) * T
    emitted = scatter_rate / cfg.collection_eff
    n_cycle = int(min(np.floor(emitted * T), _MAX_EXACT + 1))
    f = flip_per_photon
    if f == 0 or n_cycle == 0:
        mu = np.array([scatter_rate * T])
        w = np.array([1.0])
    elif f >= 1.0:
        mu = np.array([scatter_rate / emitted])
        w = np.array([1.0])
    elif n_cycle <= _MAX_EXACT:
        k = np.arange(1, n_cycle + 1)
        w = np.empty(n_cycle + 1)
        w[:-1] = f * (1.0 - f) ** (k - 1)
        w[-1] = (1.0 - f) ** n_cycle
        mu = np.append(scatter_rate * k / emitted, scatter_rate * T)
    else:
        # photons too dense to enumerate: exponential flip time on a fine grid
        rate = -np.log1p(-f) * emitted
        x, wq = np.polynomial.legendre.leggauss(400)
        t = 0.5 * T * (x + 1.0)
        w = np.append(0.5 * T * wq * rate * np.exp(-rate * t), np.exp(-rate * T))
        mu = np.append(scatter_rate * t, scatter_rate * T)
    mean = float(np.dot(w, mu) + ext)
    p_below = float(np.dot(w, stats.poisson.cdf(cfg.threshold - 1, mu + ext)))
    return mean, p_below


def read_statistics(scatter_rate, flip_per_photon, cfg: ReadoutConfig, emitter: EmitterParams):
    """Expected ``(mean_raw, mean_dark_subtracted, eps_B)`` over prepared shots.

    A fraction ``1 - init_fidelity`` of the shots starts in the dark spin
    state and only registers dark and background counts.
    """
    F = cfg.init_fidelity
    ext = (emitter.dark_rate + cfg.background_rate) * cfg.read_pulse
    mean_b, below_b = bright_count_statistics(scatter_rate, flip_per_photon, cfg, emitter)
    mean = F * mean_b + (1.0 - F) * ext
    below = F * below_b + (1.0 - F) * float(stats.poisson.cdf(cfg.threshold - 1, ext))
    return mean, mean - ext, below


def calibrate_readout(emitter: EmitterParams, cfg: ReadoutConfig | None = None,
                      mean_photons=READOUT_TARGETS["mean_photons_dark_subtracted"],
                      eps_b=READOUT_TARGETS["eps_B"]):
    """Solve for ``(scatter_rate, flip_per_photon)`` matching the targets.

    ``mean_photons`` is the dark-subtracted mean and ``eps_b`` the
    below-threshold probability, both over all shots prepared bright (see
    :func:`read_statistics`).  The search is deterministic and nested: at a
    fixed flip rate per unit time the mean fixes the scatter rate, and the
    below-threshold probability then grows with the flip rate.

    For an exponentially distributed cycling time the below-threshold
    probability cannot exceed about ``1 / (1 + mean)``; larger targets raise
    :class:`FitError`.
    """
    cfg = cfg or ReadoutConfig()
    T = cfg.read_pulse
    if not mean_photons > 0:
        raise ValidationError("mean_photons", "must be > 0")

    def flip_of(sc, g):
        return min(g * cfg.collection_eff / sc, 1.0)

    def stats_at(sc, g):
        return read_statistics(sc, flip_of(sc, g), cfg, emitter)

    def scatter_for(g):
        h = lambda ls: stats_at(np.exp(ls), g)[1] - mean_photons
        lo = np.log(mean_photons / T / cfg.init_fidelity)
        hi = lo + 1.0
        while h(hi) < 0:
            hi += 1.0
            if hi > lo + 40:
                raise FitError("mean photon number not reachable")
        return np.exp(optimize.brentq(h, lo, hi, xtol=1e-14, rtol=1e-13))

    def below(lg):
        g = np.exp(lg)
        return stats_at(scatter_for(g), g)[2] - eps_b

    lo = np.log(1e-3 / T)
    if below(lo) > 0:
        raise FitError("eps_B target is below the no-flip Poisson limit")
    hi = lo + 1.0
    while below(hi) < 0:
        lo, hi = hi, hi + 1.0
        if hi > np.log(1e-3 / T) + 25:
            raise FitError(f"eps_B = {eps_b} is not reachable at mean {mean_photons}")
    g = np.exp(optimize.brentq(below, lo, hi, xtol=1e-13, rtol=1e-13))
    sc = scatter_for(g)
    return float(sc), float(flip_of(sc, g))


def calibrated_readout_config(emitter: EmitterParams, **overrides) -> ReadoutConfig:
    """A :class:`ReadoutConfig` whose unset rates come from the calibration."""
    cfg = ReadoutConfig(**overrides)
    if cfg.scatter_rate is None or cfg.flip_per_photon is None:
        s, f = calibrate_readout(emitter, cfg)
        cfg = cfg.replace(scatter_rate=cfg.scatter_rate if cfg.scatter_rate is not None else s,
                          flip_per_photon=cfg.flip_per_photon if cfg.flip_per_photon is not None else f)
    return cfg


# ---------------------------------------------------------------------------
# Monte Carlo

def _end_of_read_pumped(cfg, emitter):
    """Probability that a shot ends in the pumped (non-addressed) state."""
    f = cfg.flip(emitter)
    n_cycle = np.floor(cfg.emitted_rate() * cfg.read_pulse)
    survive = (1.0 - f) ** n_cycle
    return cfg.init_fidelity * (1.0 - survive) + (1.0 - cfg.init_fidelity)


def _cycle_time(rng, f, emitted, T):
    """Duration the addressed state cycles before flipping, capped at ``T``."""
    if f <= 0 or emitted <= 0:
        return T, None
    k = rng.geometric(f)
    t = k / emitted
    return (t, t) if t <= T else (T, None)


def simulate_shots(emitter: EmitterParams, cfg: ReadoutConfig, seed=0) -> list:
    """Simulate ``cfg.n_shots`` readout shots, each from its own seed stream.

    Before the pump pulse the pumped-state population has relaxed over
    ``rest`` from its end-of-read value towards 1/2.  The pump leaves the
    spin in ``UP`` with probability ``init_fidelity``.
    """
    s = cfg._scatter()
    f = cfg.flip(emitter)
    emitted = cfg.emitted_rate()
    ext = emitter.dark_rate + cfg.background_rate
    q = _end_of_read_pumped(cfg, emitter)
    memory = np.exp(-cfg.rest / emitter.t1_spin) if emitter.t1_spin > 0 else 0.0
    p_pumped = 0.5 + (q - 0.5) * memory
    T_i, T_r = cfg.init_pulse, cfg.read_pulse
    records = []
    for i in range(cfg.n_shots):
        rng = rng_for(seed, "readout", i)
        before = Spin.DOWN if rng.random() < p_pumped else Spin.UP
        init_emission = _cycle_time(rng, f, emitted, T_i)[0] if before is Spin.DOWN else 0.0
        init_photons = int(rng.poisson(s * init_emission + ext * T_i))
        spin = Spin.UP if rng.random() < cfg.init_fidelity else Spin.DOWN
        flip_time = None
        bright_time = 0.0
        if spin is Spin.UP:
            bright_time, flip_time = _cycle_time(rng, f, emitted, T_r)
        photons = int(rng.poisson(s * bright_time + ext * T_r))
        dark = int(rng.poisson(ext * T_r))
        records.append(ShotRecord(spin, photons, flip_time, dark, init_photons, before,
                                  init_emission))
    return records


def _hist(values):
    vals, counts = np.unique(np.asarray(values, dtype=int), return_counts=True)
    return {int(v): int(c) for v, c in zip(vals, counts)}


def analyze(records, cfg: ReadoutConfig) -> FidelityReport:
    """Threshold analysis of a list of :class:`ShotRecord`.

    Every read pulse follows a bright preparation, so the bright histogram
    holds all read pulses (mis-initialised shots included, as in a real
    measurement) and the dark histogram holds all dark pulses.

    ``eps_B = P(counts < threshold | bright)``.  ``eps_D`` is the
    probability that a dark pulse crosses the threshold plus the residual
    population ``(1 - init_fidelity)`` times the bright detection
    probability, capped at one.  The dark-subtracted mean removes the
    dark-pulse mean.
    """
    if len(records) < 100:
        raise StatisticsError(f"need at least 100 shots, got {len(records)}")
    bright = np.array([r.detected_photons for r in records])
    dark = np.array([r.dark_photons for r in records])
    thr = cfg.threshold
    eps_b = float(np.mean(bright < thr))
    p_dark = float(np.mean(dark >= thr))
    eps_d = min(1.0, p_dark + (1.0 - cfg.init_fidelity) * (1.0 - eps_b))
    fidelity = 1.0 - (eps_b + eps_d) / 2.0
    mean_raw = float(bright.mean())
    dark_mean = float(dark.mean())
    return FidelityReport(_hist(bright), _hist(dark), eps_b, eps_d, fidelity, mean_raw,
                          mean_raw - dark_mean, dark_mean, int(bright.size), int(dark.size))


def sequence_histogram(records, cfg: ReadoutConfig, bin_width, emitter: EmitterParams,
                       *, include_rest=False):
    """Mean detected counts per time bin over one sequence.

    Time zero is the start of the pump pulse; the window covers pump, gap and
    read pulse (and the rest period with ``include_rest``).  Each bin holds
    the expected counts given the recorded cycling times of every shot.

    Returns ``(bin_edges, mean_counts)``.
    """
    T_i, gap, T_r = cfg.init_pulse, cfg.gap, cfg.read_pulse
    total = T_i + gap + T_r + (cfg.rest if include_rest else 0.0)
    n_bins = int(np.ceil(total / bin_width - 1e-9))
    if min(T_i, T_r) / bin_width < 10:
        raise ValidationError("bin_width", "need at least 10 bins per pulse")
    edges = np.arange(n_bins + 1) * bin_width
    s = cfg._scatter()
    read0 = T_i + gap
    init_len = np.array([r.init_emission for r in records])
    read_len = np.array([0.0 if not r.bright else (r.flip_time if r.flip_time is not None else T_r)
                         for r in records])
    lo, hi = edges[:-1], edges[1:]

    def overlap(a, b):
        acc = np.zeros(n_bins)
        for j in range(0, a.size, 2048):
            aa, bb = a[j:j + 2048, None], b[j:j + 2048, None]
            acc += np.clip(np.minimum(hi, bb) - np.maximum(lo, aa), 0.0, None).sum(axis=0)
        return acc / max(a.size, 1)

    zeros = np.zeros(len(records))
    mean = s * overlap(zeros, init_len) + s * overlap(zeros + read0, read0 + read_len)
    mean += emitter.dark_rate * (hi - lo)
    laser = (np.clip(np.minimum(hi, T_i) - lo, 0, None)
             + np.clip(np.minimum(hi, read0 + T_r) - np.maximum(lo, read0), 0, None))
    mean += cfg.background_rate * laser
    return edges, mean
