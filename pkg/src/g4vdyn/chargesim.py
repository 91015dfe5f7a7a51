"""
Bright (SnV-) / dark (SnV2-) charge-cycle simulation.

The cycle is reduced to two effective hazards: electron capture while the
centre is bright and resonantly driven (``k_capture * P_res``) and hole
recombination while it is dark and a repump laser is on
(``k_init * P_blue``, scaled by the divacancy ionisation probability for
the tunable supercontinuum).  Every repump pulse succeeds as a whole with
probability ``eta_max``; a failed pulse leaves the centre dark for that
pulse.  The dark state emits nothing.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import fit as _fit
from ._util import pmap, rng_for
from .errors import InsufficientStatisticsError, ValidationError
from .model import (REPUMP_ROLES, RESONANT_ROLES, ChargeParams, EmitterParams,
                    LaserPulse, PulseSequence, signal_rate)

__all__ = [
    "ChargeState", "TelegraphTrace", "CaptureHistogram", "InitEfficiency",
    "EnhancementSpectrum", "capture_rate", "init_rate", "repump_probability",
    "simulate_telegraph", "run_capture_experiment", "run_init_efficiency",
    "enhancement_spectrum", "capture_sequence", "freedman_diaconis_edges",
    "BLUE_445_EV",
]

BLUE_445_EV = 1239.84198 / 445.0


class ChargeState(enum.Enum):
    BRIGHT = "bright"
    DARK = "dark"

    @property
    def is_bright(self):
        return self is ChargeState.BRIGHT


def capture_rate(charge: ChargeParams, resonant_power):
    """Electron-capture rate ``k_capture * P`` in Hz for resonant power in nW."""
    if np.any(np.asarray(resonant_power) < 0):
        raise ValidationError("resonant_power", "must be non-negative")
    return charge.k_capture * resonant_power


def init_rate(charge: ChargeParams, blue_power):
    """Charge-initialisation rate ``k_init * P`` in Hz for repump power in uW."""
    if np.any(np.asarray(blue_power) < 0):
        raise ValidationError("blue_power", "must be non-negative")
    return charge.k_init * blue_power


def repump_probability(charge: ChargeParams, photon_energy, shape=None):
    """Divacancy ionisation probability versus photon energy (eV).

    Zero below ``repump_threshold``, one above ``repump_unity``, and a
    linear (default) or rescaled logistic ramp in between.
    """
    e = np.asarray(photon_energy, dtype=float)
    if np.any(e <= 0):
        raise ValidationError("photon_energy", "must be positive")
    shape = shape or charge.repump_shape
    lo, hi = charge.repump_threshold, charge.repump_unity
    x = np.clip((e - lo) / (hi - lo), 0.0, 1.0)
    if shape == "logistic":
        k = 8.0

        def sig(u):
            return 1.0 / (1.0 + np.exp(-k * (u - 0.5)))

        x = np.clip((sig(x) - sig(0.0)) / (sig(1.0) - sig(0.0)), 0.0, 1.0)
    elif shape != "linear":
        raise ValidationError("shape", f"unknown ramp shape {shape!r}")
    return float(x) if x.ndim == 0 else x


# ---------------------------------------------------------------------------
# Telegraph engine

@dataclass(frozen=True)
class _Segment:
    start: float
    end: float
    resonant_power: float
    repump: tuple           # ((pulse index, hazard Hz), ...)
    blue_power: float       # uW, for the optional blue-induced capture


def _repump_hazard(charge, pulse):
    power_uw = pulse.power * 1e-3
    if pulse.role == "supercontinuum":
        return init_rate(charge, power_uw) * repump_probability(charge, pulse.photon_energy)
    return init_rate(charge, power_uw)


def _segments(charge, seq: PulseSequence):
    edges = {0.0, float(seq.period)}
    for p in seq.pulses:
        edges.update((p.start, p.end))
    edges = sorted(e for e in edges if 0.0 <= e <= seq.period)
    segs = []
    for a, b in zip(edges, edges[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        active = [(i, p) for i, p in enumerate(seq.pulses) if p.start <= mid < p.end]
        res = sum(p.power for _, p in active if p.role in RESONANT_ROLES)
        rep = tuple((i, _repump_hazard(charge, p)) for i, p in active if p.role in REPUMP_ROLES)
        blue = sum(p.power * 1e-3 for _, p in active if p.role in REPUMP_ROLES)
        segs.append(_Segment(a, b, res, rep, blue))
    return segs


def _run_period(state, segments, n_pulses, eta_max, charge, rng):
    """One period of the two-state Markov chain. Returns (events, final state)."""
    success = rng.random(n_pulses) < eta_max
    events = []
    for seg in segments:
        t = seg.start
        while True:
            if state is ChargeState.BRIGHT:
                hazard = charge.k_capture * seg.resonant_power + charge.blue_capture * seg.blue_power
            else:
                hazard = sum(h for i, h in seg.repump if success[i])
            if hazard <= 0:
                break
            t += rng.exponential(1.0 / hazard)
            if t >= seg.end:
                break
            state = ChargeState.DARK if state.is_bright else ChargeState.BRIGHT
            events.append((t, state))
    return events, state


def _emission_intervals(state0, events, segments, emitter, offset=0.0):
    """Piecewise-constant count rate: list of (start, end, rate) in absolute time."""
    out = []
    state = state0
    k = 0
    for seg in segments:
        sig = signal_rate(emitter, seg.resonant_power)
        t = seg.start
        while k < len(events) and events[k][0] < seg.end:
            te = events[k][0]
            out.append((offset + t, offset + te, emitter.dark_rate + (sig if state.is_bright else 0.0)))
            state = events[k][1]
            t = te
            k += 1
        out.append((offset + t, offset + seg.end, emitter.dark_rate + (sig if state.is_bright else 0.0)))
    return out


def _integrate(intervals, edges):
    """Integral of the piecewise-constant rate over consecutive ``edges``."""
    starts = np.array([a for a, _, _ in intervals])
    ends = np.array([b for _, b, _ in intervals])
    rates = np.array([r for _, _, r in intervals])
    knots = np.concatenate([starts[:1], ends])
    cum = np.concatenate([[0.0], np.cumsum(rates * (ends - starts))])
    return np.diff(np.interp(edges, knots, cum))


@dataclass(frozen=True)
class TelegraphTrace:
    """Charge-state events and binned detector counts of one simulation.

    ``events`` holds ``(time, state after the transition)``;
    ``bins`` holds ``(bin start, counts)``.
    """

    initial_state: ChargeState
    events: list
    bins: list
    bin_width: float
    seed: int
    duration: float = 0.0

    @property
    def times(self):
        return np.array([b[0] for b in self.bins])

    @property
    def counts(self):
        return np.array([b[1] for b in self.bins], dtype=np.int64)

    def bright_durations(self):
        """Lengths of completed bright intervals."""
        out = []
        start = 0.0 if self.initial_state.is_bright else None
        for t, s in self.events:
            if s.is_bright:
                start = t
            elif start is not None:
                out.append(t - start)
                start = None
        return np.array(out)


def simulate_telegraph(emitter: EmitterParams, charge: ChargeParams, seq: PulseSequence,
                       bin_width, seed=0, start_state=ChargeState.BRIGHT) -> TelegraphTrace:
    """Simulate the charge cycle under a repeated pulse sequence.

    Period ``k`` draws from the stream ``(seed, "telegraph", k)``; detector
    counts per bin are Poisson with the exact integral of
    ``signal_rate(P_res) * [bright] + dark_rate`` over the bin.
    """
    if not bin_width > 0:
        raise ValidationError("bin_width", "must be positive")
    if not isinstance(seq, PulseSequence):
        raise ValidationError("seq", "expected a PulseSequence")
    start_state = ChargeState(start_state) if not isinstance(start_state, ChargeState) else start_state
    segments = _segments(charge, seq)
    events, intervals = [], []
    state = start_state
    for k in range(seq.repeat_count):
        offset = k * seq.period
        ev, end_state = _run_period(state, segments, len(seq.pulses), charge.eta_max, charge,
                                    rng_for(seed, "telegraph", k, 0))
        intervals.extend(_emission_intervals(state, ev, segments, emitter, offset))
        events.extend((offset + t, s) for t, s in ev)
        state = end_state
    total = seq.repeat_count * seq.period
    n_bins = max(1, int(math.ceil(total / bin_width - 1e-9)))
    edges = np.minimum(np.arange(n_bins + 1) * bin_width, total)
    mean = _integrate(intervals, edges)
    counts = rng_for(seed, "telegraph", 0, 1).poisson(mean)
    bins = list(zip(edges[:-1].tolist(), counts.tolist()))
    return TelegraphTrace(start_state, events, bins, float(bin_width), int(seed), float(total))


# ---------------------------------------------------------------------------
# Electron-capture experiment

def capture_sequence(resonant_power, pulse_length, blue_power=50.0, blue_duration=10e-3, gap=5e-6):
    """Repump pulse (uW) followed by a resonant probe (nW)."""
    pulses = []
    t = 0.0
    if blue_duration > 0:
        pulses.append(LaserPulse("blue_445", blue_power * 1e3, blue_duration, 0.0))
        t = blue_duration + gap
    pulses.append(LaserPulse("resonant_C", resonant_power, pulse_length, t))
    return PulseSequence(tuple(pulses))


def freedman_diaconis_edges(samples):
    samples = np.asarray(samples, dtype=float)
    q75, q25 = np.percentile(samples, [75, 25])
    h = 2.0 * (q75 - q25) / samples.size ** (1.0 / 3.0)
    top = float(samples.max())
    n = int(math.ceil(top / h)) if h > 0 else 1
    return np.linspace(0.0, top, max(n, 1) + 1)


@dataclass
class CaptureHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    fitted_rate: float
    fitted_rate_err: float
    n_reps: int
    durations: np.ndarray = field(repr=False, default=None)
    n_censored: int = 0
    n_uninitialised: int = 0
    resonant_power: float = 0.0
    fit: _fit.FitResult = field(repr=False, default=None)


def _bright_run(emitter, charge, segments, n_pulses, probe_start, probe_end, rng):
    events, _ = _run_period(ChargeState.DARK, segments, n_pulses, charge.eta_max, charge, rng)
    state = ChargeState.DARK
    for t, s in events:
        if t > probe_start:
            break
        state = s
    if not state.is_bright:
        return None
    for t, s in events:
        if t > probe_start and not s.is_bright:
            return t - probe_start
    return math.inf


def run_capture_experiment(emitter: EmitterParams, charge: ChargeParams, resonant_power,
                           n_reps=500, pulse_length=1.0, seed=0, *, blue_power=50.0,
                           blue_duration=10e-3, binning="fd", series_index=0, threads=None) -> CaptureHistogram:
    """Repeated initialise-and-probe cycles and an exponential fit of bright durations.

    Each repetition starts dark, applies the repump pulse, then the
    resonant probe.  Repetitions still bright at the end of the probe are
    censored and left out of the histogram.  Repetition ``i`` draws from
    the stream ``(seed, "capture", series_index, i)``; give each point of a
    power series its own ``series_index``.

    Raises
    ------
    InsufficientStatisticsError
        If fewer than 10 capture events were observed.
    """
    if n_reps < 50:
        raise ValidationError("n_reps", "must be >= 50")
    rate = capture_rate(charge, resonant_power)
    if rate > 0 and pulse_length < 5.0 / rate:
        warnings.warn(f"probe of {pulse_length} s is short compared with 1/rate = {1 / rate:.3g} s",
                      stacklevel=2)
    seq = capture_sequence(resonant_power, pulse_length, blue_power, blue_duration)
    segments = _segments(charge, seq)
    probe = seq.pulses[-1]

    def one(i):
        return _bright_run(emitter, charge, segments, len(seq.pulses), probe.start, probe.end,
                           rng_for(seed, "capture", series_index, i))

    runs = pmap(one, range(n_reps), threads)
    uninit = sum(r is None for r in runs)
    censored = sum(r is not None and math.isinf(r) for r in runs)
    durations = np.array([r for r in runs if r is not None and not math.isinf(r)])
    if durations.size < 10:
        raise InsufficientStatisticsError(f"only {durations.size} capture events in {n_reps} repetitions")
    if isinstance(binning, str):
        if binning != "fd":
            raise ValidationError("binning", f"unknown rule {binning!r}")
        edges = freedman_diaconis_edges(durations)
    elif np.ndim(binning) == 0:
        edges = np.linspace(0.0, durations.max(), int(binning) + 1)
    else:
        edges = np.asarray(binning, dtype=float)
    counts, _ = np.histogram(durations, bins=edges)
    res = _fit.fit_exponential_decay(edges, counts)
    r, err = res["rate"]
    return CaptureHistogram(edges, counts, r, err, n_reps, durations, censored, uninit,
                            float(resonant_power), res)


# ---------------------------------------------------------------------------
# Initialisation efficiency

@dataclass
class InitEfficiency:
    points: list                 # (pulse length, efficiency, binomial error)
    n_reps: int
    fit: _fit.FitResult | None = field(repr=False, default=None)

    @property
    def eta_max(self):
        return self.fit["eta_max"] if self.fit is not None else None

    @property
    def tau(self):
        return self.fit["tau"] if self.fit is not None else None

    def __iter__(self):
        return iter(self.points)


def _probe_counts(emitter, charge, blue_power, t_blue, probe, gap, window, rng):
    pulses = []
    t = 0.0
    if t_blue > 0:
        pulses.append(LaserPulse("blue_445", blue_power * 1e3, t_blue, 0.0))
        t = t_blue + gap
    pr = LaserPulse(probe.role, probe.power, probe.duration, t)
    pulses.append(pr)
    seq = PulseSequence(tuple(pulses))
    segments = _segments(charge, seq)
    events, _ = _run_period(ChargeState.DARK, segments, len(pulses), charge.eta_max, charge, rng)
    intervals = _emission_intervals(ChargeState.DARK, events, segments, emitter)
    w = probe.duration if window is None else min(window, probe.duration)
    mean = _integrate(intervals, np.array([pr.start, pr.start + w]))[0]
    return int(rng.poisson(mean))


def run_init_efficiency(emitter: EmitterParams, charge: ChargeParams, blue_power, pulse_lengths,
                        n_reps, probe: LaserPulse, threshold_counts, seed=0, *, gap=5e-6,
                        window=None, fit=True, threads=None) -> InitEfficiency:
    """Fraction of repetitions showing a fluorescence response after a repump pulse.

    Every repetition starts dark (a pulse length of 0 applies no repump).
    A repetition counts as initialised when the detector counts within
    ``window`` seconds of the probe start (default: the whole probe)
    exceed ``threshold_counts``.  The law ``eta_max (1 - exp(-t/tau))`` is
    fitted when ``fit`` is set.
    """
    lengths = [float(t) for t in pulse_lengths]
    if any(t < 0 for t in lengths):
        raise ValidationError("pulse_lengths", "must be non-negative")
    points = []
    for j, t_blue in enumerate(lengths):
        def one(i, j=j, t_blue=t_blue):
            return _probe_counts(emitter, charge, blue_power, t_blue, probe, gap, window,
                                 rng_for(seed, "init_eff", j, i))

        counts = np.array(pmap(one, range(n_reps), threads))
        p = float(np.mean(counts > threshold_counts))
        points.append((t_blue, p, math.sqrt(p * (1 - p) / n_reps)))
    result = InitEfficiency(points, int(n_reps))
    if fit:
        t, p, _ = map(np.array, zip(*points))
        # binomial error with a floor so that 0 % and 100 % points keep finite weight
        sigma = np.sqrt(np.maximum(p * (1 - p), 1.0 / n_reps) / n_reps)
        result.fit = _fit.fit_saturating_exponential(t, p, sigma)
    return result


# ---------------------------------------------------------------------------
# Fluorescence enhancement

@dataclass
class EnhancementSpectrum:
    points: list     # (photon energy, beta, beta error)

    @property
    def energies(self):
        return np.array([p[0] for p in self.points])

    @property
    def beta(self):
        return np.array([p[1] for p in self.points])


def enhancement_spectrum(emitter: EmitterParams, charge: ChargeParams, energies,
                         repump_power_scale, resonant_power, *, residual_recovery_rate=0.0,
                         integration_time=1.0) -> EnhancementSpectrum:
    """Steady-state enhancement factor ``beta = I_with / I_without``.

    The bright fraction is ``f = r_r / (r_r + r_c)`` with
    ``r_r = repump_power_scale * repump_probability(E)`` plus the residual
    recovery rate, and ``r_c = capture_rate(P_res)``.  Intensities add the
    dark-count floor.  Errors assume Poisson counting over
    ``integration_time`` for both intensities.
    """
    if not resonant_power > 0:
        raise ValidationError("resonant_power", "must be positive")
    r_c = capture_rate(charge, resonant_power)
    sig = signal_rate(emitter, resonant_power)

    def bright_fraction(rr):
        return rr / (rr + r_c)

    f0 = bright_fraction(residual_recovery_rate)
    i_wo = f0 * sig + emitter.dark_rate
    if i_wo <= 0:
        raise ValidationError("dark_rate", "baseline intensity is zero; set dark_rate or a residual recovery rate")
    points = []
    for e in energies:
        rr = repump_power_scale * repump_probability(charge, e) + residual_recovery_rate
        i_w = bright_fraction(rr) * sig + emitter.dark_rate
        beta = i_w / i_wo
        err = beta * math.sqrt(1.0 / (i_w * integration_time) + 1.0 / (i_wo * integration_time))
        points.append((float(e), float(beta), float(err)))
    return EnhancementSpectrum(points)
