"""PLE scan series with power broadening, shot noise and spectral diffusion.

The line centre follows an Ornstein-Uhlenbeck walk plus a slow sinusoid and
is frozen within each scan.  Every scan also carries an independent
wavemeter offset, so recorded spectra are shifted by the reading error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._util import pmap, rng_for
from .errors import FitError, StatisticsError, ValidationError
from .fit import FitResult, fit_lorentzian
from .model import EmitterParams, power_broadened_width, signal_rate

__all__ = [
    "DiffusionProcess", "PLEScan", "ScanSeries", "lorentzian", "simulate_scan",
    "centre_trajectory", "simulate_series", "series_stats", "periodogram_period",
    "scan_grid",
]


@dataclass(frozen=True)
class DiffusionProcess:
    """Line-centre wander: OU jitter plus a sinusoidal drift.

    Parameters
    ----------
    sigma_jitter : float
        Stationary standard deviation of the OU component, Hz.
    tau_corr : float
        OU correlation time, s.  Zero means white (uncorrelated) jitter.
    drift_amplitude, drift_period : float
        Amplitude (Hz) and period (s) of the sinusoid.
    wavemeter_sigma : float
        Per-scan frequency-reading error, Hz.
    """

    sigma_jitter: float = 0.0
    tau_corr: float = 0.0
    drift_amplitude: float = 0.0
    drift_period: float = 0.0
    wavemeter_sigma: float = 2e6

    def __post_init__(self):
        for name in ("sigma_jitter", "tau_corr", "drift_amplitude", "drift_period",
                     "wavemeter_sigma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(name, "must be finite and >= 0")
        if self.drift_amplitude > 0 and self.drift_period == 0:
            raise ValidationError("drift_period", "must be > 0 when drift_amplitude > 0")

    @classmethod
    def from_settings(cls, s) -> "DiffusionProcess":
        return cls(s.sigma_jitter, s.tau_corr, s.drift_amplitude, s.drift_period,
                   s.wavemeter_sigma)


@dataclass
class PLEScan:
    """One scan across the resonance.

    ``fitted_center``/``fitted_fwhm`` are NaN and ``fit_error`` holds the
    message when the Lorentzian fit failed.
    """

    detunings: np.ndarray
    counts: np.ndarray
    scan_start: float
    fitted_center: float
    fitted_fwhm: float
    center_err: float = np.nan
    fwhm_err: float = np.nan
    true_center: float = np.nan
    wavemeter_offset: float = 0.0
    fit_error: str | None = None

    def __post_init__(self):
        self.detunings = np.asarray(self.detunings, dtype=float)
        self.counts = np.asarray(self.counts)
        if np.any(self.counts < 0):
            raise ValidationError("counts", "must be >= 0")
        if np.any(np.diff(self.detunings) <= 0):
            raise ValidationError("detunings", "grid must be strictly increasing")

    @property
    def ok(self) -> bool:
        return self.fit_error is None


@dataclass
class ScanSeries:
    scans: list
    summed_spectrum: tuple
    center_std: float
    summed_fwhm: float
    summed_fwhm_err: float = np.nan
    true_centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    summed_fit: FitResult | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.scan_start for s in self.scans])

    @property
    def fitted_centers(self) -> np.ndarray:
        return np.array([s.fitted_center for s in self.scans])

    @property
    def waterfall(self) -> np.ndarray:
        """Counts matrix, one row per scan."""
        return np.vstack([s.counts for s in self.scans])


def lorentzian(f, f0, fwhm):
    """Unit-peak Lorentzian ``(fwhm/2)**2 / ((f - f0)**2 + (fwhm/2)**2)``."""
    if not np.all(np.asarray(fwhm) > 0):
        raise ValidationError("fwhm", "must be > 0")
    hw2 = (0.5 * np.asarray(fwhm, dtype=float)) ** 2
    return hw2 / ((np.asarray(f, dtype=float) - f0) ** 2 + hw2)


def scan_grid(span, points, center=0.0):
    return center + np.linspace(-0.5 * span, 0.5 * span, int(points))


def simulate_scan(emitter: EmitterParams, power, grid, dwell, center, seed=0, *,
                  wavemeter_sigma=0.0, extra_width=0.0, scan_start=0.0, index=0,
                  rng=None) -> PLEScan:
    """Sample one PLE scan and fit a Lorentzian to it.

    The expected counts in each bin are
    ``dwell * (signal_rate(power) * L(f - offset; center, width) + dark_rate)``
    where ``width`` is the power-broadened linewidth plus ``extra_width`` and
    ``offset ~ N(0, wavemeter_sigma)`` is the reading error of this scan.
    A failed fit is recorded on the scan instead of raised.
    """
    if not dwell > 0:
        raise ValidationError("dwell", "must be > 0")
    grid = np.asarray(grid, dtype=float)
    if rng is None:
        rng = rng_for(seed, "ple_scan", index)
    offset = float(rng.normal(0.0, wavemeter_sigma)) if wavemeter_sigma > 0 else 0.0
    width = float(power_broadened_width(emitter, power)) + extra_width
    peak = float(signal_rate(emitter, power))
    mean = dwell * (peak * lorentzian(grid, center + offset, width) + emitter.dark_rate)
    counts = rng.poisson(mean)
    scan = PLEScan(grid, counts, scan_start, np.nan, np.nan, true_center=center,
                   wavemeter_offset=offset)
    try:
        res = fit_lorentzian(grid, counts, poisson=True)
        inside = grid[0] <= res.params[1] <= grid[-1]
        if not (res.converged and inside and np.all(np.isfinite(res.param_errors))):
            raise FitError(res.message if not res.converged else "line centre off the grid")
        scan.fitted_center, scan.fitted_fwhm = float(res.params[1]), float(res.params[2])
        scan.center_err, scan.fwhm_err = float(res.param_errors[1]), float(res.param_errors[2])
    except FitError as exc:
        scan.fit_error = str(exc) or type(exc).__name__
    return scan


def centre_trajectory(diffusion: DiffusionProcess, times, seed=0, rng=None):
    """OU jitter (exact discretisation) plus the sinusoidal drift, Hz."""
    times = np.asarray(times, dtype=float)
    if rng is None:
        rng = rng_for(seed, "ple_trajectory")
    n = times.size
    ou = np.zeros(n)
    sig = diffusion.sigma_jitter
    if sig > 0 and n:
        z = rng.standard_normal(n)
        ou[0] = sig * z[0]
        for k in range(1, n):
            a = np.exp(-(times[k] - times[k - 1]) / diffusion.tau_corr) if diffusion.tau_corr > 0 else 0.0
            ou[k] = a * ou[k - 1] + sig * np.sqrt(1.0 - a * a) * z[k]
    drift = 0.0
    if diffusion.drift_amplitude > 0:
        drift = diffusion.drift_amplitude * np.sin(2 * np.pi * times / diffusion.drift_period)
    return ou + drift


def simulate_series(emitter: EmitterParams, diffusion: DiffusionProcess, n_scans, scan_period,
                    power, grid, dwell, seed=0, *, extra_width=0.0, center0=0.0,
                    threads=None) -> ScanSeries:
    """Simulate ``n_scans`` scans taken every ``scan_period`` seconds.

    The centre trajectory is drawn first, then scans are sampled with
    independent per-scan streams (safe to run on several threads).
    """
    if n_scans < 2:
        raise ValidationError("n_scans", "must be >= 2")
    grid = np.asarray(grid, dtype=float)
    times = np.arange(n_scans) * float(scan_period)
    centres = center0 + centre_trajectory(diffusion, times, seed)

    def one(k):
        return simulate_scan(emitter, power, grid, dwell, centres[k], seed,
                             wavemeter_sigma=diffusion.wavemeter_sigma,
                             extra_width=extra_width, scan_start=times[k], index=k)

    scans = pmap(one, range(n_scans), threads)
    series = ScanSeries(scans, (grid, np.sum([s.counts for s in scans], axis=0)),
                        np.nan, np.nan, true_centers=centres)
    _fill_stats(series)
    return series


def _fill_stats(series: ScanSeries):
    good = np.array([s.fitted_center for s in series.scans if s.ok])
    series.center_std = float(np.std(good, ddof=1)) if good.size >= 2 else np.nan
    grid, summed = series.summed_spectrum
    try:
        res = fit_lorentzian(grid, summed, poisson=True)
        series.summed_fit = res
        series.summed_fwhm = float(res.params[2])
        series.summed_fwhm_err = float(res.param_errors[2])
    except FitError:
        series.summed_fwhm = np.nan


def periodogram_period(times, values, n_freq=None):
    """Period of the periodogram peak on the natural frequency grid.

    Frequencies are ``k / T`` for ``k = 1 .. N/2`` with ``T = N * dt`` for
    uniform sampling, so the resolution is one grid bin.  Uses the
    Lomb-Scargle estimate so that gaps left by failed scans are tolerated.
    """
    from scipy.signal import lombscargle

    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size < 4:
        return np.nan
    dt = float(np.median(np.diff(times)))
    total = dt * (np.ptp(times) / dt + 1)
    n_freq = n_freq or max(1, int(round(total / dt)) // 2)
    freqs = np.arange(1, n_freq + 1) / total
    power = lombscargle(times, values - values.mean(), 2 * np.pi * freqs)
    return float(1.0 / freqs[int(np.argmax(power))])


def series_stats(series: ScanSeries):
    """Return ``(center_std, summed_fwhm, drift_period_estimate)``.

    Failed scan fits are excluded.  Raises :class:`StatisticsError` when
    fewer than two scans were fitted.
    """
    good = [s for s in series.scans if s.ok]
    if len(good) < 2:
        raise StatisticsError(f"only {len(good)} of {len(series.scans)} scans were fitted")
    if not np.isfinite(series.center_std):
        _fill_stats(series)
    t = np.array([s.scan_start for s in good])
    c = np.array([s.fitted_center for s in good])
    return series.center_std, series.summed_fwhm, periodogram_period(t, c)
