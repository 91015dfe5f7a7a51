"""PLE scans of a wandering line and the width of their sum.

The summed spectrum is wider than any single scan because the line centre
moves between scans.
"""
import numpy as np

from g4vdyn import spectra
from g4vdyn.model import parse_config

cfg = parse_config("")
s = cfg.simulation.ple
grid = spectra.scan_grid(s.grid_span, s.grid_points)
series = spectra.simulate_series(cfg.emitter, spectra.DiffusionProcess.from_settings(s), s.n_scans,
                                 s.scan_period, s.power, grid, s.dwell, seed=0,
                                 extra_width=s.extra_width)
std, summed, period = spectra.series_stats(series)
widths = np.array([sc.fitted_fwhm for sc in series.scans])
print(f"{len(series.scans)} scans, median single-scan FWHM {np.median(widths) / 1e6:.1f} MHz")
print(f"centre standard deviation {std / 1e6:.2f} MHz")
print(f"summed spectrum FWHM {summed / 1e6:.1f} +- {series.summed_fwhm_err / 1e6:.1f} MHz")
print(f"dominant drift period {period:.0f} s")
