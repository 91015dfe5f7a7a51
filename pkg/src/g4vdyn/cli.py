"""Command-line front end: one subcommand per experiment.

Usage::

    g4vdyn --replay MANIFEST [--replay-out DIR]
    g4vdyn SUBCOMMAND [--config PATH] [--seed N] [--out DIR]
           [--strict] [--threads N] [--format {csv,json,both}]

Exit codes: 0 success, 2 configuration error, 3 simulation or statistics
error, 4 fit not converged under ``--strict``, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import chargesim, fit, lindblad, readout, spectra
from ._util import resolve_threads
from .errors import ConfigError, FitError, SimulationError, ValidationError
from .io import RunManifest, emit_plotdata, read_manifest, write_csv, write_json, write_manifest
from .model import LaserPulse, PulseSequence, config_to_dict, load_config, parse_config

__all__ = ["main", "run", "replay", "SUBCOMMANDS", "EXIT_OK", "EXIT_CONFIG", "EXIT_SIM",
           "EXIT_NOT_CONVERGED", "EXIT_USAGE"]

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_NOT_CONVERGED, EXIT_USAGE = 0, 2, 3, 4, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


class _Run:
    """Collects the tables, summary and plots produced by one subcommand."""

    def __init__(self):
        self.tables = []      # (file name, header, rows)
        self.plots = []       # (result, kind, stem)
        self.summary = {}
        self.fits = []        # FitResult objects checked under --strict

    def table(self, name, header, rows):
        self.tables.append((name, header, list(rows)))

    def plot(self, result, kind, stem=None):
        self.plots.append((result, kind, stem))


# ---------------------------------------------------------------------------
# Subcommands

def _telegraph(cfg, args, out: _Run):
    s = cfg.simulation.telegraph
    pulses = []
    t = 0.0
    if s.blue_duration > 0 and s.blue_power > 0:
        pulses.append(LaserPulse("blue_445", s.blue_power * 1e3, s.blue_duration, 0.0))
        t = s.blue_duration + s.gap
    pulses.append(LaserPulse("resonant_C", s.resonant_power, s.resonant_duration, t))
    seq = PulseSequence(tuple(pulses), repeat_count=s.repeat_count)
    trace = chargesim.simulate_telegraph(cfg.emitter, cfg.charge, seq, s.bin_width, args.seed,
                                         start_state=s.start_state)
    out.table("telegraph_trace.csv", ["t_s", "counts"], trace.bins)
    out.table("telegraph_events.csv", ["t_s", "state"],
              [(t, st.value) for t, st in trace.events])
    bright = trace.bright_durations()
    out.summary.update(duration_s=trace.duration, n_events=len(trace.events),
                       n_bright_intervals=int(bright.size),
                       mean_bright_duration_s=float(bright.mean()) if bright.size else None,
                       capture_rate_hz=chargesim.capture_rate(cfg.charge, s.resonant_power))
    out.plot({"columns": [("t_s", "s"), ("counts", "counts per bin")], "rows": trace.bins},
             "telegraph")


def _capture(cfg, args, out: _Run):
    s = cfg.simulation.capture
    hists = []
    for k, power in enumerate(s.powers):
        hists.append(chargesim.run_capture_experiment(
            cfg.emitter, cfg.charge, power, s.n_reps, s.pulse_length, args.seed,
            blue_power=s.blue_power, blue_duration=s.blue_duration, binning=s.binning,
            series_index=k, threads=args.threads))
    rows = []
    for h in hists:
        for lo, hi, c in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts):
            rows.append((h.resonant_power, lo, hi, c))
    out.table("capture_histograms.csv", ["power_nw", "bin_lo_s", "bin_hi_s", "count"], rows)
    out.table("capture_rates.csv",
              ["power_nw", "fitted_rate_hz", "fitted_rate_err_hz", "n_events", "n_censored",
               "n_uninitialised"],
              [(h.resonant_power, h.fitted_rate, h.fitted_rate_err, int(h.counts.sum()),
                h.n_censored, h.n_uninitialised) for h in hists])
    out.fits.extend(h.fit for h in hists)
    p = np.array([h.resonant_power for h in hists])
    r = np.array([h.fitted_rate for h in hists])
    e = np.array([h.fitted_rate_err for h in hists])
    ref = hists[int(np.argmin(np.abs(p - 20.7)))]
    out.summary.update(fitted_rate=ref.fitted_rate, fitted_rate_err=ref.fitted_rate_err,
                       reference_power_nw=ref.resonant_power,
                       rates=[{"power_nw": h.resonant_power, "fitted_rate": h.fitted_rate,
                               "fitted_rate_err": h.fitted_rate_err} for h in hists])
    if np.any(p > 0):
        lin = fit.fit_linear_through_origin(p, r, e)
        out.fits.append(lin)
        out.summary.update(slope_hz_per_nw=lin["slope"][0], slope_err=lin["slope"][1])
    for k, h in enumerate(hists):
        centres = 0.5 * (h.bin_edges[1:] + h.bin_edges[:-1])
        out.plot({"columns": [("t_s", "s"), ("count", "repetitions")],
                  "rows": zip(centres, h.counts)}, "capture", f"plot_capture_{k}")
    out.plot({"columns": [("power_nw", "nW"), ("rate_hz", "Hz"), ("rate_err_hz", "Hz")],
              "rows": zip(p, r, e)}, "capture-rates")


def _init_eff(cfg, args, out: _Run):
    s = cfg.simulation.init_eff
    probe = LaserPulse("resonant_C", s.probe_power, s.probe_duration)
    res = chargesim.run_init_efficiency(cfg.emitter, cfg.charge, s.blue_power, s.pulse_lengths,
                                        s.n_reps, probe, s.threshold_counts, args.seed,
                                        gap=s.gap, window=s.window, threads=args.threads)
    out.table("init_efficiency.csv", ["pulse_length_s", "efficiency", "efficiency_err"],
              res.points)
    out.fits.append(res.fit)
    out.summary.update(eta_max=res.eta_max[0], eta_max_err=res.eta_max[1],
                       tau_s=res.tau[0], tau_err_s=res.tau[1], n_reps=res.n_reps)
    out.plot({"columns": [("pulse_length_s", "s"), ("efficiency", "1"), ("efficiency_err", "1")],
              "rows": res.points}, "init-eff")


def _enhance(cfg, args, out: _Run):
    s = cfg.simulation.enhance
    res = chargesim.enhancement_spectrum(cfg.emitter, cfg.charge, s.energies,
                                         s.repump_power_scale, s.resonant_power,
                                         residual_recovery_rate=s.residual_recovery_rate,
                                         integration_time=s.integration_time)
    out.table("enhancement.csv", ["energy_ev", "beta", "beta_err"], res.points)
    out.summary.update(beta_max=float(res.beta.max()),
                       onset_ev=cfg.charge.repump_threshold)
    out.plot({"columns": [("energy_ev", "eV"), ("beta", "1"), ("beta_err", "1")],
              "rows": res.points}, "enhance")


def _ple_series(cfg, args, out: _Run):
    s = cfg.simulation.ple
    grid = spectra.scan_grid(s.grid_span, s.grid_points)
    series = spectra.simulate_series(cfg.emitter, spectra.DiffusionProcess.from_settings(s),
                                     s.n_scans, s.scan_period, s.power, grid, s.dwell, args.seed,
                                     extra_width=s.extra_width, threads=args.threads)
    centre_std, summed_fwhm, period = spectra.series_stats(series)
    out.table("ple_scans.csv", ["scan_index", "t_s", "center_hz", "fwhm_hz"],
              [(k, sc.scan_start, sc.fitted_center, sc.fitted_fwhm)
               for k, sc in enumerate(series.scans)])
    out.table("ple_waterfall.csv", ["scan_index"] + [repr(float(f)) for f in grid],
              [[k] + sc.counts.tolist() for k, sc in enumerate(series.scans)])
    out.table("ple_summed.csv", ["detuning_hz", "counts"], zip(*series.summed_spectrum))
    if series.summed_fit is not None:
        out.fits.append(series.summed_fit)
    out.summary.update(center_std_hz=centre_std, summed_fwhm_hz=summed_fwhm,
                       summed_fwhm_err_hz=series.summed_fwhm_err,
                       drift_period_estimate_s=period,
                       scan_fwhm_hz=float(np.nanmean([sc.fitted_fwhm for sc in series.scans])),
                       n_failed_fits=sum(not sc.ok for sc in series.scans))
    out.plot({"matrix": series.waterfall,
              "row_axis": ("scan_index", "1", list(range(len(series.scans)))),
              "col_axis": ("detuning_hz", "Hz", grid)}, "ple-series", "plot_ple_waterfall")
    out.plot({"columns": [("t_s", "s"), ("center_hz", "Hz")],
              "rows": zip(series.times, series.fitted_centers)}, "ple-centres")


def _cpt_system(cfg):
    s = cfg.simulation.cpt
    gs = cfg.emitter.gamma_s if s.gamma_s is None else s.gamma_s
    return lindblad.LambdaSystem.from_emitter(cfg.emitter, omega1=s.rabi_carrier,
                                              omega2=s.rabi_sideband, delta1=s.delta1,
                                              gamma_s=gs)


def _cpt(cfg, args, out: _Run):
    s = cfg.simulation.cpt
    system = _cpt_system(cfg)
    grid = np.linspace(-0.5 * s.delta_span, 0.5 * s.delta_span, s.delta_points)
    spec, rate, sigma = lindblad.sample_cpt_spectrum(system, grid, s.dwell, args.seed,
                                                     emitter=cfg.emitter, background=s.background,
                                                     taper=s.taper)
    out.table("cpt_spectrum.csv",
              ["delta_hz", "rho_ee", "expected_counts_per_s", "counts_per_s", "sigma_counts_per_s"],
              zip(grid, spec.rho_ee, spec.counts, rate, sigma))
    out.summary.update(true_gamma_s_hz=system.gamma_s,
                       t2_star_s=system.t2_star if system.gamma_s > 0 else None,
                       min_counts_per_s=float(spec.counts.min()),
                       max_counts_per_s=float(spec.counts.max()))
    if s.fit and s.dwell > 0:
        p0 = {name: 0.5 * getattr(system, name) for name in s.free
              if name == "gamma_s" and system.gamma_s > 0}
        res = fit.fit_cpt(grid, rate, sigma, system, s.free, emitter=cfg.emitter,
                          background=s.background, taper=s.taper, p0=p0 or None)
        out.fits.append(res)
        out.summary["fit"] = res.to_dict()
        if "gamma_s" in s.free:
            g, ge = res["gamma_s"]
            out.summary.update(fitted_gamma_s_hz=g, fitted_gamma_s_err_hz=ge,
                               fitted_t2_star_s=lindblad.t2_star(g) if g > 0 else None)
    out.plot({"columns": [("delta_hz", "Hz"), ("counts", "counts/s")],
              "rows": zip(grid, rate)}, "cpt")


def _readout(cfg, args, out: _Run):
    s = cfg.simulation.readout
    rcfg = readout.calibrated_readout_config(
        cfg.emitter, init_pulse=s.init_pulse, read_pulse=s.read_pulse, gap=s.gap, rest=s.rest,
        n_shots=s.n_shots, scatter_rate=s.scatter_rate, flip_per_photon=s.flip_per_photon,
        collection_eff=s.collection_eff, init_fidelity=s.init_fidelity, threshold=s.threshold,
        background_rate=s.background_rate)
    records = readout.simulate_shots(cfg.emitter, rcfg, args.seed)
    rep = readout.analyze(records, rcfg)
    out.table("readout_shots.csv", ["shot_index", "true_state", "photons", "dark_photons"],
              [(i, r.true_initial_spin.value, r.detected_photons, r.dark_photons)
               for i, r in enumerate(records)])
    counts = sorted(set(rep.hist_bright) | set(rep.hist_dark))
    out.table("readout_histogram.csv", ["count", "freq_bright", "freq_dark"],
              [(c, rep.hist_bright.get(c, 0) / rep.n_bright, rep.hist_dark.get(c, 0) / rep.n_dark)
               for c in counts])
    edges, mean = readout.sequence_histogram(records, rcfg, s.bin_width, cfg.emitter)
    out.table("readout_sequence.csv", ["t_s", "mean_counts"], zip(edges[:-1], mean))
    out.summary.update(rep.to_dict())
    out.summary.update(scatter_rate_hz=rcfg.scatter_rate, flip_per_photon=rcfg.flip_per_photon,
                       init_fidelity_model=readout.simulate_initialization(cfg.emitter,
                                                                           s.init_pulse))
    out.plot({"columns": [("t_s", "s"), ("mean_counts", "counts per bin")],
              "rows": zip(edges[:-1], mean)}, "readout")


def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read data: {exc.strerror}", key=str(path)) from None
    if len(rows) < 2:
        raise ConfigError("data file needs a header and at least one row", key=str(path))
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"non-numeric data: {exc}", key=str(path)) from None
    return header, data


def _column(header, data, name, default_index, path):
    if name is None:
        if default_index >= len(header):
            return None
        return data[:, default_index]
    if name not in header:
        raise ConfigError("no such column", key=f"{path}:{name}")
    return data[:, header.index(name)]


def _fit_cmd(cfg, args, out: _Run):
    if args.data is None:
        raise UsageError("fit: --data is required")
    header, data = _read_table(args.data)
    fs = cfg.simulation.fit
    opts = {"max_iter": fs.max_iter, "xtol": fs.xtol, "gtol": fs.gtol}
    model = args.model
    sigma_default = 2 if model != "exponential" else 99
    x = _column(header, data, args.x, 0, args.data)
    y = _column(header, data, args.y, 1, args.data)
    sigma = _column(header, data, args.sigma, sigma_default, args.data)
    if model == "exponential":
        if "bin_lo_s" in header and "bin_hi_s" in header and args.x is None:
            lo, hi = data[:, header.index("bin_lo_s")], data[:, header.index("bin_hi_s")]
            y = data[:, header.index("count")] if args.y is None and "count" in header else y
            edges = np.append(lo, hi[-1])
            x = 0.5 * (lo + hi)
        else:
            mids = 0.5 * (x[1:] + x[:-1])
            edges = np.concatenate([[2 * x[0] - mids[0]], mids, [2 * x[-1] - mids[-1]]])
        res = fit.fit_exponential_decay(edges, y, **opts)
        curve = fit.exponential_model(x, res.params)
    elif model == "linear":
        res = fit.fit_linear_through_origin(x, y, sigma, **opts)
        curve = res.params[0] * x
    elif model == "saturating":
        res = fit.fit_saturating_exponential(x, y, sigma, **opts)
        curve = fit.saturating_model(x, res.params)
    elif model == "lorentzian":
        res = fit.fit_lorentzian(x, y, sigma, poisson=sigma is None, **opts)
        curve = fit.lorentzian_model(x, res.params)
    else:  # cpt
        s = cfg.simulation.cpt
        res = fit.fit_cpt(x, y, sigma, _cpt_system(cfg), s.free, emitter=cfg.emitter,
                          background=s.background, taper=s.taper, **opts)
        curve = None
    out.fits.append(res)
    out.summary.update(model=model, data=Path(args.data).name, result=res.to_dict())
    if curve is not None:
        out.table("fit_curve.csv", ["x", "y", "model"], zip(x, y, curve))


SUBCOMMANDS = {
    "telegraph": _telegraph,
    "capture": _capture,
    "init-eff": _init_eff,
    "enhance": _enhance,
    "ple-series": _ple_series,
    "cpt": _cpt,
    "readout": _readout,
    "fit": _fit_cmd,
}


# ---------------------------------------------------------------------------
# Driver

def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--strict", action="store_true",
                        help="exit 4 when any fit did not converge")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default $G4VDYN_THREADS or 1)")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")

    p = _Parser(prog="g4vdyn", description="Tin-vacancy charge, spectral and spin simulations.")
    p.add_argument("--version", action="version", version=f"g4vdyn {__version__}")
    p.add_argument("--replay", metavar="MANIFEST",
                   help="re-run the subcommand, config and seed recorded in a manifest")
    p.add_argument("--replay-out", default="out-replay", metavar="DIR",
                   help="output directory for --replay (default ./out-replay)")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "fit":
            sp.add_argument("--model", required=True,
                            choices=("exponential", "linear", "saturating", "lorentzian", "cpt"))
            sp.add_argument("--data", help="CSV file with a header row")
            sp.add_argument("--x", help="abscissa column (default: first)")
            sp.add_argument("--y", help="ordinate column (default: second)")
            sp.add_argument("--sigma", help="error column (default: third, if present)")
    return p


def _execute(name, cfg, args, argv):
    t0 = time.perf_counter()
    out = _Run()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        SUBCOMMANDS[name](cfg, args, out)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if args.format in ("csv", "both"):
        for fname, header, rows in out.tables:
            files.append(write_csv(out_dir / fname, header, rows))
        for result, kind, stem in out.plots:
            files.extend(emit_plotdata(result, kind, out_dir, stem))
    converged = all(r is None or r.converged for r in out.fits)
    summary = {"subcommand": name, "seed": args.seed, "version": __version__,
               "all_fits_converged": converged, **out.summary}
    if args.format in ("json", "both"):
        files.append(write_json(out_dir / "summary.json", summary))
    manifest = RunManifest(name, config_to_dict(cfg), int(args.seed), __version__,
                           [str(f) for f in files], time.perf_counter() - t0, list(argv))
    write_manifest(out_dir, manifest)
    if args.strict and not converged:
        print(f"g4vdyn {name}: fit did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def replay(manifest_path, out_dir, threads=None) -> int:
    """Re-run a recorded run into ``out_dir``; returns the exit code."""
    m = read_manifest(manifest_path)
    argv = list(m.get("argv") or [m["subcommand"]])
    args = _parser().parse_args(argv)
    args.out, args.seed = str(out_dir), int(m["seed"])
    args.threads = resolve_threads(threads if threads is not None else args.threads)
    cfg = parse_config(json.dumps(m["config"]))
    return _execute(m["subcommand"], cfg, args, argv)


def run(argv=None) -> int:
    """Parse ``argv``, execute one subcommand and return the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parser().parse_args(argv)
        if args.replay:
            return replay(args.replay, args.replay_out, getattr(args, "threads", None))
        if args.subcommand is None:
            raise UsageError(_parser().format_usage())
        args.threads = resolve_threads(args.threads)
        cfg = load_config(args.config) if args.config else parse_config("")
        return _execute(args.subcommand, cfg, args, argv)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValidationError) as exc:
        print(f"g4vdyn: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FitError) as exc:
        print(f"g4vdyn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (OSError, KeyError) as exc:
        print(f"g4vdyn: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
