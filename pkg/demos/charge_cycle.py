"""Charge cycle: capture rate versus power and the repump initialisation curve.

Run from the repository root::

    python demos/charge_cycle.py
"""
from pathlib import Path

from g4vdyn import chargesim, fit
from g4vdyn.model import LaserPulse, load_config

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "reference.json")
emitter, charge, sim = cfg

# Capture: bright durations under resonant light are exponential with rate k*P.
powers = sim.capture.powers
hists = [chargesim.run_capture_experiment(emitter, charge, p, sim.capture.n_reps, seed=0,
                                          series_index=k) for k, p in enumerate(powers)]
for h in hists:
    print(f"P = {h.resonant_power:5.1f} nW   rate = {h.fitted_rate:6.2f} +- {h.fitted_rate_err:4.2f} Hz")
slope = fit.fit_linear_through_origin(powers, [h.fitted_rate for h in hists],
                                      [h.fitted_rate_err for h in hists])
print("slope = %.3f +- %.3f Hz/nW" % slope["slope"])

# Initialisation: a blue pulse of growing length, then a resonant probe.
s = sim.init_eff
probe = LaserPulse("resonant_C", s.probe_power, s.probe_duration)
curve = chargesim.run_init_efficiency(emitter, charge, s.blue_power, s.pulse_lengths, s.n_reps,
                                      probe, s.threshold_counts, seed=0, window=s.window)
for t, eff, err in curve:
    print(f"t = {t * 1e3:5.2f} ms   efficiency = {eff:.3f} +- {err:.3f}")
print("plateau %.3f +- %.3f" % curve.eta_max, "  tau %.0f +- %.0f us" % tuple(1e6 * v for v in curve.tau))
