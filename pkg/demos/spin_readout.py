"""CPT dip, dephasing fit, and single-shot readout statistics."""
import numpy as np

from g4vdyn import fit, lindblad, readout
from g4vdyn.model import parse_config

cfg = parse_config("")
em, s = cfg.emitter, cfg.simulation.cpt

sys = lindblad.LambdaSystem.from_emitter(em, omega1=s.rabi_carrier, omega2=s.rabi_sideband)
grid = np.linspace(-0.5 * s.delta_span, 0.5 * s.delta_span, s.delta_points)
spec, rate, sigma = lindblad.sample_cpt_spectrum(sys, grid, s.dwell, seed=0, emitter=em,
                                                 background=s.background)
res = fit.fit_cpt(grid, rate, sigma, sys, ("gamma_s",), emitter=em, background=s.background,
                  p0={"gamma_s": 30e3})
g, ge = res["gamma_s"]
print(f"CPT: fitted gamma_s = {g / 1e3:.1f} +- {ge / 1e3:.1f} kHz, T2* = {lindblad.t2_star(g) * 1e6:.2f} us")

# Readout: rates calibrated so the bright histogram has the target mean and zero-count
# probability; spin flips make it over-dispersed.
rcfg = readout.calibrated_readout_config(em)
rep = readout.analyze(readout.simulate_shots(em, rcfg, seed=0), rcfg)
print(f"scatter {rcfg.scatter_rate:.0f} Hz, flip per photon 1/{1 / rcfg.flip_per_photon:.0f}")
print(f"mean {rep.mean_photons_raw:.3f} raw, {rep.mean_photons_dark_subtracted:.3f} dark-subtracted")
print(f"eps_B {rep.eps_B:.3f}  eps_D {rep.eps_D:.3f}  F {rep.fidelity:.3f}")
print(f"P(0) {rep.hist_bright.get(0, 0) / rep.n_bright:.3f} vs Poisson {np.exp(-rep.mean_photons_raw):.3f}")
