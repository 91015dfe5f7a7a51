"""Evaluate the oracles once and store the results (run from the repo root)."""
import json
import math
from pathlib import Path

import numpy as np

import oracles

CASES = [
    dict(gamma=25e6, eta=650, gamma_s=64e3, gamma_flip=1 / 44e-3, omega1=3.5e6, omega2=3.5e6,
         delta1=0.0, delta2=0.0),
    dict(gamma=25e6, eta=650, gamma_s=64e3, gamma_flip=1 / 44e-3, omega1=3.5e6, omega2=3.5e6,
         delta1=0.0, delta2=4e5),
    dict(gamma=25e6, eta=650, gamma_s=0.0, gamma_flip=1 / 44e-3, omega1=1e6, omega2=2e6,
         delta1=3e6, delta2=3e6),
    dict(gamma=10e6, eta=3.0, gamma_s=2e5, gamma_flip=100.0, omega1=5e6, omega2=1e6,
         delta1=-2e6, delta2=1e6),
]


def main():
    out = {"lindblad": []}
    for case in CASES:
        h, cs = oracles.lambda_operators(**case)
        rho = oracles.steady_state_bruteforce(h, cs)
        out["lindblad"].append({"params": case, "rho_diag": [float(rho[i, i].real) for i in range(3)],
                                "coh_g1g2": [float(rho[0, 1].real), float(rho[0, 1].imag)]})
    # optical pumping: rate giving 0.989 after 200 us with T1 = 22 ms
    g1 = 1 / 22e-3
    out["pumping"] = {"rate": 19000.0, "g1": g1, "t": 200e-6,
                      "p_pumped": oracles.pumping_ode(19000.0, g1, 200e-6)}
    # readout counts under exponential flip times (continuum limit)
    out["readout"] = []
    for s, g in [(2e4, 1.7e4), (6e3, 0.0 + 1e-9), (5e4, 1e5)]:
        mean, p0 = oracles.exponential_flip_counts(s, g, 0.03, 200e-6)
        out["readout"].append({"scatter": s, "flip_rate": g, "mean": mean, "p0": p0})
    # two identical Lorentzians summed, and a 2-point centre set
    grid = np.linspace(-150e6, 150e6, 3001)
    two = oracles.lorentzian_voigt_summed(30e6, [-10e6, 10e6], grid)
    above = grid[two >= 0.5 * two.max()]
    out["two_line_fwhm"] = float(above[-1] - above[0])
    Path(__file__).with_name("data").joinpath("oracles.json").write_text(
        json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
