import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from g4vdyn import chargesim as cs
from g4vdyn.errors import InsufficientStatisticsError, ValidationError
from g4vdyn.model import ChargeParams, EmitterParams, LaserPulse, PulseSequence

EM = EmitterParams()
CH = ChargeParams()


def test_capture_rate_examples():
    assert cs.capture_rate(CH, 0.0) == 0.0
    assert cs.capture_rate(CH, 20.7) == pytest.approx(26.496)
    assert cs.capture_rate(CH, 35.9) == pytest.approx(46.0, abs=0.1)
    with pytest.raises(ValidationError):
        cs.capture_rate(CH, -1.0)


def test_init_rate_examples():
    assert cs.init_rate(CH, 0.0) == 0.0
    r = cs.init_rate(CH, 600.0)
    assert r == pytest.approx(114e3)
    assert 1.0 / r == pytest.approx(8.8e-6, rel=0.01)
    slow = ChargeParams(k_init=1.0 / (780e-6 * 50))
    assert cs.init_rate(slow, 50.0) == pytest.approx(1282.05, rel=1e-4)


def test_repump_probability_examples():
    assert cs.repump_probability(CH, 2.0) == 0.0
    assert cs.repump_probability(CH, 3.2) == 1.0
    assert cs.repump_probability(CH, 2.7) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        cs.repump_probability(CH, 0.0)


@pytest.mark.parametrize("shape", ["linear", "logistic"])
@given(e=st.lists(st.floats(0.5, 5.0), min_size=2, max_size=20))
def test_repump_probability_monotone_bounded(shape, e):
    e = np.sort(np.array(e))
    p = cs.repump_probability(CH, e, shape=shape)
    assert np.all((p >= 0) & (p <= 1))
    assert np.all(np.diff(p) >= -1e-15)


def _resonant_only(power, duration=1.0, repeat=1):
    return PulseSequence((LaserPulse("resonant_C", power, duration),), repeat_count=repeat)


def test_zero_power_never_goes_dark():
    tr = cs.simulate_telegraph(EM, CH, _resonant_only(0.0, 2.0), 1e-2, seed=3, start_state="bright")
    assert tr.events == []
    assert len(tr.bins) == 200
    # only dark counts: mean 1 per 10 ms bin at the default 100 Hz
    assert tr.counts.mean() == pytest.approx(EM.dark_rate * 1e-2, rel=0.25)


def test_single_blue_pulse_bright_probability():
    charge = ChargeParams(eta_max=1.0)
    rate = cs.init_rate(charge, 50.0)
    seq = PulseSequence((LaserPulse("blue_445", 50e3, 5.0 / rate),))
    n = 4000
    bright = 0
    for seed in range(n):
        tr = cs.simulate_telegraph(EM, charge, seq, 5.0 / rate, seed=seed, start_state="dark")
        bright += len(tr.events) % 2
    p = bright / n
    expected = 1 - math.exp(-5)
    assert abs(p - expected) < 3 * math.sqrt(expected * (1 - expected) / n) + 1e-3


@pytest.fixture(scope="module")
def sojourns():
    """Bright sojourns under the resonant probe of the capture sequence."""
    seq = cs.capture_sequence(20.7, 1.0)
    probe = seq.pulses[-1]
    reps = 11000
    tr = cs.simulate_telegraph(EM, CH, PulseSequence(seq.pulses, repeat_count=reps), 0.1,
                               seed=0, start_state="dark")
    out = []
    state_bright = False
    for t, s in tr.events:
        k, local = divmod(t, seq.period)
        if s.is_bright:
            state_bright = True
        elif state_bright:
            assert local >= probe.start
            out.append(local - probe.start)
            state_bright = False
    return np.array(out)


def test_mean_bright_duration(sojourns):
    assert sojourns.size >= 10_000 * 0.9
    mean, se = sojourns.mean(), sojourns.std(ddof=1) / math.sqrt(sojourns.size)
    assert abs(mean - 1 / 26.496) < 3 * se
    assert mean == pytest.approx(37.7e-3, rel=0.05)


def test_sojourn_times_are_exponential(sojourns):
    sample = sojourns[:10_000]
    res = stats.kstest(sample, "expon", args=(0, 1 / 26.496))
    assert res.pvalue > 0.01


def test_telegraph_bit_identical():
    seq = _resonant_only(20.7, 0.5, repeat=3)
    a = cs.simulate_telegraph(EM, CH, seq, 1e-3, seed=11)
    b = cs.simulate_telegraph(EM, CH, seq, 1e-3, seed=11)
    assert a == b
    assert a != cs.simulate_telegraph(EM, CH, seq, 1e-3, seed=12)


def test_telegraph_rejects_bad_input():
    with pytest.raises(ValidationError):
        cs.simulate_telegraph(EM, CH, _resonant_only(1.0), 0.0)
    with pytest.raises(ValidationError):
        cs.simulate_telegraph(EM, CH, [LaserPulse("resonant_C", 1.0, 1.0)], 1e-3)


def test_capture_recovers_rate():
    h = cs.run_capture_experiment(EM, CH, 20.7, n_reps=500, seed=1)
    assert abs(h.fitted_rate - 26.496) < 3 * h.fitted_rate_err
    assert h.n_censored == 0
    assert h.counts.sum() + h.n_uninitialised == 500


@pytest.mark.slow
def test_capture_converges_at_large_n():
    h = cs.run_capture_experiment(EM, CH, 20.7, n_reps=5000, seed=2)
    assert h.fitted_rate == pytest.approx(26.496, rel=0.02)


def test_capture_without_transitions_raises():
    with pytest.raises(InsufficientStatisticsError):
        cs.run_capture_experiment(EM, CH, 0.0, n_reps=100, seed=0)


def test_capture_short_probe_warns():
    with pytest.warns(UserWarning):
        cs.run_capture_experiment(EM, CH, 20.7, n_reps=100, pulse_length=0.1, seed=0)


def test_capture_independent_of_threads():
    a = cs.run_capture_experiment(EM, CH, 20.7, n_reps=200, seed=4, threads=1)
    b = cs.run_capture_experiment(EM, CH, 20.7, n_reps=200, seed=4, threads=4)
    assert np.array_equal(a.durations, b.durations)
    assert a.fitted_rate == b.fitted_rate


@pytest.fixture(scope="module")
def init_curve():
    charge = ChargeParams(k_init=1.0 / (780e-6 * 50))
    probe = LaserPulse("resonant_C", 46.0 / 1.28, 0.5)
    lengths = [0.0, 0.2e-3, 0.78e-3, 1.5e-3, 3e-3, 6e-3, 10e-3]
    return cs.run_init_efficiency(EM, charge, 50.0, lengths, 250, probe, 5, seed=0, window=2e-3)


def test_init_efficiency_zero_length_is_zero(init_curve):
    t, p, err = init_curve.points[0]
    assert t == 0.0 and p == 0.0


def test_init_efficiency_long_pulse_plateau(init_curve):
    _, p, err = init_curve.points[-1]
    assert abs(p - 0.91) < 3 * math.sqrt(0.91 * 0.09 / 250)


def test_init_efficiency_at_tau(init_curve):
    _, p, _ = init_curve.points[2]
    assert abs(p - 0.91 * (1 - math.exp(-1))) < 3 * math.sqrt(0.575 * 0.425 / 250)


def test_init_efficiency_fit_recovers_truth(init_curve):
    eta, eta_err = init_curve.eta_max
    tau, tau_err = init_curve.tau
    assert abs(eta - 0.91) < 3 * eta_err
    assert abs(tau - 780e-6) < 3 * tau_err


def test_enhancement_examples():
    sp = cs.enhancement_spectrum(EM, CH, [2.0, 2.5, 3.0], 2000.0, 20.7)
    assert sp.beta[0] == pytest.approx(1.0)
    # repump far above capture: bright fraction near 1, baseline is the dark floor
    big = cs.enhancement_spectrum(EM, CH, [3.0], 1e9, 20.7)
    f = 1e9 / (1e9 + 26.496)
    expected = (f * 45e3 * 20.7 / (20.7 + EM.p_sat) + EM.dark_rate) / EM.dark_rate
    assert big.beta[0] == pytest.approx(expected, rel=1e-9)
    assert big.beta[0] > 100


@given(st.lists(st.floats(1.5, 4.0), min_size=2, max_size=15), st.floats(0.0, 50.0))
def test_enhancement_non_decreasing(energies, residual):
    energies = sorted(energies)
    sp = cs.enhancement_spectrum(EM, CH, energies, 2000.0, 20.7, residual_recovery_rate=residual)
    assert np.all(np.diff(sp.beta) >= -1e-12)
    assert np.all(sp.beta >= 1 - 1e-12)


def test_enhancement_needs_resonant_power():
    with pytest.raises(ValidationError):
        cs.enhancement_spectrum(EM, CH, [2.5], 1.0, 0.0)


def test_freedman_diaconis_edges_cover_samples():
    rng = np.random.default_rng(0)
    x = rng.exponential(1.0, 500)
    e = cs.freedman_diaconis_edges(x)
    assert e[0] == 0.0 and e[-1] == x.max()
    assert np.histogram(x, e)[0].sum() == 500
