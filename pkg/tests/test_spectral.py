import math

import numpy as np
import pytest

from twomembrane import (band_variance, demodulate, moving_average,
                         spectrogram, welch_psd)
from twomembrane.spectral import band_variance_csv


FS = 500e3


def test_welch_sinusoid_peak_power():
    t = np.arange(int(FS)) / FS
    f0 = 50e3  # lands on a bin center for these segment lengths
    x = np.cos(2 * math.pi * f0 * t)
    freq, psd = welch_psd(x, FS, segment_length=10000)
    df = freq[1] - freq[0]
    peak = np.abs(freq - f0) < 5 * df
    assert np.sum(psd[peak]) * df == pytest.approx(0.5, rel=0.01)


def test_welch_white_noise_level():
    rng = np.random.default_rng(8)
    sigma = 0.7
    x = rng.normal(scale=sigma, size=2_000_000)
    freq, psd = welch_psd(x, FS, segment_length=4096)
    df = freq[1] - freq[0]
    assert np.sum(psd) * df == pytest.approx(sigma**2, rel=0.03)
    # flat: band levels equal within a few percent
    lo = psd[(freq > 10e3) & (freq < 60e3)].mean()
    hi = psd[(freq > 150e3) & (freq < 200e3)].mean()
    assert lo == pytest.approx(hi, rel=0.05)


def test_welch_dc_series():
    x = np.full(32768, 3.0)
    freq, psd = welch_psd(x, FS, segment_length=4096)
    assert np.argmax(psd) == 0
    assert np.all(psd[10:] < 1e-12 * psd[0])


def test_welch_validation():
    with pytest.raises(ValueError):
        welch_psd(np.array([]), FS)
    with pytest.raises(ValueError):
        welch_psd(np.zeros(100), FS, segment_length=200)


def test_spectrogram_stationary_columns():
    rng = np.random.default_rng(5)
    x = rng.normal(size=400_000)
    sg = spectrogram(x, FS, segment=8192)
    var = band_variance(sg, (0.0, FS / 2))
    assert np.std(var) / np.mean(var) < 0.05


def test_spectrogram_chirp_drifts():
    t = np.arange(400_000) / FS
    f_inst = 20e3 + 100e3 * t / t[-1]
    x = np.cos(2 * math.pi * np.cumsum(f_inst) / FS)
    sg = spectrogram(x, FS, segment=8192)
    peaks = sg.freq[np.argmax(sg.power, axis=0)]
    assert np.all(np.diff(peaks) >= 0.0)
    assert peaks[-1] > peaks[0] + 80e3


def test_band_variance_parseval_and_additivity():
    rng = np.random.default_rng(6)
    x = rng.normal(size=300_000)
    sg = spectrogram(x, FS, segment=4096)
    total = band_variance(sg, (0.0, FS / 2))
    assert np.mean(total) == pytest.approx(np.var(x), rel=0.01)
    left = band_variance(sg, (0.0, 100e3))
    right = band_variance(sg, (100e3 + 1.0, FS / 2))
    assert np.allclose(left + right, total, rtol=1e-9)
    with pytest.raises(ValueError, match="band"):
        band_variance(sg, (400e3, 450e3))
    csv = band_variance_csv(sg, [(0.0, 100e3), (100e3, 200e3)])
    assert csv.splitlines()[0] == "t,var_0_100000,var_100000_200000"


def test_demodulate_tone_amplitude_and_phase():
    fs = 400e3
    t = np.arange(int(fs * 2)) / fs
    amp, phi, f0 = 2.5, 0.7, 50e3
    x = amp * np.cos(2 * math.pi * f0 * t + phi)
    quad = demodulate(x, fs, f0, bandwidth=100.0)
    sel = quad.t > 0.5
    assert np.mean(quad.amplitude[sel]) == pytest.approx(amp, rel=1e-3)
    assert np.mean(quad.phase[sel]) == pytest.approx(phi, abs=1e-3)
    # amplitude independent of the demodulation phase: a time shift by a
    # quarter period only rotates the quadratures
    shift = int(round(fs / f0 / 4))
    quad2 = demodulate(x[shift:], fs, f0, bandwidth=100.0)
    sel2 = quad2.t > 0.5
    assert np.mean(quad2.amplitude[sel2]) == pytest.approx(amp, rel=1e-3)


def test_demodulate_bandwidth_invariance():
    fs = 400e3
    t = np.arange(int(fs * 3)) / fs
    x = 1.7 * np.cos(2 * math.pi * 50e3 * t) \
        + 1.2 * np.cos(2 * math.pi * 53e3 * t)
    est = []
    for bw in (70.0, 100.0, 150.0):
        quad = demodulate(x, fs, 50e3, bandwidth=bw)
        est.append(np.mean(quad.amplitude[quad.t > 1.5]))
    assert max(est) / min(est) - 1.0 < 0.02
    assert est[1] == pytest.approx(1.7, rel=0.02)


def test_demodulate_thermal_blob():
    """A noise-driven oscillator demodulates to an isotropic cloud."""
    fs = 200e3
    n = int(fs * 4)
    rng = np.random.default_rng(12)
    # complex OU at 40 kHz with 30 Hz linewidth
    gamma = 2 * math.pi * 30.0
    dt = 1.0 / fs
    decay = np.exp((-1j * 2 * math.pi * 40e3 - gamma) * dt)
    kick = math.sqrt(gamma * dt)
    z = np.zeros(n, dtype=complex)
    noise = (rng.normal(size=n) + 1j * rng.normal(size=n)) * kick
    acc = 0.0 + 0.0j
    for k in range(1, n):
        acc = decay * acc + noise[k]
        z[k] = acc
    x = z.real
    quad = demodulate(x, fs, 40e3, bandwidth=150.0)
    sel = quad.t > 1.0
    vx, vy = quad.vx[sel], quad.vy[sel]
    assert np.std(vx) == pytest.approx(np.std(vy), rel=0.15)
    rho = np.corrcoef(vx, vy)[0, 1]
    assert abs(rho) < 0.15
    # ring statistic of a blob: mean amplitude well below 3 sigma radius
    assert np.mean(np.hypot(vx, vy)) < 2.0 * np.std(np.hypot(vx, vy)) * 2.0


def test_demodulate_validation():
    x = np.zeros(1000)
    with pytest.raises(ValueError):
        demodulate(x, 1e4, 6e3, 100.0)   # above Nyquist
    with pytest.raises(ValueError):
        demodulate(x, 1e4, 1e3, 2e3)     # bandwidth above f0


def test_moving_average():
    x = np.ones(50)
    assert np.allclose(moving_average(x, 7), 1.0)
    ramp = np.arange(9.0)
    sm = moving_average(ramp, 3)
    assert sm[4] == pytest.approx(4.0)
