"""Time-series analysis: PSDs, spectrograms, band variances, demodulation.

Everything operates on the homodyne voltage record; units are V^2/Hz for
spectral densities and V^2 for band variances.  Welch segments use a Hann
window with 50% overlap and window-power compensation, so Parseval holds
at the percent level on stationary input.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig


def welch_psd(series: np.ndarray, fs: float, segment_length: int | None = None,
              overlap: float = 0.5, window: str = "hann"):
    """One-sided Welch PSD; returns (freq [Hz], psd [V^2/Hz])."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty series")
    if segment_length is None:
        segment_length = min(series.size, 4096)
    if segment_length > series.size:
        raise ValueError("segment_length exceeds series length")
    noverlap = int(segment_length * overlap)
    freq, psd = _sig.welch(series, fs=fs, window=window,
                           nperseg=segment_length, noverlap=noverlap,
                           detrend=False, scaling="density")
    return freq, psd


@dataclass(frozen=True)
class Spectrogram:
    """Sequence of short-window PSD estimates."""

    t: np.ndarray        # segment centers [s]
    freq: np.ndarray     # [Hz]
    power: np.ndarray    # [V^2/Hz], shape (freq, t)
    segment: int
    hop: int
    fs: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("freq_hz\\t," + ",".join(f"{tv:.9g}" for tv in self.t) + "\n")
        for i, f in enumerate(self.freq):
            buf.write(f"{f:.9g}," + ",".join(f"{p:.6g}" for p in self.power[i])
                      + "\n")
        return buf.getvalue()

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,freq_hz,psd\n")
        for k, tv in enumerate(self.t):
            for i, f in enumerate(self.freq):
                buf.write(f"{tv:.9g},{f:.9g},{self.power[i, k]:.6g}\n")
        return buf.getvalue()


def spectrogram(series: np.ndarray, fs: float, segment: int,
                hop: int | None = None, window: str = "hann") -> Spectrogram:
    """PSD spectrogram with Hann windowing; hop defaults to segment/2."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty series")
    if segment > series.size:
        raise ValueError("segment exceeds series length")
    if hop is None:
        hop = segment // 2
    freq, t, power = _sig.spectrogram(series, fs=fs, window=window,
                                      nperseg=segment,
                                      noverlap=segment - hop,
                                      detrend=False, scaling="density",
                                      mode="psd")
    return Spectrogram(t=t, freq=freq, power=power, segment=segment,
                       hop=hop, fs=fs)


def band_variance(sg: Spectrogram, band: tuple[float, float]) -> np.ndarray:
    """Integral of the PSD over [f_lo, f_hi] per time bin [V^2]."""
    f_lo, f_hi = band
    sel = (sg.freq >= f_lo) & (sg.freq <= f_hi)
    if not np.any(sel):
        raise ValueError(f"band [{f_lo}, {f_hi}] Hz outside spectrogram range")
    df = sg.freq[1] - sg.freq[0]
    return np.sum(sg.power[sel, :], axis=0) * df


def band_variance_csv(sg: Spectrogram, bands) -> str:
    buf = io.StringIO()
    names = [f"var_{lo:g}_{hi:g}" for lo, hi in bands]
    buf.write("t," + ",".join(names) + "\n")
    columns = [band_variance(sg, band) for band in bands]
    for k, tv in enumerate(sg.t):
        buf.write(f"{tv:.9g}," + ",".join(f"{c[k]:.8g}" for c in columns) + "\n")
    return buf.getvalue()


@dataclass(frozen=True)
class QuadratureTrace:
    """Slowly varying quadratures of one demodulated tone."""

    t: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    f0: float
    bandwidth: float

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    @property
    def phase(self) -> np.ndarray:
        return np.arctan2(self.vy, self.vx)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,vx,vy\n")
        for k in range(self.t.size):
            buf.write(f"{self.t[k]:.9g},{self.vx[k]:.9g},{self.vy[k]:.9g}\n")
        return buf.getvalue()


# -3 dB point of one pole is at 0.435 * cutoff once cascaded four times
_CASCADE_FACTOR = 1.0 / math.sqrt(2.0**0.25 - 1.0)


def demodulate(series: np.ndarray, fs: float, f0: float,
               bandwidth: float) -> QuadratureTrace:
    """Lock-in demodulation at f0 with a 4th-order critically-damped LP.

    Mixes with cos/sin at f0 (gain normalized so a tone A cos(2 pi f0 t +
    phi) maps to vx + i vy = A e^{i phi}), low-passes each quadrature with
    four identical one-pole sections whose cascade is -3 dB at
    bandwidth/2, then decimates to roughly 8 samples per bandwidth.
    """
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty series")
    if not 0.0 < f0 < fs / 2.0:
        raise ValueError("demodulation frequency must lie below Nyquist")
    if not 0.0 < bandwidth < f0:
        raise ValueError("bandwidth must be positive and below f0")
    n = series.size
    t = np.arange(n) / fs
    z = 2.0 * series * np.exp(-2j * math.pi * f0 * t)
    f_stage = (bandwidth / 2.0) * _CASCADE_FACTOR
    pole = math.exp(-2.0 * math.pi * f_stage / fs)
    b, a = [1.0 - pole], [1.0, -pole]
    for _ in range(4):
        z = _sig.lfilter(b, a, z)
    step = max(1, int(fs / (8.0 * bandwidth)))
    return QuadratureTrace(t=t[::step], vx=z.real[::step], vy=z.imag[::step],
                           f0=f0, bandwidth=bandwidth)


def moving_average(x: np.ndarray, n: int) -> np.ndarray:
    """Centered boxcar smoothing over n points (edges renormalized)."""
    x = np.asarray(x, dtype=float)
    if n < 1:
        raise ValueError("window must be >= 1")
    kernel = np.ones(n)
    norm = np.convolve(np.ones_like(x), kernel, mode="same")
    return np.convolve(x, kernel, mode="same") / norm
