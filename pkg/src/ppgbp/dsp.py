"""Signal primitives shared by the PPG, ABP and rPPG pipelines.

Everything here is a pure function of its inputs. Signals travel as
:class:`TimeSeries` (samples plus sampling rate); frequency bands as
:class:`BandSpec`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import (
    InsufficientLengthError,
    InvalidBandError,
    NoDominantComponentError,
    UndefinedSNRError,
    ZeroVarianceError,
)

SNR_BAND = (0.5, 8.0)
FUNDAMENTAL_HALF_WIDTH = 0.1
HARMONIC_HALF_WIDTH = 0.2


@dataclass(frozen=True, eq=False)
class TimeSeries:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("TimeSeries samples must be one-dimensional")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if len(x) < 2:
            raise InsufficientLengthError("TimeSeries needs at least 2 samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("TimeSeries samples must be finite")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "fs", float(self.fs))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.samples)) / self.fs


@dataclass(frozen=True)
class BandSpec:
    low_hz: float = 0.5
    high_hz: float = 8.0
    order: int = 4

    def validate(self, fs: float) -> None:
        if self.order < 1:
            raise InvalidBandError(f"filter order must be positive, got {self.order}")
        if not 0 < self.low_hz < self.high_hz < fs / 2:
            raise InvalidBandError(
                f"band [{self.low_hz}, {self.high_hz}] Hz invalid for fs={fs} Hz"
            )


DEFAULT_BAND = BandSpec(0.5, 8.0, 4)


def design_bandpass(band: BandSpec, fs: float) -> np.ndarray:
    """Butterworth band-pass as second-order sections (bilinear transform)."""
    band.validate(fs)
    return signal.butter(band.order, [band.low_hz, band.high_hz], btype="bandpass",
                         fs=fs, output="sos")


def bandpass(ts: TimeSeries, band: BandSpec = DEFAULT_BAND) -> TimeSeries:
    """Zero-phase (forward-backward) Butterworth band-pass filter."""
    sos = design_bandpass(band, ts.fs)
    n = len(ts)
    if n < 3 * band.order:
        raise InsufficientLengthError(
            f"signal of {n} samples too short for order-{band.order} filter"
        )
    # scipy's default pad length, capped so short windows still filter
    ntaps = 2 * len(sos) + 1
    ntaps -= min((sos[:, 2] == 0).sum(), (sos[:, 5] == 0).sum())
    padlen = min(3 * ntaps, n - 1)
    y = signal.sosfiltfilt(sos, ts.samples, padlen=padlen)
    return TimeSeries(y, ts.fs)


def derivative(ts: TimeSeries, order: int = 1) -> TimeSeries:
    """Finite-difference derivative in units per second (per second squared).

    Central differences in the interior, one-sided at both edges.
    """
    if order not in (1, 2):
        raise ValueError(f"derivative order must be 1 or 2, got {order}")
    x = ts.samples
    if len(x) < order + 1:
        raise InsufficientLengthError("signal too short for requested derivative")
    if order == 1:
        return TimeSeries(np.gradient(x, 1.0 / ts.fs, edge_order=1), ts.fs)
    if len(x) == 2:
        raise InsufficientLengthError("second derivative needs at least 3 samples")
    d2 = np.empty_like(x)
    d2[1:-1] = (x[2:] - 2.0 * x[1:-1] + x[:-2]) * ts.fs**2
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return TimeSeries(d2, ts.fs)


def estimate_heart_rate(ts: TimeSeries, search_band: BandSpec) -> float:
    """Dominant spectral frequency inside ``search_band``, in beats per minute.

    The zero-mean signal is Hann-windowed and zero-padded to at least eight
    times its length; the peak bin is refined by parabolic interpolation.
    """
    lo, hi = search_band.low_hz, search_band.high_hz
    if not 0 < lo < hi <= ts.fs / 2:
        raise InvalidBandError(f"search band [{lo}, {hi}] Hz invalid for fs={ts.fs}")
    if ts.duration < 2.0 / lo:
        raise InsufficientLengthError(
            f"{ts.duration:.2f} s is shorter than two periods at {lo} Hz"
        )
    x = ts.samples - ts.samples.mean()
    n = len(x)
    nfft = 1 << int(np.ceil(np.log2(8 * n)))
    mag = np.abs(np.fft.rfft(x * np.hanning(n), nfft))
    freqs = np.fft.rfftfreq(nfft, 1.0 / ts.fs)
    idx = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if idx.size == 0:
        raise NoDominantComponentError("no spectral bins inside search band")
    k = idx[np.argmax(mag[idx])]
    if mag[k] <= 1e-12 * max(1.0, np.abs(ts.samples).max()):
        raise NoDominantComponentError("signal has no dominant spectral component")
    offset = 0.0
    if 0 < k < len(mag) - 1:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        denom = a - 2 * b + c
        if denom < 0:
            offset = 0.5 * (a - c) / denom
    f = (k + offset) * ts.fs / nfft
    return 60.0 * float(np.clip(f, lo, hi))


def resample_to_length(ts: TimeSeries, target_len: int) -> TimeSeries:
    """Linear interpolation onto ``target_len`` evenly spaced points."""
    target_len = int(target_len)
    if target_len < 2:
        raise ValueError("target_len must be at least 2")
    n = len(ts)
    if target_len == n:
        return TimeSeries(ts.samples.copy(), ts.fs)
    pos = np.linspace(0.0, n - 1.0, target_len)
    y = np.interp(pos, np.arange(n), ts.samples)
    return TimeSeries(y, ts.fs * target_len / n)


def template_mask(freqs: np.ndarray, f0: float) -> np.ndarray:
    """Bins inside the fundamental and second-harmonic SNR templates."""
    mask = (np.abs(freqs - f0) <= FUNDAMENTAL_HALF_WIDTH) | (
        np.abs(freqs - 2 * f0) <= HARMONIC_HALF_WIDTH
    )
    # coarse spectra: the fundamental's nearest bin always counts as signal
    mask[np.argmin(np.abs(freqs - f0))] = True
    return mask


def snr_db(ts: TimeSeries, hr_bpm: float) -> float:
    """Harmonic-template SNR of a pulse signal in dB.

    Energy in the template bins (fundamental +-0.1 Hz, second harmonic
    +-0.2 Hz) over the remaining energy in 0.5-8 Hz, from the plain
    periodogram of the zero-mean signal.
    """
    if not 30 <= hr_bpm <= 240:
        raise ValueError(f"hr_bpm must lie in [30, 240], got {hr_bpm}")
    x = ts.samples - ts.samples.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / ts.fs)
    in_band = (freqs >= SNR_BAND[0]) & (freqs <= min(SNR_BAND[1], ts.fs / 2))
    tmpl = template_mask(freqs, hr_bpm / 60.0) & in_band
    signal_energy = power[tmpl].sum()
    noise_energy = power[in_band & ~tmpl].sum()
    total = signal_energy + noise_energy
    if total <= 0 or total <= 1e-24 * max(1.0, float(np.sum(x * x))):
        raise UndefinedSNRError("no spectral energy inside the SNR band")
    if noise_energy <= 0:
        return float("inf")
    if signal_energy <= 0:
        return float("-inf")
    return float(10.0 * np.log10(signal_energy / noise_energy))


def zscore(ts: TimeSeries) -> TimeSeries:
    """Zero mean, unit population (1/N) standard deviation."""
    x = ts.samples
    mu = x.mean()
    sd = x.std()
    if sd == 0 or sd <= 1e-12 * max(1.0, abs(mu)):
        raise ZeroVarianceError("cannot standardize a constant signal")
    return TimeSeries((x - mu) / sd, ts.fs)
