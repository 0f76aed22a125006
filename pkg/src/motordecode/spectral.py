"""Spectral estimation: Welch PSD, band log-power and magnitude-squared coherence.

All estimators use a periodic Hann window, per-segment mean removal and a
one-sided spectrum. The cross-spectral core is vectorised over leading axes so
that batches of permuted series can be processed in a single call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BandDefinition",
    "CANONICAL_BANDS",
    "POWER_FLOOR",
    "PsdEstimate",
    "SpectralError",
    "welch_psd",
    "band_power",
    "log_bandpower",
    "log_bandpowers",
    "magnitude_squared_coherence",
    "coherence_segment_len",
]

#: Added to band power before taking the log so that silent channels stay finite.
POWER_FLOOR = 1e-12

EEG_SEGMENT_LEN = 500
EEG_OVERLAP = 0.5
COHERENCE_MAX_SEGMENT = 32
COHERENCE_OVERLAP = 0.5


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class BandDefinition:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 < self.lo_hz < self.hi_hz):
            raise SpectralError(
                f"band {self.name!r}: need 0 < lo_hz < hi_hz, got {self.lo_hz}, {self.hi_hz}")
        if self.lo_hz < 51.0 and self.hi_hz > 49.0:
            warnings.warn(f"band {self.name!r} overlaps the 50 Hz mains line", stacklevel=3)

    @property
    def center_hz(self) -> float:
        return 0.5 * (self.lo_hz + self.hi_hz)

    def to_dict(self) -> dict:
        return {"name": self.name, "lo_hz": self.lo_hz, "hi_hz": self.hi_hz}


CANONICAL_BANDS = (
    BandDefinition("delta", 1.0, 4.0),
    BandDefinition("theta", 4.0, 8.0),
    BandDefinition("alpha", 8.0, 13.0),
    BandDefinition("beta", 13.0, 30.0),
    BandDefinition("high_gamma", 60.0, 90.0),
)


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    power: np.ndarray
    segment_len: int
    overlap_fraction: float

    @property
    def df(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])


def _hann(n):
    # periodic Hann, the usual choice for spectral averaging
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _segment_starts(n, segment_len, overlap_fraction):
    if not 0.0 <= overlap_fraction < 1.0:
        raise SpectralError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    step = segment_len - int(np.floor(overlap_fraction * segment_len))
    step = max(step, 1)
    return np.arange(0, n - segment_len + 1, step)


def _segment_spectra(x, segment_len, overlap_fraction):
    """Windowed, demeaned rFFT of each Welch segment along the last axis.

    Returns an array of shape ``x.shape[:-1] + (n_segments, n_freqs)`` and the
    window normalisation sum(w**2).
    """
    starts = _segment_starts(x.shape[-1], segment_len, overlap_fraction)
    idx = starts[:, None] + np.arange(segment_len)[None, :]
    segs = x[..., idx]
    segs = segs - segs.mean(axis=-1, keepdims=True)
    win = _hann(segment_len)
    return np.fft.rfft(segs * win, axis=-1), float(np.sum(win ** 2))


def _one_sided_scale(n_freqs, segment_len):
    scale = np.full(n_freqs, 2.0)
    scale[0] = 1.0
    if segment_len % 2 == 0:
        scale[-1] = 1.0
    return scale


def welch_psd(x, fs, segment_len=EEG_SEGMENT_LEN, overlap_fraction=EEG_OVERLAP):
    """Welch power spectral density of a 1-D series.

    Parameters
    ----------
    x : array_like
        Signal samples.
    fs : float
        Sample rate in Hz.
    segment_len : int
        Samples per segment (at least 8).
    overlap_fraction : float
        Fractional overlap between consecutive segments, in [0, 1).

    Returns
    -------
    PsdEstimate
        One-sided density in units**2/Hz. Summing ``power * df`` over all bins
        approximates the variance of `x`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise SpectralError("welch_psd expects a 1-D series")
    freqs, power = _welch_density(x, fs, segment_len, overlap_fraction)
    return PsdEstimate(freqs, power, int(segment_len), float(overlap_fraction))


def _welch_density(x, fs, segment_len, overlap_fraction):
    # shared by welch_psd and the multichannel feature path; works along the last axis
    if fs <= 0:
        raise SpectralError(f"fs must be positive, got {fs}")
    segment_len = int(segment_len)
    if segment_len < 8:
        raise SpectralError(f"segment_len must be >= 8, got {segment_len}")
    if x.shape[-1] < segment_len:
        raise SpectralError(
            f"series of {x.shape[-1]} samples is shorter than one segment ({segment_len})")
    if not np.all(np.isfinite(x)):
        raise SpectralError("series contains non-finite values")

    spec, wss = _segment_spectra(x, segment_len, overlap_fraction)
    power = np.mean(np.abs(spec) ** 2, axis=-2) / (fs * wss)
    power *= _one_sided_scale(power.shape[-1], segment_len)
    return np.fft.rfftfreq(segment_len, d=1.0 / fs), power


def band_power(psd: PsdEstimate, band: BandDefinition) -> float:
    """Power integrated over the half-open band ``[lo_hz, hi_hz)``."""
    mask = (psd.freqs_hz >= band.lo_hz) & (psd.freqs_hz < band.hi_hz)
    return float(np.sum(psd.power[mask]) * psd.df)


def log_bandpowers(x, fs, bands, segment_len=EEG_SEGMENT_LEN, overlap_fraction=EEG_OVERLAP,
                   floor=POWER_FLOOR):
    """Log band powers of every row of `x` for every band, shape ``(rows, bands)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    for band in bands:
        if band.hi_hz >= fs / 2.0:
            raise SpectralError(
                f"band {band.name!r} upper edge {band.hi_hz} Hz is not below Nyquist ({fs / 2.0} Hz)")
    freqs, power = _welch_density(x, fs, int(segment_len), overlap_fraction)
    df = freqs[1] - freqs[0]
    out = np.empty((x.shape[0], len(bands)))
    for j, band in enumerate(bands):
        mask = (freqs >= band.lo_hz) & (freqs < band.hi_hz)
        out[:, j] = np.log(power[:, mask].sum(axis=-1) * df + floor)
    return out


def log_bandpower(x, fs, band: BandDefinition, segment_len=EEG_SEGMENT_LEN,
                  overlap_fraction=EEG_OVERLAP, floor=POWER_FLOOR):
    """Natural log of the Welch band power of `x`, floored at `floor`."""
    if band.hi_hz >= fs / 2.0:
        raise SpectralError(
            f"band {band.name!r} upper edge {band.hi_hz} Hz is not below Nyquist ({fs / 2.0} Hz)")
    psd = welch_psd(x, fs, segment_len, overlap_fraction)
    return float(np.log(band_power(psd, band) + floor))


def coherence_segment_len(n):
    """Segment length used for trial-series coherence: min(32, n // 2)."""
    return min(COHERENCE_MAX_SEGMENT, int(n) // 2)


def _msc_from_spectra(sx, sy):
    pxx = np.mean(np.abs(sx) ** 2, axis=-2)
    pyy = np.mean(np.abs(sy) ** 2, axis=-2)
    pxy = np.mean(np.conj(sx) * sy, axis=-2)
    denom = pxx * pyy
    with np.errstate(invalid="ignore", divide="ignore"):
        msc = np.where(denom > 0, np.abs(pxy) ** 2 / denom, 0.0)
    return np.clip(msc, 0.0, 1.0)


def magnitude_squared_coherence(x, y, segment_len=None, overlap_fraction=COHERENCE_OVERLAP):
    """Welch magnitude-squared coherence between `x` and `y`.

    Leading axes of `x` and `y` broadcast, so a stack of permuted copies of `x`
    can be compared against a single `y` in one call.

    Returns
    -------
    msc : ndarray
        Coherence per frequency bin (last axis), in [0, 1].
    mean_msc : float or ndarray
        Unweighted mean of `msc` over all bins except DC.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise SpectralError(f"length mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    n = x.shape[-1]
    if segment_len is None:
        segment_len = coherence_segment_len(n)
    segment_len = int(segment_len)
    if segment_len < 2:
        raise SpectralError(f"series of length {n} is too short for coherence")
    n_segs = _segment_starts(n, segment_len, overlap_fraction).size
    if n_segs < 2:
        raise SpectralError(
            f"coherence needs at least 2 segments; length {n} with segment {segment_len} gives {n_segs}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise SpectralError("series contains non-finite values")

    sx, _ = _segment_spectra(x, segment_len, overlap_fraction)
    sy, _ = _segment_spectra(y, segment_len, overlap_fraction)
    msc = _msc_from_spectra(sx, sy)
    mean_msc = msc[..., 1:].mean(axis=-1)
    if np.ndim(mean_msc) == 0:
        mean_msc = float(mean_msc)
    return msc, mean_msc
