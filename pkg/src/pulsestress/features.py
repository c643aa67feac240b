"""Heartbeat detection and the 19 HRV features computed per segment.

Time-domain features come straight from the inter-beat intervals (IBIs).
Frequency-domain features come from a tachogram: the IBI series placed at
its beat timestamps, linearly resampled to an even 4 Hz grid, mean-subtracted,
Hann-windowed, and turned into a periodogram whose band integrals give the
ULF / LF / HF / UHF powers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientBeats, QualityTooLow

log = logging.getLogger(__name__)

#: HRV frequency bands in Hz.
BANDS = {
    "ulf": (0.01, 0.04),
    "lf": (0.04, 0.15),
    "hf": (0.15, 0.40),
    "uhf": (0.40, 1.00),
}

TACHOGRAM_FS = 4.0       # Hz, resampled IBI grid
PEAK_THRESHOLD_SD = 0.5  # minimum peak height in segment standard deviations
MAX_BPM = 220            # fixes the minimum peak spacing
MIN_BEATS = 10           # quality gate: fewer beats and the segment is dropped

FEATURE_NAMES = [
    "mu_hr", "sd_hr",
    "mu_hrv", "sd_hrv",
    "nn50", "pnn50",
    "rms_hrv",
    "p_ulf", "p_lf", "p_hf", "p_uhf",
    "lf_hf_ratio",
    "total_power",
    "rel_ulf", "rel_lf", "rel_hf", "rel_uhf",
    "lf_norm", "hf_norm",
]
N_FEATURES = len(FEATURE_NAMES)  # 19


@dataclass(frozen=True)
class BeatSeries:
    """Detected beats of one segment: peak sample indices and IBIs in ms."""

    peak_indices: np.ndarray  # strictly increasing ints
    ibi_ms: np.ndarray        # len == len(peak_indices) - 1, all > 0
    fs: float
    n_samples: int

    @property
    def n_beats(self) -> int:
        return len(self.peak_indices)

    @property
    def peak_times_s(self) -> np.ndarray:
        return self.peak_indices / self.fs


def min_peak_spacing(fs: float) -> int:
    """Minimum samples between peaks so the rate never exceeds MAX_BPM."""
    return int(fs * 60 // MAX_BPM)


def detect_peaks(samples, fs: float = 64.0) -> BeatSeries:
    """Find systolic peaks in one bandpass-filtered segment.

    Strict local maxima above 0.5 standard deviations are kept; when two
    maxima fall closer than the minimum spacing the larger survives.

    Args:
        samples: filtered, roughly zero-mean segment.
        fs: sampling rate in Hz.

    Raises:
        QualityTooLow: fewer than MIN_BEATS surviving peaks.
    """
    x = np.asarray(samples, dtype=np.float64)
    sd = float(x.std())
    if sd == 0.0 or len(x) < 3:
        raise QualityTooLow("flat or empty segment, no peaks")

    inner = x[1:-1]
    candidates = np.flatnonzero((inner > x[:-2]) & (inner > x[2:])) + 1
    candidates = candidates[x[candidates] > PEAK_THRESHOLD_SD * sd]
    if candidates.size == 0:
        raise QualityTooLow("no peaks above amplitude threshold")

    spacing = min_peak_spacing(fs)
    # Greedy suppression, tallest first; ties resolved by earlier index.
    by_height = candidates[np.argsort(-x[candidates], kind="stable")]
    kept: list[int] = []
    for idx in by_height:
        if all(abs(int(idx) - k) >= spacing for k in kept):
            kept.append(int(idx))
    peaks = np.sort(np.asarray(kept, dtype=np.int64))

    if len(peaks) < MIN_BEATS:
        raise QualityTooLow(
            f"only {len(peaks)} peaks detected (need {MIN_BEATS})"
        )
    ibi_ms = np.diff(peaks) / fs * 1000.0
    return BeatSeries(peak_indices=peaks, ibi_ms=ibi_ms, fs=fs, n_samples=len(x))


def time_domain_features(beats: BeatSeries) -> tuple:
    """Per-beat HR statistics and IBI-difference statistics.

    Returns:
        (mu_hr, sd_hr, mu_hrv, sd_hrv, nn50, pnn50, rms_hrv) where nn50 counts
        successive IBI differences over 50 ms, pnn50 is their percentage, and
        rms_hrv is the RMS of the successive differences (RMSSD).  Standard
        deviations use divisor n.
    """
    ibi = beats.ibi_ms
    if len(ibi) < 2:
        raise InsufficientBeats(f"need >= 2 inter-beat intervals, got {len(ibi)}")
    hr = 60000.0 / ibi
    diffs = np.diff(ibi)
    nn50 = int(np.count_nonzero(np.abs(diffs) > 50.0))
    pnn50 = 100.0 * nn50 / len(diffs)
    rms_hrv = float(np.sqrt(np.mean(diffs**2)))
    return (
        float(hr.mean()),
        float(hr.std()),
        float(ibi.mean()),
        float(ibi.std()),
        nn50,
        pnn50,
        rms_hrv,
    )


def _hann_periodogram(tachogram: np.ndarray, fs: float):
    """One-sided Hann-windowed periodogram of a mean-subtracted series."""
    x = tachogram - tachogram.mean()
    n = len(x)
    w = np.hanning(n)
    spectrum = np.fft.rfft(x * w)
    psd = (np.abs(spectrum) ** 2) / (fs * np.sum(w**2))
    psd[1:] *= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0  # Nyquist bin is not duplicated
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    return freqs, psd


def band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    """Trapezoidal integral of the PSD over [lo, hi], edges interpolated."""
    hi = min(hi, float(freqs[-1]))
    if hi <= lo:
        return 0.0
    inner = (freqs > lo) & (freqs < hi)
    xs = np.concatenate(([lo], freqs[inner], [hi]))
    ys = np.concatenate(
        ([np.interp(lo, freqs, psd)], psd[inner], [np.interp(hi, freqs, psd)])
    )
    return float(np.trapezoid(ys, xs))


def build_tachogram(beats: BeatSeries, fs_out: float = TACHOGRAM_FS):
    """Evenly resampled IBI series over the segment span.

    Each IBI is anchored at the timestamp of the beat that closes it; the
    4 Hz grid spans the whole segment with clamped interpolation at the ends.
    """
    if beats.n_beats < MIN_BEATS:
        raise InsufficientBeats(
            f"need >= {MIN_BEATS} beats for spectral features, got {beats.n_beats}"
        )
    anchor_t = beats.peak_times_s[1:]
    if anchor_t[-1] <= anchor_t[0]:
        raise InsufficientBeats("degenerate beat span")
    duration = beats.n_samples / beats.fs
    grid = np.arange(0.0, duration, 1.0 / fs_out)
    return grid, np.interp(grid, anchor_t, beats.ibi_ms)


def tachogram_band_powers(tachogram, fs: float = TACHOGRAM_FS) -> dict[str, float]:
    """ULF/LF/HF/UHF powers (ms^2) of an evenly sampled tachogram."""
    freqs, psd = _hann_periodogram(np.asarray(tachogram, dtype=np.float64), fs)
    return {name: band_power(freqs, psd, lo, hi) for name, (lo, hi) in BANDS.items()}


def spectral_features(beats: BeatSeries, fs: float = 64.0) -> tuple:
    """Band powers of the IBI tachogram plus derived ratios.

    Returns:
        (p_ulf, p_lf, p_hf, p_uhf, lf_hf_ratio, total_power,
         rel_ulf, rel_lf, rel_hf, rel_uhf, lf_norm, hf_norm)
        with powers in ms^2.  When the tachogram carries no power all the
        relative quantities are defined as 0; a zero HF power makes the
        LF/HF ratio 0 rather than infinite.
    """
    _, tach = build_tachogram(beats)
    powers = tachogram_band_powers(tach, TACHOGRAM_FS)
    total = sum(powers.values())

    if total > 0.0:
        rel = {name: powers[name] / total for name in BANDS}
    else:
        rel = {name: 0.0 for name in BANDS}
    lf, hf = powers["lf"], powers["hf"]
    if hf > 0.0:
        ratio = lf / hf
    else:
        ratio = 0.0
        if lf > 0.0:
            log.warning("zero HF power with nonzero LF; LF/HF ratio reported as 0")
    if lf + hf > 0.0:
        lf_norm = 100.0 * lf / (lf + hf)
        hf_norm = 100.0 * hf / (lf + hf)
    else:
        lf_norm = hf_norm = 0.0

    return (
        powers["ulf"], powers["lf"], powers["hf"], powers["uhf"],
        ratio, total,
        rel["ulf"], rel["lf"], rel["hf"], rel["uhf"],
        lf_norm, hf_norm,
    )


def extract_features(segment) -> np.ndarray:
    """Compute the 19-feature vector of one segment, in FEATURE_NAMES order.

    Args:
        segment: a dsp.Segment (only .samples is used).

    Raises:
        QualityTooLow / InsufficientBeats: segment fails the beat-count gate;
            the caller drops it.
    """
    beats = detect_peaks(segment.samples, fs=64.0)
    td = time_domain_features(beats)
    sd = spectral_features(beats, fs=64.0)
    vec = np.asarray(td + sd, dtype=np.float64)
    if vec.shape != (N_FEATURES,):
        raise InsufficientBeats(f"feature vector has shape {vec.shape}")
    return vec
