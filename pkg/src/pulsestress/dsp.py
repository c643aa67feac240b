"""Bandpass filter design, zero-phase filtering, and sliding-window segmentation.

The band edges (0.7 Hz and 3.7 Hz by default) bracket resting heart rate
(about 40 BPM) and tachycardia (about 220 BPM).  Filtering is zero-phase
(forward-backward) because peak timestamps feed the inter-beat intervals
downstream and phase distortion would bias them; the price is a squared
magnitude response.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import sosfilt, sosfilt_zi

from .errors import FilterDesignError, SignalLengthError
from .ingest import DISCARD, WINDOW_SAMPLES, map_segment_label

DEFAULT_BAND = (0.7, 3.7)
DEFAULT_ORDER = 3


@dataclass(frozen=True)
class FilterCoefficients:
    """Cascade of second-order sections plus the design metadata.

    Each section is (b0, b1, b2, a1, a2) with a0 implied 1:

        H_i(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
    """

    sections: tuple[tuple[float, float, float, float, float], ...]
    fs: float
    f1: float
    f2: float
    order: int

    @property
    def n_poles(self) -> int:
        return 2 * len(self.sections)

    @property
    def n_zeros(self) -> int:
        return 2 * len(self.sections)

    def sos_array(self) -> np.ndarray:
        """Sections as a scipy-style (n, 6) array of [b0 b1 b2 1 a1 a2] rows."""
        rows = [(b0, b1, b2, 1.0, a1, a2) for b0, b1, b2, a1, a2 in self.sections]
        return np.asarray(rows, dtype=np.float64)

    def pole_magnitudes(self) -> np.ndarray:
        """|pole| per section denominator, found by root-finding."""
        mags = []
        for _, _, _, a1, a2 in self.sections:
            roots = np.roots([1.0, a1, a2])
            mags.extend(np.abs(roots))
        return np.asarray(mags)

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response H(e^{j 2 pi f / fs}) at the given frequencies."""
        freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        z_inv = np.exp(-2j * np.pi * freqs_hz / self.fs)
        h = np.ones_like(z_inv)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z_inv + b2 * z_inv**2) / (1.0 + a1 * z_inv + a2 * z_inv**2)
        return h


def _butterworth_prototype_poles(order: int) -> list[complex]:
    # Left-half-plane poles of the unit-cutoff analog Butterworth lowpass.
    return [
        cmath.exp(1j * math.pi * (2 * k + order - 1) / (2 * order))
        for k in range(1, order + 1)
    ]


def _lowpass_to_bandpass(poles: list[complex], w0: float, bw: float) -> list[complex]:
    # s -> (s^2 + w0^2) / (bw * s): each prototype pole yields two bandpass poles.
    out: list[complex] = []
    for p in poles:
        pb = p * bw
        disc = cmath.sqrt(pb * pb - 4.0 * w0 * w0)
        out.append((pb + disc) / 2.0)
        out.append((pb - disc) / 2.0)
    return out


def _pair_poles(z_poles: list[complex]) -> list[tuple[complex, complex]]:
    # Group the digital poles into conjugate (or real) pairs, one per section.
    reals = sorted([p.real for p in z_poles if abs(p.imag) < 1e-10])
    uppers = sorted(
        [p for p in z_poles if p.imag >= 1e-10], key=lambda p: (abs(p), p.real)
    )
    pairs: list[tuple[complex, complex]] = [(p, p.conjugate()) for p in uppers]
    for lo, hi in zip(reals[0::2], reals[1::2]):
        pairs.append((complex(lo), complex(hi)))
    # Near-unit-magnitude sections last, so early sections attenuate first.
    pairs.sort(key=lambda pq: (max(abs(pq[0]), abs(pq[1])), pq[0].real))
    return pairs


def design_bandpass(
    fs: float,
    f1: float = DEFAULT_BAND[0],
    f2: float = DEFAULT_BAND[1],
    order: int = DEFAULT_ORDER,
) -> FilterCoefficients:
    """Design a digital Butterworth bandpass filter as second-order sections.

    Route: analog Butterworth lowpass prototype -> lowpass-to-bandpass
    transform -> bilinear transform with the band edges prewarped so the
    digital filter hits f1 and f2 exactly.

    Args:
        fs: sampling rate in Hz.
        f1: lower cutoff in Hz (0 < f1 < f2).
        f2: upper cutoff in Hz (f2 < fs / 2).
        order: prototype order; the bandpass has 2 * order poles.

    Raises:
        FilterDesignError: cutoffs outside (0, fs/2) or not increasing.
    """
    if f1 <= 0:
        raise FilterDesignError(f"lower cutoff must be positive, got {f1}")
    if f2 >= fs / 2:
        raise FilterDesignError(f"upper cutoff {f2} Hz must lie below Nyquist {fs / 2} Hz")
    if f2 <= f1:
        raise FilterDesignError(f"cutoffs must satisfy f1 < f2, got {f1} >= {f2}")
    if order < 1:
        raise FilterDesignError(f"order must be >= 1, got {order}")

    c = 2.0 * fs  # bilinear constant 2/T
    w1 = c * math.tan(math.pi * f1 / fs)  # prewarped analog band edges
    w2 = c * math.tan(math.pi * f2 / fs)
    w0 = math.sqrt(w1 * w2)
    bw = w2 - w1

    a_poles = _lowpass_to_bandpass(_butterworth_prototype_poles(order), w0, bw)
    # Analog bandpass: `order` zeros at s=0, gain bw**order (unit-gain prototype).
    z_poles = [(c + p) / (c - p) for p in a_poles]
    # Bilinear gain: k_a * prod(c - zeros) / prod(c - poles); zeros all at 0.
    denom = complex(1.0)
    for p in a_poles:
        denom *= c - p
    gain = (bw**order) * (c**order / denom).real

    pairs = _pair_poles(z_poles)
    if len(pairs) != order:
        raise FilterDesignError("internal pairing error: pole count mismatch")
    section_gain = gain ** (1.0 / order)
    sections = []
    for p, q in pairs:
        a1 = -(p + q).real
        a2 = (p * q).real
        # Each section takes one zero at z=+1 and one at z=-1: b = g*(1, 0, -1).
        sections.append((section_gain, 0.0, -section_gain, a1, a2))

    coeffs = FilterCoefficients(
        sections=tuple(sections), fs=fs, f1=f1, f2=f2, order=order
    )
    if np.any(coeffs.pole_magnitudes() >= 1.0):
        raise FilterDesignError(
            "designed filter is unstable; cutoffs too extreme for this rate"
        )
    return coeffs


def filter_zero_phase(coeffs: FilterCoefficients, signal) -> np.ndarray:
    """Apply the filter forward and backward for a zero-phase result.

    The input is reflect-padded at both ends by 3 * (poles + zeros) samples,
    run through all sections forward, reversed, run forward again, reversed,
    and trimmed back to the input length.  Each pass starts from steady-state
    initial conditions scaled to the first padded sample, so constant inputs
    produce exact zeros instead of edge transients.

    Raises:
        SignalLengthError: input not longer than 6x the padding length.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise SignalLengthError("expected a 1-D signal")
    padlen = 3 * (coeffs.n_poles + coeffs.n_zeros)
    if len(x) <= 6 * padlen:
        raise SignalLengthError(
            f"signal length {len(x)} too short; need more than {6 * padlen} samples"
        )
    sos = coeffs.sos_array()
    zi = sosfilt_zi(sos)
    xp = np.pad(x, padlen, mode="reflect")
    y, _ = sosfilt(sos, xp, zi=zi * xp[0])
    y = y[::-1]
    y, _ = sosfilt(sos, y, zi=zi * y[0])
    y = y[::-1]
    return y[padlen:-padlen]


@dataclass(frozen=True)
class Segment:
    """One 60 s window of filtered samples with its task label."""

    subject_id: str
    start_index: int
    samples: np.ndarray = field(repr=False)
    label: object  # TwoClassLabel or ThreeClassLabel

    def __post_init__(self):
        if len(self.samples) != WINDOW_SAMPLES:
            raise SignalLengthError(
                f"segment must hold {WINDOW_SAMPLES} samples, got {len(self.samples)}"
            )


def window_count(n_samples: int, window: int = WINDOW_SAMPLES, stride: int = 320) -> int:
    """Number of sliding windows: floor((N - window) / stride) + 1, or 0."""
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def segment_stream(
    signal,
    labels,
    fs: int = 64,
    window_s: int = 60,
    stride_s: int = 5,
    task: str = "3class",
    subject_id: str = "",
) -> list[Segment]:
    """Cut a filtered stream into 60 s windows sliding by 5 s.

    Windows start at offsets 0, stride, 2*stride, ...; a window is kept only
    when all its raw labels are identical and map to a task class.

    Args:
        signal: filtered BVP stream.
        labels: raw labels, same length as the signal.
        fs: samples per second.
        window_s / stride_s: window and slide lengths in seconds.
        task: "2class" or "3class".
        subject_id: carried through to the emitted segments.

    Returns:
        Kept segments in stream order (possibly empty).
    """
    x = np.asarray(signal, dtype=np.float64)
    y = np.asarray(labels)
    if len(x) != len(y):
        raise SignalLengthError(
            f"signal length {len(x)} != label length {len(y)}"
        )
    window = window_s * fs
    stride = stride_s * fs
    segments: list[Segment] = []
    for start in range(0, len(x) - window + 1, stride):
        mapped = map_segment_label(y[start:start + window], task)
        if mapped is DISCARD:
            continue
        segments.append(
            Segment(
                subject_id=subject_id,
                start_index=start,
                samples=x[start:start + window].copy(),
                label=mapped,
            )
        )
    return segments
