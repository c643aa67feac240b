"""Shared synthetic-signal builders for the test suite."""

import numpy as np
import pytest

from pulsestress.features import BeatSeries


def pulse_train(bpm: float, duration_s: float = 60.0, fs: int = 64,
                width: float = 2.5, offset: int = 12):
    """Noiseless PPG-like pulse train with one Gaussian bump per beat.

    Beats are centered on the sample grid (so the true peak index is exact)
    and kept away from the segment edges so every true peak is an interior
    local maximum.

    Returns:
        (samples, true_peak_indices): zero-mean signal and the exact centers.
    """
    period = fs * 60.0 / bpm
    n = int(round(duration_s * fs))
    t = np.arange(n)
    x = np.zeros(n)
    centers = []
    k = 0
    while True:
        center = int(round(offset + k * period))
        if center >= n - 2:
            break
        centers.append(center)
        x += np.exp(-0.5 * ((t - center) / width) ** 2)
        k += 1
    return x - x.mean(), np.asarray(centers)


def beats_from_ibis(ibi_ms, fs: int = 64, n_samples: int = 3840) -> BeatSeries:
    """BeatSeries carrying exactly the given IBI values.

    Peak indices are the cumulative beat times rounded to the grid; the
    time-domain features only read ibi_ms, so the stated intervals are used
    verbatim.
    """
    ibi_ms = np.asarray(ibi_ms, dtype=np.float64)
    times_s = np.concatenate(([0.0], np.cumsum(ibi_ms) / 1000.0))
    peaks = np.round(times_s * fs).astype(np.int64)
    return BeatSeries(peak_indices=peaks, ibi_ms=ibi_ms, fs=fs, n_samples=n_samples)


def modulated_beats(base_ms: float = 1000.0, amp_ms: float = 100.0,
                    f_mod: float = 0.1, duration_s: float = 60.0,
                    fs: int = 64) -> BeatSeries:
    """Beat series whose IBIs oscillate sinusoidally at f_mod Hz."""
    times = [0.0]
    while times[-1] < duration_s:
        ibi_s = (base_ms + amp_ms * np.sin(2 * np.pi * f_mod * times[-1])) / 1000.0
        times.append(times[-1] + ibi_s)
    idx = np.round(np.asarray(times[:-1]) * fs).astype(np.int64)
    ibi_ms = np.diff(idx) / fs * 1000.0
    return BeatSeries(peak_indices=idx, ibi_ms=ibi_ms, fs=fs,
                      n_samples=int(duration_s * fs))


def write_subject_csv(path, bvp, labels, fs: int = 64) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fs={fs}\n")
        for v, label in zip(bvp, labels):
            fh.write(f"{v:.6f},{int(label)}\n")
    return str(path)


def synthetic_subject(seed: int, fs: int = 64, block_s: float = 75.0,
                      conditions=((1, 72), (2, 95), (3, 80))):
    """BVP stream with one pulse-train block per condition label."""
    rng = np.random.default_rng(seed)
    chunks, labels = [], []
    for raw_label, bpm in conditions:
        x, _ = pulse_train(bpm + rng.uniform(-2.0, 2.0), duration_s=block_s, fs=fs)
        x = x + 0.02 * rng.standard_normal(len(x)) + 0.4
        chunks.append(x)
        labels.append(np.full(len(x), raw_label))
    return np.concatenate(chunks), np.concatenate(labels)


@pytest.fixture
def subject_dir(tmp_path):
    """Five synthetic subjects in the neutral CSV format."""
    data = tmp_path / "data"
    data.mkdir()
    for i, sid in enumerate(["S2", "S3", "S4", "S5", "S6"]):
        bvp, labels = synthetic_subject(seed=i)
        write_subject_csv(data / f"{sid}.csv", bvp, labels)
    return data
