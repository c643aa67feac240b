"""Convert WESAD per-subject pickles to the neutral subject CSV format.

Each WESAD subject ships as ``S<id>/S<id>.pkl`` holding the wrist BVP stream
(64 Hz) and the study-protocol label stream (700 Hz, values 0-7).  The
converter writes ``S<id>.csv``: a ``# fs=64`` header, then one ``bvp,label``
row per BVP sample, where the label is the 700 Hz value nearest in time to
the sample instant.  Nearest-timestamp mapping keeps boundary error below one
64 Hz sample, and downstream windowing discards mixed-label windows anyway.
"""

from __future__ import annotations

import os
import pickle

import numpy as np

OUTPUT_FS = 64
LABEL_FS = 700
MAX_LENGTH_SKEW_S = 1.0

#: Key paths probed for each stream, in order.  WESAD releases have shipped
#: with these exact names; anything else raises with the observed key set.
BVP_KEY_PATHS = (("signal", "wrist", "BVP"),)
LABEL_KEY_PATHS = (("label",), ("labels",))
SUBJECT_KEY_PATHS = (("subject",),)


class ConverterError(Exception):
    """Base class for conversion failures."""


class PickleSchemaError(ConverterError):
    """The pickle lacks an expected key or holds an unusable value."""


class IntegrityError(ConverterError):
    """Streams disagree with each other (length skew, bad label values)."""


def _dig(doc, key_path):
    node = doc
    for key in key_path:
        if not isinstance(node, dict) or key not in node:
            return None
        node = node[key]
    return node


def _probe(doc, key_paths, stream: str):
    for key_path in key_paths:
        value = _dig(doc, key_path)
        if value is not None:
            return value
    observed = sorted(doc.keys()) if isinstance(doc, dict) else type(doc).__name__
    raise PickleSchemaError(
        f"no {stream} under any of {['/'.join(p) for p in key_paths]}; "
        f"top-level keys: {observed}"
    )


def read_subject_pickle(pkl_path: str | os.PathLike) -> tuple[str, np.ndarray, np.ndarray]:
    """Load (subject_id, bvp_64hz, labels_700hz) from one WESAD pickle.

    Raises:
        PickleSchemaError: missing key paths or non-numeric payloads.
        IntegrityError: stream durations differ by more than one second, or
            labels fall outside 0..7.
    """
    pkl_path = os.fspath(pkl_path)
    with open(pkl_path, "rb") as fh:
        doc = pickle.load(fh, encoding="latin1")
    if not isinstance(doc, dict):
        raise PickleSchemaError(f"{pkl_path}: expected a dict, got {type(doc).__name__}")

    bvp = np.asarray(_probe(doc, BVP_KEY_PATHS, "wrist BVP"), dtype=np.float64).reshape(-1)
    labels = np.asarray(_probe(doc, LABEL_KEY_PATHS, "label stream")).reshape(-1)
    if bvp.size == 0 or labels.size == 0:
        raise PickleSchemaError(f"{pkl_path}: empty BVP or label stream")
    if not np.issubdtype(labels.dtype, np.number):
        raise PickleSchemaError(f"{pkl_path}: label stream is not numeric")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() > 7:
        raise IntegrityError(
            f"{pkl_path}: labels outside 0..7 (saw {labels.min()}..{labels.max()})"
        )

    skew = abs(bvp.size / OUTPUT_FS - labels.size / LABEL_FS)
    if skew > MAX_LENGTH_SKEW_S:
        raise IntegrityError(
            f"{pkl_path}: BVP spans {bvp.size / OUTPUT_FS:.1f}s but labels span "
            f"{labels.size / LABEL_FS:.1f}s (skew {skew:.1f}s > {MAX_LENGTH_SKEW_S}s)"
        )

    subject = _dig(doc, SUBJECT_KEY_PATHS[0])
    if subject is None:
        subject = os.path.splitext(os.path.basename(pkl_path))[0]
    subject = str(subject)
    if not subject.startswith("S"):
        subject = f"S{subject}"
    return subject, bvp, labels


def nearest_labels(labels_700hz: np.ndarray, n_out: int,
                   fs_out: int = OUTPUT_FS, fs_label: int = LABEL_FS) -> np.ndarray:
    """For each output sample instant, the label nearest in time."""
    idx = np.round(np.arange(n_out) * (fs_label / fs_out)).astype(np.int64)
    return labels_700hz[np.clip(idx, 0, len(labels_700hz) - 1)]


def convert_subject(pkl_path: str | os.PathLike, out_dir: str | os.PathLike) -> str:
    """Convert one pickle; returns the path of the written CSV.

    The CSV follows the neutral subject format byte-for-byte: header
    ``# fs=64``, LF line endings, BVP printed with 6 decimals.
    """
    subject, bvp, labels = read_subject_pickle(pkl_path)
    mapped = nearest_labels(labels, len(bvp))
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, f"{subject}.csv")
    tmp_path = out_path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fs={OUTPUT_FS}\n")
        for value, label in zip(bvp, mapped):
            fh.write(f"{value:.6f},{label}\n")
    os.replace(tmp_path, out_path)
    return out_path


def find_subject_pickles(wesad_root: str | os.PathLike) -> list[str]:
    """S*/S*.pkl paths under a WESAD root, sorted by subject directory."""
    wesad_root = os.fspath(wesad_root)
    found = []
    if not os.path.isdir(wesad_root):
        return found
    for name in sorted(os.listdir(wesad_root)):
        subdir = os.path.join(wesad_root, name)
        if not (name.startswith("S") and os.path.isdir(subdir)):
            continue
        pkl = os.path.join(subdir, f"{name}.pkl")
        if os.path.exists(pkl):
            found.append(pkl)
    return found


def convert_all(wesad_root: str | os.PathLike, out_dir: str | os.PathLike,
                subjects: list[str] | None = None):
    """Convert every subject under the root; failures are collected, not fatal.

    Args:
        wesad_root: directory holding S2/, S3/, ... subject folders.
        out_dir: destination for the CSVs.
        subjects: optional subject-id whitelist (e.g. ["S2", "S5"]).

    Returns:
        (written, failures): list of (subject_csv_path, n_rows, histogram)
        and list of (pickle_path, error_message).
    """
    pickles = find_subject_pickles(wesad_root)
    if subjects:
        wanted = set(subjects)
        pickles = [
            p for p in pickles
            if os.path.splitext(os.path.basename(p))[0] in wanted
        ]
    written, failures = [], []
    for pkl in pickles:
        try:
            out_path = convert_subject(pkl, out_dir)
        except (ConverterError, OSError, pickle.UnpicklingError) as exc:
            failures.append((pkl, str(exc)))
            continue
        labels = np.loadtxt(out_path, delimiter=",", skiprows=1, usecols=1,
                            dtype=np.int64, ndmin=1)
        histogram = {int(v): int(c) for v, c in zip(*np.unique(labels, return_counts=True))}
        written.append((out_path, len(labels), histogram))
    return written, failures
