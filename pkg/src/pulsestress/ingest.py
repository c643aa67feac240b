"""Subject loading and label mapping.

One subject is one CSV file ``S<id>.csv``: a header line ``# fs=64`` followed
by one ``bvp,label`` row per sample.  Raw condition labels are integers 0-7;
only 1 (baseline), 2 (stress) and 3 (amusement) describe task conditions,
everything else (transient, meditation, ...) is non-task and discarded at
segmentation time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DataFormatError, ValidationError

REQUIRED_FS = 64
WINDOW_SAMPLES = 3840  # 60 s at 64 Hz

# Raw WESAD-style condition codes used by the task mappings.
RAW_BASELINE = 1
RAW_STRESS = 2
RAW_AMUSEMENT = 3


class ThreeClassLabel(Enum):
    BASELINE = 0
    STRESS = 1
    AMUSEMENT = 2


class TwoClassLabel(Enum):
    NON_STRESS = 0
    STRESS = 1


#: Sentinel returned for windows that do not map to a task class.
DISCARD = None


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's raw BVP stream with per-sample condition labels."""

    subject_id: str
    sample_rate: int
    bvp: np.ndarray     # float64, shape (n,)
    labels: np.ndarray  # int64, shape (n,), values 0..7

    def __post_init__(self):
        if len(self.bvp) != len(self.labels):
            raise ValidationError(
                f"{self.subject_id}: bvp length {len(self.bvp)} != "
                f"label length {len(self.labels)}"
            )
        if self.sample_rate != REQUIRED_FS:
            raise ValidationError(
                f"{self.subject_id}: unsupported sample rate {self.sample_rate} "
                f"(expected {REQUIRED_FS})"
            )
        bad = np.flatnonzero((self.labels < 0) | (self.labels > 7))
        if bad.size:
            raise ValidationError(
                f"{self.subject_id}: label {self.labels[bad[0]]} out of range 0..7 "
                f"at sample {bad[0]}"
            )

    def __len__(self) -> int:
        return len(self.bvp)


def load_subject(path: str | os.PathLike) -> SubjectRecord:
    """Load one neutral-format subject CSV.

    Args:
        path: file named ``S<id>.csv`` whose first line is ``# fs=<rate>``.

    Returns:
        A validated SubjectRecord.

    Raises:
        DataFormatError: missing/garbled header, no data rows, or a row that
            does not parse.
        ValidationError: sample rate != 64 or a label outside 0..7.
    """
    path = os.fspath(path)
    subject_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# fs="):
            raise DataFormatError(f"{path}: first line must be '# fs=<rate>', got {header!r}")
        try:
            fs = int(header[len("# fs="):])
        except ValueError as exc:
            raise DataFormatError(f"{path}: cannot parse sample rate from {header!r}") from exc

        bvp: list[float] = []
        labels: list[int] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 'bvp,label', got {line!r}"
                )
            try:
                bvp.append(float(parts[0]))
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric bvp field {parts[0]!r}"
                ) from exc
            try:
                label = int(parts[1])
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: non-integer label field {parts[1]!r}"
                ) from exc
            if not 0 <= label <= 7:
                raise ValidationError(
                    f"{path}:{lineno}: label {label} out of range 0..7"
                )
            labels.append(label)

    if not bvp:
        raise DataFormatError(f"{path}: no data rows")
    return SubjectRecord(
        subject_id=subject_id,
        sample_rate=fs,
        bvp=np.asarray(bvp, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
    )


def write_subject(record: SubjectRecord, path: str | os.PathLike) -> str:
    """Write a SubjectRecord in the neutral CSV format (6-decimal BVP values)."""
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fs={record.sample_rate}\n")
        for value, label in zip(record.bvp, record.labels):
            fh.write(f"{value:.6f},{label}\n")
    return path


def map_segment_label(raw_labels: np.ndarray, task: str):
    """Map one window of raw labels to a task label, or DISCARD.

    A window maps only if all its raw labels are identical and name a task
    condition (1, 2 or 3).  Mixed windows and non-task conditions are
    discarded, which keeps class boundaries clean.

    Args:
        raw_labels: window of raw labels, length 3840.
        task: "2class" or "3class".

    Returns:
        A TwoClassLabel / ThreeClassLabel, or DISCARD (None).
    """
    raw_labels = np.asarray(raw_labels)
    if len(raw_labels) != WINDOW_SAMPLES:
        raise ValidationError(
            f"window must hold exactly {WINDOW_SAMPLES} labels, got {len(raw_labels)}"
        )
    first = int(raw_labels[0])
    if not np.all(raw_labels == first):
        return DISCARD
    if task == "3class":
        return {
            RAW_BASELINE: ThreeClassLabel.BASELINE,
            RAW_STRESS: ThreeClassLabel.STRESS,
            RAW_AMUSEMENT: ThreeClassLabel.AMUSEMENT,
        }.get(first, DISCARD)
    if task == "2class":
        if first == RAW_STRESS:
            return TwoClassLabel.STRESS
        if first in (RAW_BASELINE, RAW_AMUSEMENT):
            return TwoClassLabel.NON_STRESS
        return DISCARD
    raise ValidationError(f"unknown task {task!r} (expected '2class' or '3class')")


def n_classes_for(task: str) -> int:
    if task == "3class":
        return 3
    if task == "2class":
        return 2
    raise ValidationError(f"unknown task {task!r} (expected '2class' or '3class')")


def class_names_for(task: str) -> list[str]:
    if task == "3class":
        return [label.name.lower() for label in ThreeClassLabel]
    return [label.name.lower() for label in TwoClassLabel]
