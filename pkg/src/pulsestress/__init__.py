"""Wrist-PPG stress detection: filtering, HRV features, hybrid CNN, LOSO."""

__version__ = "0.1.0"

from . import dsp, errors, features, ingest, nn, report, train  # noqa: F401
