"""WESAD pickle to neutral subject-CSV converter."""

__version__ = "0.1.0"

from .convert import (
    ConverterError,
    IntegrityError,
    PickleSchemaError,
    convert_all,
    convert_subject,
    nearest_labels,
    read_subject_pickle,
)

__all__ = [
    "ConverterError",
    "IntegrityError",
    "PickleSchemaError",
    "convert_all",
    "convert_subject",
    "nearest_labels",
    "read_subject_pickle",
]
