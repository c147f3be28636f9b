"""Reproducible experiment drivers around the library core.

Each experiment is a pure function from a validated config dict to a
report: tables destined for CSV, decay-fit records, and a list of
named pass/fail checks.  The CLI layer owns all file I/O, so runs are
deterministic given (config, seed) and easy to test in-process.
"""

from .config import load_config, validate_config
from .fitting import NOISE_FLOOR, DecayRecord, fit_decay
from .io import write_csv, write_manifest

__all__ = [
    "NOISE_FLOOR",
    "DecayRecord",
    "fit_decay",
    "load_config",
    "validate_config",
    "write_csv",
    "write_manifest",
]
