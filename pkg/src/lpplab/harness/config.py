"""Config loading and schema validation.

A run is fully determined by the config file plus the CLI seed, so the
schema is strict at the top level (typos in section names fail fast)
and the loader echoes the validated dict back for the manifest.
"""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

_schema = None


def _load_schema():
    global _schema
    if _schema is None:
        text = resources.files("lpplab.harness").joinpath("schema.json").read_text(
            encoding="utf-8"
        )
        _schema = json.loads(text)
    return _schema


def validate_config(cfg):
    """Raise ValueError with a readable location on any schema violation."""
    try:
        jsonschema.validate(cfg, _load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"config invalid at {where}: {exc.message}") from exc
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    return validate_config(cfg)
