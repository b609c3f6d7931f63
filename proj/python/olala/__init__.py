"""Python bindings for the olala lattice-quantization FL simulator."""

import json

from ._core import (
    ConfigError,
    OlalaError,
    ProtocolError,
    UsageError,
    bits_accounting,
    build_lattice,
    config_keys,
    format_config,
    minimal_radius,
    nearest_point,
    run_checks,
    run_fl,
    sdq_roundtrip,
    second_moment,
)

__all__ = [
    "ConfigError",
    "OlalaError",
    "ProtocolError",
    "UsageError",
    "bits_accounting",
    "build_lattice",
    "check_reports",
    "config_keys",
    "format_config",
    "minimal_radius",
    "nearest_point",
    "run_checks",
    "run",
    "run_fl",
    "sdq_roundtrip",
    "second_moment",
]


def _text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_text(v) for v in value)
    return str(value)


def run(**settings):
    """run_fl with keyword settings, e.g. run(R=2, quantizer="fixed_hex")."""
    return run_fl({k: _text(v) for k, v in settings.items()})


def check_reports(seed=1, scale=1.0):
    """Parsed checks.json for the theory suite."""
    return json.loads(run_checks(seed, scale))
