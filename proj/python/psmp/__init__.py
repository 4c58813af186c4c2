"""Python front end of the psmp library.

Configs may be passed as dicts or JSON text; see docs/config_schema.md.
"""

import json

from ._psmp import (
    FiniteMeasure,
    Kernel,
    NumericalError,
    TimeGrid,
    ValidationError,
    build_grid,
    counter_normal,
    dirac,
    duality_residual,
    emit_plotdata,
    identity_suites,
    measure_from_offsets,
    trapezoid_lebesgue,
)
from . import _psmp

__all__ = [
    "FiniteMeasure",
    "Kernel",
    "NumericalError",
    "TimeGrid",
    "ValidationError",
    "build_grid",
    "config_hash",
    "counter_normal",
    "dirac",
    "duality_residual",
    "emit_plotdata",
    "grad_check",
    "identity_suites",
    "lq_oracle",
    "measure_from_offsets",
    "normalize_config",
    "run",
    "trapezoid_lebesgue",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def normalize_config(config):
    return json.loads(_psmp.normalize_config(_text(config)))


def config_hash(config):
    return _psmp.config_hash(_text(config))


def run(config, out_dir=""):
    return _psmp.run(_text(config), out_dir)


def grad_check(config):
    J, se, rows = _psmp.grad_check(_text(config))
    return {"J": J, "se": se, "rows": rows}


def lq_oracle(config):
    return _psmp.lq_oracle(_text(config))
