"""Bayesian two-step estimation for ODE models.

Configs may be given as JSON text or as a dict.
"""

import json as _json

from . import _core
from ._core import (
    Error,
    KnotVector,
    builtin_models,
    design_matrix,
    eval_basis,
    matrix_normal_posterior,
    midpoint_design,
    model_info,
    psi_solution,
    psi_spline,
    read_dataset,
    set_log_level,
    sigma2_posterior,
    coeff_posterior,
    solution,
    vector_field,
    write_dataset,
)

__version__ = _core.__version__

Error.category = property(lambda self: self.args[1] if len(self.args) > 1 else None)


def _cfg(config):
    if isinstance(config, str):
        return config
    return _json.dumps(config or {})


def canonical_config(config=None):
    return _core.canonical_config(_cfg(config))


def config_hash(config=None):
    return _core.config_hash(_cfg(config))


def simulate_data(config, n, replication=0):
    return _core.simulate_data(_cfg(config), n, replication)


def frequentist_two_step(config, x, Y):
    return _core.frequentist_two_step(_cfg(config), list(x), Y)


def bayes_interval(config, x, Y, seed=0):
    return _core.bayes_interval(_cfg(config), list(x), Y, seed)


def bootstrap_interval(config, x, Y, seed=0):
    return _core.bootstrap_interval(_cfg(config), list(x), Y, seed)


def run_study(config, jobs=1, checkpoint=""):
    """Returns (csv_text, metadata dict)."""
    csv, meta = _core.run_study(_cfg(config), jobs, checkpoint)
    return csv, _json.loads(meta)


def asymptotics(config, n, replication=0):
    return _core.asymptotics(_cfg(config), n, replication)
