"""mfglab: a numerical laboratory for mean field games with small common noise.

The package solves a linear-convex mean field game three ways and measures
how the solutions relate as the common-noise intensity eps shrinks:

* :mod:`mfglab.mfg0` — coupled HJB/Fokker-Planck grid solver for the game
  without common noise, including sub-games started at arbitrary (s, m).
* :mod:`mfglab.eps_tree` — the game with common noise discretized on a
  binomial tree of conditional measure flows.
* :mod:`mfglab.variational` — the linear first-order correction process
  driven by the common noise, integrated forward through its decoupling.

:mod:`mfglab.lq_oracle` supplies closed forms for the linear-quadratic
cost family used as ground truth, :mod:`mfglab.analysis` turns the
asymptotic statements into measured log-log slopes, and :mod:`mfglab.cli`
is the command-line surface.
"""

from .errors import (
    AssumptionError,
    ConfigurationError,
    ConvergenceError,
    DomainError,
    MfgError,
)

__version__ = "0.1.0"

__all__ = [
    "MfgError",
    "ConfigurationError",
    "DomainError",
    "ConvergenceError",
    "AssumptionError",
    "__version__",
]
