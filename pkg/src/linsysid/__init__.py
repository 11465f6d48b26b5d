"""Least-squares identification of linear dynamical systems from one trajectory.

The package bundles the estimator, finite-sample upper bounds, minimax
lower-bound constructions and the small-ball / martingale machinery behind
them, each as an operation that can be checked numerically.
"""

__version__ = "0.1.0"

from .errors import LinsysidError  # noqa: F401
