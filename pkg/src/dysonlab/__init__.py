"""Numerical laboratory for the vector and matrix Dyson equations and the
random-matrix local laws built on them.

Submodules: ``vde`` (vector equation), ``mde`` (matrix equation),
``ensembles`` (sampling), ``locallaw`` (resolvent diagnostics), ``dbm``
(eigenvalue dynamics and gap statistics), ``io`` and ``cli``.
"""

from .errors import *  # noqa: F401,F403
from .vde import (
    DensityCurve,
    HalfPlanePoint,
    SolutionVector,
    SolverOpts,
    VarianceMatrix,
    msc,
    sc_density,
    solve_vde,
)
from .mde import SelfEnergySpec, SolutionMatrix, solve_mde
from .ensembles import EnsembleSpec, sample, sample_one
from .locallaw import ResolventBundle, error_report, hs_count, scaling_study
from .dbm import DbmState, dbm_simulate, gap_cdf_distance, normalized_gaps

__version__ = "0.1.0"

__all__ = [
    "DensityCurve",
    "HalfPlanePoint",
    "SolutionVector",
    "SolverOpts",
    "VarianceMatrix",
    "msc",
    "sc_density",
    "solve_vde",
    "SelfEnergySpec",
    "SolutionMatrix",
    "solve_mde",
    "EnsembleSpec",
    "sample",
    "sample_one",
    "ResolventBundle",
    "error_report",
    "hs_count",
    "scaling_study",
    "DbmState",
    "dbm_simulate",
    "gap_cdf_distance",
    "normalized_gaps",
]
