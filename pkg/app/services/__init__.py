"""
Services package for the identification pipeline.

This package contains one module per concern: the physics layer, the
coefficient network and its training, data generation, MPC racing and
evaluation.
"""

from .run_context import RunContext
from .dynamics import SingleTrackModel
from .network import CoefficientNetwork
from .estimators import CoefficientEstimator, GroundTruthEstimator, NetworkEstimator, load_estimator
from .mpc import MpcSolver

__all__ = [
    'RunContext',
    'SingleTrackModel',
    'CoefficientNetwork',
    'CoefficientEstimator',
    'GroundTruthEstimator',
    'NetworkEstimator',
    'load_estimator',
    'MpcSolver',
]
