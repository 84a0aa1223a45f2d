"""Projection of k-space curves onto hardware-feasible gradient waveforms."""

from .constraints import (
    AffineConstraintSet,
    AffineSolver,
    HardwareSpec,
    KinematicLimits,
    build_affine_set,
    factorize,
    feasibility_report,
    limits_from_hardware,
    project_affine,
)
from .curves import DiscreteCurve, NormMode, VectorSeries, lipschitz_constant, sample_at_rate
from .errors import (
    DependentConstraints,
    GradwaveError,
    InfeasibleConstraints,
    InvalidArgument,
    NumericFailure,
)
from .projector import ProjectionResult, ProjectionSettings, convergence_certificate, project_curve
from .reparam import SupportPath, build_support, compare_traversal, time_optimal_reparam
from .trajectories import TspSpec, tsp_tour

__version__ = "0.1.0"
