"""Counting closed geodesics on ellipsoids, surfaces of revolution, and
conformally perturbed round spheres.

The pipeline runs census -> stability analysis -> iterate weights ->
windowed counts, plus branch continuation along one-parameter metric
families with bifurcation-event detection and count-invariance checks.
"""

from .geometry import BandExitError, GeometryError, MetricSpec
from .loops import DiscreteLoop
from .solver import (
    Census,
    CensusEntry,
    GeodesicResult,
    RefineError,
    StallError,
    find_all,
    refine_to_geodesic,
)
from .jacobi import (
    JacobiReport,
    index_nullity,
    jacobi_report,
    monodromy,
    sector_decomposition,
)
from .weights import (
    AmbiguousWeight,
    CountTable,
    NotSuperRigid,
    SpectrumCollision,
    WeightRecord,
    build_count_table,
    count_function,
    degenerate_weight,
    set_weight,
    weight,
)
from .continuation import (
    BifurcationEvent,
    BranchResult,
    MetricPath,
    UnresolvedClusterError,
    continue_branch,
    fit_normal_form,
    metric_deformation_pairing,
    spawn_doubled_branch,
    verify_invariance,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousWeight",
    "BandExitError",
    "BifurcationEvent",
    "BranchResult",
    "Census",
    "CensusEntry",
    "CountTable",
    "DiscreteLoop",
    "GeodesicResult",
    "GeometryError",
    "JacobiReport",
    "MetricPath",
    "MetricSpec",
    "NotSuperRigid",
    "RefineError",
    "SpectrumCollision",
    "StallError",
    "UnresolvedClusterError",
    "WeightRecord",
    "build_count_table",
    "continue_branch",
    "count_function",
    "degenerate_weight",
    "find_all",
    "fit_normal_form",
    "index_nullity",
    "jacobi_report",
    "metric_deformation_pairing",
    "monodromy",
    "refine_to_geodesic",
    "sector_decomposition",
    "set_weight",
    "spawn_doubled_branch",
    "verify_invariance",
    "weight",
]
