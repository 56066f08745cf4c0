"""Metric-aware rigidity estimates for discrete immersions on grids."""

__version__ = "0.1.0"

from .metric_algebra import (
    OrientedSubspace,
    SpdMetric,
    frobenius_norm,
    metric_distance,
    nearest_isometry,
    nearest_isometry_into_plane,
    oriented_complement,
    orientation_preserved_under_projection,
    project_onto,
    projection_error_bound_check,
    so_set_distance,
    spd_sqrt,
    subspace_distance,
)
from .fields import (
    DegenerateFieldError,
    EnergyReport,
    GridDomain,
    GridMap,
    ImmersionField,
    MetricField,
    ReferenceShape,
    TargetSpace,
    energies,
    snapshot_load,
    snapshot_save,
)
from .scenarios import ScenarioBundle, ScenarioSpec, build_metric, build_scenario
from .rigidity import (
    AsymptoticReport,
    RigidityReport,
    RotationField,
    TranslationModulus,
    asymptotic_sequence_run,
    euclidean_best_rotation,
    local_rigidity,
    metric_rigidity,
    multiscale_fit,
    tangent_plane_field,
    translation_modulus,
)
from .lemma_suite import LemmaConfig, PropertyResult, run_all
from .reports import RunManifest, write_csv, write_gnuplot_data, write_json_report

__all__ = [
    "AsymptoticReport",
    "DegenerateFieldError",
    "EnergyReport",
    "GridDomain",
    "GridMap",
    "ImmersionField",
    "LemmaConfig",
    "MetricField",
    "OrientedSubspace",
    "PropertyResult",
    "ReferenceShape",
    "RigidityReport",
    "RotationField",
    "RunManifest",
    "ScenarioBundle",
    "ScenarioSpec",
    "SpdMetric",
    "TargetSpace",
    "TranslationModulus",
    "asymptotic_sequence_run",
    "build_metric",
    "build_scenario",
    "energies",
    "euclidean_best_rotation",
    "frobenius_norm",
    "local_rigidity",
    "metric_distance",
    "metric_rigidity",
    "multiscale_fit",
    "nearest_isometry",
    "nearest_isometry_into_plane",
    "oriented_complement",
    "orientation_preserved_under_projection",
    "project_onto",
    "projection_error_bound_check",
    "run_all",
    "snapshot_load",
    "snapshot_save",
    "so_set_distance",
    "spd_sqrt",
    "subspace_distance",
    "tangent_plane_field",
    "translation_modulus",
    "write_csv",
    "write_gnuplot_data",
    "write_json_report",
    "__version__",
]
