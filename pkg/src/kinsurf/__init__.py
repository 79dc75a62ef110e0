"""Kinematic surface fitting of oriented point clouds."""
from .cloud import NormalizationTransform, PointCloud
from .errors import *  # noqa: F401,F403
from .features import (
    CoreLineConfig,
    CriticalClass,
    ParallelMode,
    classify_critical_point,
    extract_core_lines,
    projection_metric,
)
from .field import (
    FieldParams,
    Order,
    Polyline,
    PolylineKind,
    axis_of_rotation,
    convergence_point_first_order,
    convergence_point_second_order,
    eval_velocity,
    recenter_first_order,
    streamline_closed_form,
    streamline_integrate,
    velocity_jacobian,
)
from .fitting import FitConfig, FitReport, build_forms, distance, fit
from .formats import export_polylines, load_cloud, read_polylines, save_cloud, select_seed
from .robust import e_step, m_step_nu, m_step_sigma, robust_fit
from .synthetic import ShapeKind, ShapeSpec, generate, merge_with_outlier

__version__ = "0.1.0"
