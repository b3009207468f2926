"""Offline GPS map matching by force-directed trajectory perturbation."""

from .forces import ForceConfig, run_simulation
from .geo import GeoPoint, PlanePoint, Projection, make_projection, project, unproject
from .matcher import ForceDirectedMatcher
from .metrics import EvalReport, aggregate, avg_error, ground_truth_scores, length_index
from .roadnet import EdgePosition, RoadGraph, edges_within, load_graph, shortest_path
from .snapper import (
    MatchResult,
    SnapConfig,
    UnmatchableTrajectory,
    candidates,
    route_geometry,
    snap_route,
)
from .testbed import SynthCase, SynthConfig, gen_case, gen_grid, gen_route, sample_gps
from .trajectory import (
    CleanConfig,
    CleaningReport,
    GpsFix,
    Trajectory,
    clean,
    detect_anomalies,
    evaluation_filter,
    load_trajectories,
    polyline_length,
)

__version__ = "0.1.0"

__all__ = [
    "CleanConfig",
    "CleaningReport",
    "EdgePosition",
    "EvalReport",
    "ForceConfig",
    "ForceDirectedMatcher",
    "GeoPoint",
    "GpsFix",
    "MatchResult",
    "PlanePoint",
    "Projection",
    "RoadGraph",
    "SnapConfig",
    "SynthCase",
    "SynthConfig",
    "Trajectory",
    "UnmatchableTrajectory",
    "aggregate",
    "avg_error",
    "candidates",
    "clean",
    "detect_anomalies",
    "edges_within",
    "evaluation_filter",
    "gen_case",
    "gen_grid",
    "gen_route",
    "ground_truth_scores",
    "length_index",
    "load_graph",
    "load_trajectories",
    "make_projection",
    "polyline_length",
    "project",
    "route_geometry",
    "run_simulation",
    "sample_gps",
    "shortest_path",
    "snap_route",
    "unproject",
    "__version__",
]
