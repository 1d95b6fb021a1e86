"""Time-windowed capacitated routing with density-based decomposition.

The package solves open-route CVRPTW instances three ways: one
monolithic solve, one solve per density cluster, and one solve per
recursively size-capped cluster, sharing a single vehicle pool.
"""

from .bench import (
    BenchRecord,
    BudgetConfig,
    GeneratorConfig,
    Region,
    RunStatus,
    WindowStyle,
    export_csv,
    export_geojson,
    generate_instance,
    parse_csv,
    run_benchmark,
    summarise,
)
from .clusterer import (
    Cluster,
    ClusterConfig,
    ClusterSet,
    Feasibility,
    NoSolutionFoundError,
    RecursionLimitError,
    binary_search_clusters,
    cluster_order,
    recursive_dbscan,
)
from .dbscan import ClusterLabels, DbscanParams, EmptyInputError, dbscan, pairwise_meters, region_query
from .geo import GeoPoint, NegativeRadiusError, haversine_distance, meters_to_radians
from .model import (
    Depot,
    InfeasibleSequenceError,
    InvalidInstanceError,
    ProblemInstance,
    Route,
    RoutePlan,
    StopVisit,
    TimeWindow,
    TravelModel,
    UnknownWaypointError,
    Vehicle,
    Violation,
    ViolationKind,
    Waypoint,
    evaluate_objective,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    load_plan,
    plan_from_dict,
    plan_to_dict,
    propagate_schedule,
    save_instance,
    save_plan,
    validate_solution,
)
from .pipeline import PipelineResult, Strategy, optimise_clusters, run_strategy
from .solver import (
    DistanceMatrix,
    FirstSolution,
    InfeasibleError,
    SolverParams,
    build_matrix,
    local_search,
    path_cheapest_arc,
    solve_cvrptw,
)

__version__ = "0.1.0"

__all__ = [
    "BenchRecord",
    "BudgetConfig",
    "Cluster",
    "ClusterConfig",
    "ClusterLabels",
    "ClusterSet",
    "DbscanParams",
    "Depot",
    "DistanceMatrix",
    "EmptyInputError",
    "Feasibility",
    "FirstSolution",
    "GeneratorConfig",
    "GeoPoint",
    "InfeasibleError",
    "InfeasibleSequenceError",
    "InvalidInstanceError",
    "NegativeRadiusError",
    "NoSolutionFoundError",
    "PipelineResult",
    "ProblemInstance",
    "RecursionLimitError",
    "Region",
    "Route",
    "RoutePlan",
    "RunStatus",
    "SolverParams",
    "StopVisit",
    "Strategy",
    "TimeWindow",
    "TravelModel",
    "UnknownWaypointError",
    "Vehicle",
    "Violation",
    "ViolationKind",
    "Waypoint",
    "WindowStyle",
    "binary_search_clusters",
    "build_matrix",
    "cluster_order",
    "dbscan",
    "evaluate_objective",
    "export_csv",
    "export_geojson",
    "generate_instance",
    "haversine_distance",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "load_plan",
    "local_search",
    "meters_to_radians",
    "optimise_clusters",
    "pairwise_meters",
    "parse_csv",
    "path_cheapest_arc",
    "plan_from_dict",
    "plan_to_dict",
    "propagate_schedule",
    "recursive_dbscan",
    "region_query",
    "run_benchmark",
    "run_strategy",
    "save_instance",
    "save_plan",
    "solve_cvrptw",
    "summarise",
    "validate_solution",
]
