"""Cluster-then-route orchestration.

A clustered strategy carves the waypoint set into groups, then solves one
sub-instance per group against the shrinking pool of still-free vehicles.
Larger clusters go first so they see the widest vehicle choice; the order is
fully deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .clusterer import (
    ClusterConfig,
    ClusterSet,
    Feasibility,
    NoSolutionFoundError,
    binary_search_clusters,
    cluster_order,
    recursive_dbscan,
)
from .model import (
    ProblemInstance,
    Route,
    RoutePlan,
    StopVisit,
    evaluate_objective,
    validate_solution,
)
from .solver import InfeasibleError, SolverParams, solve_cvrptw


class Strategy(str, Enum):
    MONOLITHIC = "MONOLITHIC"
    DBSCAN = "DBSCAN"
    RECURSIVE_DBSCAN = "RECURSIVE_DBSCAN"


@dataclass(frozen=True)
class PipelineResult:
    plan: RoutePlan
    wall_time_ms: float
    total_distance: float
    busy_vehicle_count: int
    cluster_count: int
    peak_cluster_size: int


def _sub_instance(
    instance: ProblemInstance, member_indices: list[int], free_vehicle_ids: list[int]
) -> tuple[ProblemInstance, dict[int, int], dict[int, int]]:
    """Build a dense-id instance over one cluster and the free fleet.

    Returns the instance plus maps from the compact waypoint and vehicle ids
    back to the originals.
    """
    waypoints = []
    wp_back: dict[int, int] = {}
    for new_id, idx in enumerate(sorted(member_indices), start=1):
        original = instance.waypoints[idx]
        wp_back[new_id] = original.id
        waypoints.append(replace(original, id=new_id))
    vehicles = []
    veh_back: dict[int, int] = {}
    for new_id, original_id in enumerate(sorted(free_vehicle_ids), start=1):
        veh_back[new_id] = original_id
        vehicles.append(replace(instance.vehicle(original_id), id=new_id))
    sub = ProblemInstance(instance.depot, tuple(waypoints), tuple(vehicles), instance.travel)
    return sub, wp_back, veh_back


def optimise_clusters(
    clusters: ClusterSet,
    instance: ProblemInstance,
    params: Optional[SolverParams] = None,
) -> RoutePlan:
    """Solve every cluster in order against the shared vehicle pool.

    Vehicles used by one cluster are unavailable to the rest.  Raises
    NoSolutionFoundError if the pool runs dry or any sub-solve is infeasible.
    """
    params = params or SolverParams()
    free = [v.id for v in instance.vehicles]
    routes: list[Route] = []
    for cluster_index in cluster_order(clusters, instance.depot.location):
        cluster = clusters.clusters[cluster_index]
        if not free:
            raise NoSolutionFoundError(
                f"vehicle pool exhausted before cluster of size {cluster.size}"
            )
        sub, wp_back, veh_back = _sub_instance(instance, list(cluster.members), free)
        try:
            sub_plan, busy = solve_cvrptw(sub, params)
        except InfeasibleError as exc:
            raise NoSolutionFoundError(
                f"sub-solve infeasible for cluster of size {cluster.size}: {exc}"
            ) from exc
        for sub_route in sub_plan.routes:
            stops = tuple(
                StopVisit(wp_back[s.waypoint_id], s.arrival_time, s.departure_time)
                for s in sub_route.stops
            )
            routes.append(Route(veh_back[sub_route.vehicle_id], sub_route.depot_pickup_time, stops))
        busy_original = {veh_back[b] for b in busy}
        free = [v for v in free if v not in busy_original]
    return RoutePlan(tuple(routes))


def run_strategy(
    instance: ProblemInstance,
    strategy: Strategy,
    cluster_config: Optional[ClusterConfig] = None,
    params: Optional[SolverParams] = None,
) -> PipelineResult:
    """Run one solve strategy end to end and report plan plus metrics.

    Wall time covers clustering and routing together.  On failure the raised
    NoSolutionFoundError carries the elapsed wall time.
    """
    cluster_config = cluster_config or ClusterConfig()
    params = params or SolverParams()
    started = time.perf_counter()
    try:
        if strategy is Strategy.MONOLITHIC or instance.n_waypoints == 0:
            plan, busy = solve_cvrptw(instance, params)
            cluster_count = 0
            peak = 0
        else:
            points = [w.location for w in instance.waypoints]
            if strategy is Strategy.DBSCAN:
                clusters, _ = binary_search_clusters(
                    points, cluster_config, Feasibility.MAX_SIZE_CAP
                )
            else:
                clusters = recursive_dbscan(points, cluster_config)
            plan = optimise_clusters(clusters, instance, params)
            busy = plan.busy_vehicles
            cluster_count = len(clusters.clusters)
            peak = max(clusters.sizes(), default=0)
    except InfeasibleError as exc:
        wrapped = NoSolutionFoundError(f"monolithic solve infeasible: {exc}")
        wrapped.wall_time_ms = (time.perf_counter() - started) * 1000.0
        raise wrapped from exc
    except NoSolutionFoundError as exc:
        exc.wall_time_ms = (time.perf_counter() - started) * 1000.0
        raise
    wall_ms = (time.perf_counter() - started) * 1000.0

    violations = validate_solution(plan, instance)
    if violations:
        raise RuntimeError(f"internal error: strategy produced invalid plan: {violations[:3]}")
    return PipelineResult(
        plan=plan,
        wall_time_ms=wall_ms,
        total_distance=evaluate_objective(plan, instance),
        busy_vehicle_count=len(busy),
        cluster_count=cluster_count,
        peak_cluster_size=peak,
    )
