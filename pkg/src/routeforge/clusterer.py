"""Radius search and recursive decomposition on top of density clustering.

The searches exploit two monotone facts about density clusters with a
min_samples of one: growing the radius only ever merges clusters, so the
cluster count shrinks and the average cluster size grows.  Feasibility under
either criterion is therefore a prefix of the radius axis and a plain integer
binary search finds the largest workable radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .dbscan import BRUTE_FORCE_LIMIT, ClusterLabels, DbscanParams, dbscan, pairwise_meters
from .geo import GeoPoint, haversine_distance, meters_to_radians

# Beyond this depth the decomposition is assumed to be stuck on pathological
# input (for example large blocks of coincident points).
RECURSION_LIMIT = 32


class NoSolutionFoundError(Exception):
    """Raised when no radius in the search range satisfies the feasibility test."""

    def __init__(self, message: str):
        super().__init__(message)
        self.wall_time_ms: Optional[float] = None


class RecursionLimitError(Exception):
    """Raised when the decomposition recurses implausibly deep."""


class Feasibility(str, Enum):
    """What makes a probed clustering acceptable during the radius search."""

    MAX_SIZE_CAP = "MAX_SIZE_CAP"
    MIN_CLUSTER_COUNT = "MIN_CLUSTER_COUNT"


@dataclass(frozen=True)
class ClusterConfig:
    """Search range in whole meters plus the cluster size targets."""

    min_radius: int = 1
    max_radius: int = 10_000
    max_cluster_size: int = 500
    min_cluster_size: int = 35
    min_no_clusters: Optional[int] = None

    def __post_init__(self) -> None:
        if self.min_radius < 0:
            raise ValueError("min_radius must be non-negative")
        if self.max_cluster_size < 1:
            raise ValueError("max_cluster_size must be at least 1")
        if self.min_cluster_size < 0:
            raise ValueError("min_cluster_size must be non-negative")
        if self.min_no_clusters is not None and self.min_no_clusters < 1:
            raise ValueError("min_no_clusters must be at least 1 when given")


@dataclass(frozen=True)
class Cluster:
    """One group of point indices with bookkeeping about how it was found."""

    members: tuple[int, ...]
    centroid: GeoPoint
    radius: int
    depth: int

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]

    def sizes(self) -> list[int]:
        return [c.size for c in self.clusters]

    def partition(self) -> list[list[int]]:
        return [list(c.members) for c in self.clusters]

    @property
    def n_points(self) -> int:
        return sum(c.size for c in self.clusters)


def _centroid(points: Sequence[GeoPoint], members: Sequence[int]) -> GeoPoint:
    lat = sum(points[i].lat for i in members) / len(members)
    lon = sum(points[i].lon for i in members) / len(members)
    return GeoPoint(lat, lon)


def _make_cluster(
    points: Sequence[GeoPoint], members: Sequence[int], radius: int, depth: int
) -> Cluster:
    members = tuple(sorted(members))
    assert members, "clusters are never empty"
    return Cluster(members, _centroid(points, members), radius, depth)


def _resolved_min_clusters(config: ClusterConfig, n: int) -> int:
    if config.min_no_clusters is not None:
        return config.min_no_clusters
    return max(1, math.ceil(n / config.max_cluster_size))


def binary_search_clusters(
    points: Sequence[GeoPoint],
    config: ClusterConfig,
    feasibility: Feasibility = Feasibility.MAX_SIZE_CAP,
    *,
    pairwise: Optional[np.ndarray] = None,
    depth: int = 0,
) -> tuple[ClusterSet, int]:
    """Find the integer radius with the best feasible clustering.

    Probes the midpoint radius, grows the range on feasible probes and
    shrinks it otherwise, keeping the feasible probe with the largest average
    cluster size.  Raises NoSolutionFoundError when no probe is feasible.
    """
    n = len(points)
    min_no = _resolved_min_clusters(config, n)
    if pairwise is None and 0 < n <= BRUTE_FORCE_LIMIT:
        pairwise = pairwise_meters(points)

    lo, hi = config.min_radius, config.max_radius
    best: Optional[tuple[float, ClusterLabels, int]] = None
    while lo <= hi:
        mid = (lo + hi) // 2
        labels = dbscan(points, DbscanParams(meters_to_radians(mid)), pairwise=pairwise)
        count = labels.n_clusters
        if feasibility is Feasibility.MAX_SIZE_CAP:
            feasible = max(len(c) for c in labels.clusters()) <= config.max_cluster_size
        else:
            feasible = count >= min_no
        if feasible:
            average = n / count
            if best is None or average > best[0]:
                best = (average, labels, mid)
            lo = mid + 1
        else:
            hi = mid - 1

    if best is None:
        raise NoSolutionFoundError(
            f"no radius in [{config.min_radius}, {config.max_radius}] m satisfies "
            f"{feasibility.value} over {n} points"
        )
    _, labels, radius = best
    clusters = tuple(
        _make_cluster(points, members, radius, depth) for members in labels.clusters()
    )
    return ClusterSet(clusters), radius


def _recurse(
    points: Sequence[GeoPoint],
    indices: list[int],
    config: ClusterConfig,
    pairwise: Optional[np.ndarray],
    depth: int,
    out: list[Cluster],
) -> None:
    if depth > RECURSION_LIMIT:
        raise RecursionLimitError(
            f"decomposition exceeded depth {RECURSION_LIMIT}; input looks degenerate"
        )
    subset = [points[i] for i in indices]
    sub_pairwise = pairwise
    if sub_pairwise is None and len(subset) <= BRUTE_FORCE_LIMIT:
        sub_pairwise = pairwise_meters(subset)

    cluster_set, best_radius = binary_search_clusters(
        subset,
        config,
        Feasibility.MIN_CLUSTER_COUNT,
        pairwise=sub_pairwise,
        depth=depth,
    )
    for cluster in cluster_set.clusters:
        original = [indices[i] for i in cluster.members]
        if cluster.size <= config.max_cluster_size:
            out.append(_make_cluster(points, original, best_radius, depth))
            continue
        # An oversized cluster is re-clustered on a strictly smaller radius
        # range so the recursion always makes progress.
        child_config = replace(
            config,
            max_radius=best_radius - 1,
            min_no_clusters=math.ceil(cluster.size / config.max_cluster_size),
        )
        child_pairwise = None
        if sub_pairwise is not None:
            pos = np.array(cluster.members, dtype=np.int64)
            child_pairwise = sub_pairwise[np.ix_(pos, pos)]
        _recurse(points, original, child_config, child_pairwise, depth + 1, out)


def _merge_small_clusters(
    points: Sequence[GeoPoint], clusters: list[Cluster], config: ClusterConfig
) -> list[Cluster]:
    """Fold undersized clusters into their nearest neighbor when the cap allows.

    Clusters that cannot merge anywhere without breaking the size cap are
    left alone.
    """
    merged = list(clusters)
    while True:
        small = sorted(
            (c for c in merged if c.size < config.min_cluster_size),
            key=lambda c: (c.size, c.members[0]),
        )
        performed = False
        for candidate in small:
            targets = [
                t
                for t in merged
                if t is not candidate and t.size + candidate.size <= config.max_cluster_size
            ]
            if not targets:
                continue
            target = min(
                targets,
                key=lambda t: (haversine_distance(candidate.centroid, t.centroid), t.members[0]),
            )
            merged.remove(candidate)
            merged.remove(target)
            merged.append(
                _make_cluster(
                    points, candidate.members + target.members, target.radius, target.depth
                )
            )
            performed = True
            break
        if not performed:
            return merged


def recursive_dbscan(points: Sequence[GeoPoint], config: ClusterConfig) -> ClusterSet:
    """Decompose a point set into clusters no larger than the configured cap.

    Runs the radius search for at least the configured number of clusters,
    then re-clusters every oversized cluster on a tighter radius range until
    all clusters respect the cap.  Undersized clusters are merged into their
    nearest neighbors afterwards where the cap allows.
    """
    n = len(points)
    found: list[Cluster] = []
    _recurse(points, list(range(n)), config, None, 0, found)
    found = _merge_small_clusters(points, found, config)
    found.sort(key=lambda c: c.members[0])
    return ClusterSet(tuple(found))


def cluster_order(cluster_set: ClusterSet, depot: GeoPoint) -> list[int]:
    """Deterministic processing order: big clusters first, near ties broken
    by centroid distance to the depot, then by lowest contained index."""
    return sorted(
        range(len(cluster_set.clusters)),
        key=lambda i: (
            -cluster_set.clusters[i].size,
            haversine_distance(cluster_set.clusters[i].centroid, depot),
            cluster_set.clusters[i].members[0],
        ),
    )
