import json
import math
import os

import jsonschema
import pytest

from routeforge.bench import (
    CSV_COLUMNS,
    HORIZON_S,
    BenchRecord,
    BudgetConfig,
    GeneratorConfig,
    Region,
    RunStatus,
    WindowStyle,
    _cell_seed,
    _worker_cap,
    export_csv,
    export_geojson,
    generate_instance,
    parse_csv,
    run_benchmark,
    summarise,
)
from routeforge.geo import haversine_distance
from routeforge.model import (
    instance_to_dict,
    plan_from_dict,
    validate_solution,
)
from routeforge.pipeline import Strategy, run_strategy
from routeforge.solver import SolverParams

FAST = SolverParams(time_limit_ms=100)

GEOJSON_SCHEMA = {
    "type": "object",
    "required": ["type", "features"],
    "properties": {
        "type": {"const": "FeatureCollection"},
        "features": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "geometry", "properties"],
                "properties": {
                    "type": {"const": "Feature"},
                    "geometry": {
                        "type": "object",
                        "required": ["type", "coordinates"],
                        "properties": {"type": {"enum": ["Point", "LineString"]}},
                        "allOf": [
                            {
                                "if": {"properties": {"type": {"const": "Point"}}},
                                "then": {
                                    "properties": {
                                        "coordinates": {
                                            "type": "array",
                                            "minItems": 2,
                                            "maxItems": 2,
                                            "items": {"type": "number"},
                                        }
                                    }
                                },
                            },
                            {
                                "if": {"properties": {"type": {"const": "LineString"}}},
                                "then": {
                                    "properties": {
                                        "coordinates": {
                                            "type": "array",
                                            "minItems": 2,
                                            "items": {
                                                "type": "array",
                                                "minItems": 2,
                                                "maxItems": 2,
                                                "items": {"type": "number"},
                                            },
                                        }
                                    }
                                },
                            },
                        ],
                    },
                    "properties": {"type": "object"},
                },
            },
        },
    },
}


# --- generator ---


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(n_waypoints=0)
    with pytest.raises(ValueError):
        GeneratorConfig(n_waypoints=10, demand_range=(0, 3))
    with pytest.raises(ValueError):
        GeneratorConfig(n_waypoints=10, demand_range=(4, 2))
    with pytest.raises(ValueError):
        GeneratorConfig(n_waypoints=10, fleet_size=0)
    with pytest.raises(ValueError):
        GeneratorConfig(n_waypoints=10, vehicle_capacity=0)


def test_generator_is_deterministic():
    config = GeneratorConfig(n_waypoints=300, seed=99)
    a = generate_instance(config)
    b = generate_instance(config)
    assert json.dumps(instance_to_dict(a)) == json.dumps(instance_to_dict(b))
    c = generate_instance(GeneratorConfig(n_waypoints=300, seed=100))
    assert instance_to_dict(c) != instance_to_dict(a)


def test_generated_instance_stays_in_bounds():
    config = GeneratorConfig(n_waypoints=1_000, seed=5)
    instance = generate_instance(config)
    region = Region()
    assert instance.n_waypoints == 1_000
    assert len(instance.vehicles) == 100  # n // 10
    centroid = region.centroid()
    assert instance.depot.location.lat == pytest.approx(centroid.lat)
    assert instance.depot.location.lon == pytest.approx(centroid.lon)
    for wp in instance.waypoints:
        assert region.lat_min <= wp.location.lat <= region.lat_max
        assert region.lon_min <= wp.location.lon <= region.lon_max
        assert 1 <= wp.demand <= 4
        assert 0 <= wp.window.earliest <= wp.window.latest <= HORIZON_S


def test_single_waypoint_instance():
    instance = generate_instance(GeneratorConfig(n_waypoints=1, seed=0))
    assert instance.n_waypoints == 1
    assert len(instance.vehicles) == 1


def test_custom_demand_and_fleet():
    config = GeneratorConfig(n_waypoints=50, seed=3, demand_range=(2, 2), fleet_size=7)
    instance = generate_instance(config)
    assert all(w.demand == 2 for w in instance.waypoints)
    assert len(instance.vehicles) == 7


def test_mixed_windows_are_bounded_and_reachable():
    config = GeneratorConfig(n_waypoints=200, seed=11, window_style=WindowStyle.MIXED)
    instance = generate_instance(config)
    speed = instance.travel.speed_mps
    saw_narrow = False
    for wp in instance.waypoints:
        length = wp.window.latest - wp.window.earliest
        assert 7_200 <= length <= 21_600
        saw_narrow = saw_narrow or length < HORIZON_S
        travel = haversine_distance(instance.depot.location, wp.location) / speed
        assert wp.window.latest >= math.ceil(travel) + 60  # reachable from pickup 0
    assert saw_narrow


def test_mixed_window_instance_is_solvable():
    config = GeneratorConfig(
        n_waypoints=60, seed=17, window_style=WindowStyle.MIXED, fleet_size=12
    )
    instance = generate_instance(config)
    result = run_strategy(instance, Strategy.MONOLITHIC, params=FAST)
    assert validate_solution(result.plan, instance) == []


# --- benchmark harness ---


def rebuild_cell_instance(n, rep, template=None):
    seed = _cell_seed(1729, n, rep)
    if template is None:
        return generate_instance(GeneratorConfig(n_waypoints=n, seed=seed))
    from dataclasses import replace

    return generate_instance(replace(template, n_waypoints=n, seed=seed))


def test_benchmark_grid_shape_and_order(tmp_path):
    records = run_benchmark(
        sizes=[40, 60],
        repetitions=2,
        params=FAST,
        archive_dir=str(tmp_path),
    )
    assert len(records) == 2 * 2 * 3
    keys = [(r.n_waypoints, r.repetition_index, r.strategy) for r in records]
    expected = [
        (n, rep, s) for n in (40, 60) for rep in (0, 1) for s in tuple(Strategy)
    ]
    assert keys == expected
    for record in records:
        if record.status is RunStatus.OK:
            assert record.runtime_s is not None
            assert record.distance_m is not None
            assert record.busy_vehicles is not None
        else:
            assert record.distance_m is None
    # the paired baseline must hold up on instances this small
    for record in records:
        if record.strategy in (Strategy.MONOLITHIC, Strategy.RECURSIVE_DBSCAN):
            assert record.status is RunStatus.OK


def test_archived_plans_validate_against_regenerated_instances(tmp_path):
    records = run_benchmark(sizes=[40], repetitions=1, params=FAST, archive_dir=str(tmp_path))
    ok = [r for r in records if r.status is RunStatus.OK]
    assert ok
    for record in ok:
        name = f"plan_{record.n_waypoints:05d}_r{record.repetition_index:02d}_{record.strategy.value}.json"
        path = os.path.join(str(tmp_path), name)
        assert os.path.exists(path)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        instance = rebuild_cell_instance(record.n_waypoints, record.repetition_index)
        plan = plan_from_dict(doc, instance)
        assert validate_solution(plan, instance) == []
        assert len(plan.busy_vehicles) == record.busy_vehicles


def test_wall_budget_breach_is_a_crash_record():
    records = run_benchmark(
        sizes=[60],
        repetitions=1,
        strategies=[Strategy.MONOLITHIC],
        budget=BudgetConfig(memory_mb=4_096, wall_s=0.005),
    )
    assert [r.status for r in records] == [RunStatus.CRASHED_BUDGET]
    assert records[0].distance_m is None


def test_memory_budget_breach_is_a_crash_record():
    # the 2,001-node distance matrix alone wants far more than the cap, so
    # the child cannot finish inside recycled heap space
    records = run_benchmark(
        sizes=[2_000],
        repetitions=1,
        strategies=[Strategy.MONOLITHIC],
        params=FAST,
        budget=BudgetConfig(memory_mb=32, wall_s=120.0),
    )
    assert [r.status for r in records] == [RunStatus.CRASHED_BUDGET]


def test_budgeted_run_matches_unbudgeted_results():
    free = run_benchmark(sizes=[40], repetitions=1, params=FAST)
    fenced = run_benchmark(
        sizes=[40], repetitions=1, params=FAST, budget=BudgetConfig(memory_mb=4_096, wall_s=120.0)
    )
    assert [(r.status, r.distance_m, r.busy_vehicles) for r in free] == [
        (r.status, r.distance_m, r.busy_vehicles) for r in fenced
    ]


def test_benchmark_is_deterministic_apart_from_runtime():
    a = run_benchmark(sizes=[40], repetitions=2, params=FAST)
    b = run_benchmark(sizes=[40], repetitions=2, params=FAST)
    strip = lambda rs: [(r.n_waypoints, r.repetition_index, r.strategy, r.status, r.distance_m, r.busy_vehicles) for r in rs]
    assert strip(a) == strip(b)


def test_parallel_workers_match_sequential(tmp_path):
    sequential = run_benchmark(sizes=[30, 40], repetitions=1, params=FAST)
    parallel = run_benchmark(sizes=[30, 40], repetitions=1, params=FAST, workers=2)
    strip = lambda rs: [(r.n_waypoints, r.repetition_index, r.strategy, r.status, r.distance_m, r.busy_vehicles) for r in rs]
    assert strip(sequential) == strip(parallel)


def test_worker_cap_env(monkeypatch):
    monkeypatch.setenv("ROUTE_FORGE_THREADS", "1")
    assert _worker_cap(4) == 1
    monkeypatch.setenv("ROUTE_FORGE_THREADS", "8")
    assert _worker_cap(4) == 4
    monkeypatch.setenv("ROUTE_FORGE_THREADS", "garbage")
    assert _worker_cap(4) == 4
    monkeypatch.setenv("ROUTE_FORGE_THREADS", "0")
    assert _worker_cap(4) == 1
    monkeypatch.delenv("ROUTE_FORGE_THREADS")
    assert _worker_cap(4) == 4


# --- CSV ---


def sample_records():
    return [
        BenchRecord(100, Strategy.MONOLITHIC, 0, 2.0, 10_000, 2, RunStatus.OK),
        BenchRecord(100, Strategy.DBSCAN, 0, None, None, None, RunStatus.NO_SOLUTION),
        BenchRecord(100, Strategy.RECURSIVE_DBSCAN, 0, 1.5, 11_000, 2, RunStatus.OK),
        BenchRecord(100, Strategy.MONOLITHIC, 1, 4.0, 20_000, 4, RunStatus.OK),
        BenchRecord(100, Strategy.DBSCAN, 1, 3.0, 21_000, 4, RunStatus.OK),
        BenchRecord(100, Strategy.RECURSIVE_DBSCAN, 1, 1.5, 22_000, 4, RunStatus.OK),
        BenchRecord(250, Strategy.MONOLITHIC, 0, 9.0, 50_000, 8, RunStatus.CRASHED_BUDGET),
        BenchRecord(250, Strategy.RECURSIVE_DBSCAN, 0, 3.25, 52_000, 9, RunStatus.OK),
    ]


def test_csv_round_trip(tmp_path):
    path = str(tmp_path / "results.csv")
    export_csv(sample_records(), path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    assert header == ",".join(CSV_COLUMNS)
    rows = parse_csv(path)
    assert len(rows) == 3  # (100, rep0), (100, rep1), (250, rep0)
    first = rows[0]
    assert first["wps"] == 100
    assert first["runtime_monolithic"] == 2.0
    assert first["distance_monolithic"] == 10_000
    assert first["cars_monolithic"] == 2
    assert first["runtime_dbscan"] is None  # no-solution cell
    assert first["distance_recursive"] == 11_000
    third = rows[2]
    assert third["runtime_monolithic"] is None  # crashed cell
    assert third["distance_dbscan"] is None  # strategy never ran
    assert third["cars_recursive"] == 9


def test_csv_rejects_foreign_columns(tmp_path):
    path = str(tmp_path / "bad.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("wps,runtime\n100,2.0\n")
    with pytest.raises(ValueError):
        parse_csv(path)


def test_summary_arithmetic():
    rows = summarise(sample_records())
    by_key = {(r["wps"], r["strategy"]): r for r in rows}

    mono = by_key[(100, "MONOLITHIC")]
    assert mono["runs"] == 2 and mono["ok"] == 2
    assert mono["mean_runtime_s"] == 3.0
    assert mono["mean_distance_m"] == 15_000.0
    assert mono["mean_cars"] == 3.0
    assert mono["runtime_delta_pct"] is None

    recursive = by_key[(100, "RECURSIVE_DBSCAN")]
    assert recursive["mean_runtime_s"] == 1.5
    assert recursive["runtime_delta_pct"] == -50.0
    assert recursive["distance_delta_pct"] == 10.0  # 16,500 vs 15,000
    assert recursive["cars_delta_pct"] == 0.0

    dbscan = by_key[(100, "DBSCAN")]
    assert dbscan["runs"] == 2 and dbscan["ok"] == 1
    assert dbscan["mean_distance_m"] == 21_000.0

    crashed = by_key[(250, "MONOLITHIC")]
    assert crashed["ok"] == 0
    assert crashed["mean_runtime_s"] is None
    # no OK baseline at 250, so the recursive delta cannot be computed
    assert by_key[(250, "RECURSIVE_DBSCAN")]["runtime_delta_pct"] is None


# --- GeoJSON ---


def test_geojson_document_shape(tmp_path):
    instance = generate_instance(GeneratorConfig(n_waypoints=2, seed=1, fleet_size=1))
    result = run_strategy(instance, Strategy.MONOLITHIC, params=FAST)
    path = str(tmp_path / "routes.geojson")
    export_geojson(result.plan, instance, path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    jsonschema.validate(doc, GEOJSON_SCHEMA)

    kinds = [f["properties"].get("kind") for f in doc["features"]]
    assert kinds.count("depot") == 1
    assert kinds.count("waypoint") == 2
    assert kinds.count("route") == len(result.plan.routes)

    route = next(f for f in doc["features"] if f["properties"]["kind"] == "route")
    coords = route["geometry"]["coordinates"]
    assert coords[0] == [instance.depot.location.lon, instance.depot.location.lat]
    first_stop = result.plan.routes[0].stops[0]
    wp = instance.waypoint(first_stop.waypoint_id)
    assert coords[1] == [wp.location.lon, wp.location.lat]


def test_geojson_empty_plan_keeps_points(tmp_path):
    from routeforge.model import RoutePlan

    instance = generate_instance(GeneratorConfig(n_waypoints=3, seed=2))
    path = str(tmp_path / "empty.geojson")
    export_geojson(RoutePlan(()), instance, path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    jsonschema.validate(doc, GEOJSON_SCHEMA)
    kinds = [f["properties"].get("kind") for f in doc["features"]]
    assert kinds == ["depot", "waypoint", "waypoint", "waypoint"]
