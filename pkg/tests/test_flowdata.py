"""Dataset loading, distances, and subset selection."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from flowbreaks.flowdata import (
    FlowDataError,
    FlowRecord,
    Location,
    build_dataset,
    haversine_km,
    load_dataset,
    mean_coordinate,
    save_dataset,
    top_k_subset,
    total_population,
)

# One degree of longitude along the equator, R = 6371 km (frozen from the
# closed-form half-angle formula evaluated with scalar math).
ONE_DEGREE_EQUATOR_KM = 111.19492664455873
LOG_ONE_DEGREE_EQUATOR = 4.711284757075678


def square_locations(pops=(1000, 2000, 3000, 4000)):
    coords = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    return [
        Location(id=f"L{i}", population=p, latitude=la, longitude=lo)
        for i, (p, (la, lo)) in enumerate(zip(pops, coords))
    ]


def all_pairs_flows(locations, count=5):
    return [
        FlowRecord(source=a.id, destination=b.id, count=count)
        for a in locations
        for b in locations
        if a.id != b.id
    ]


def test_haversine_one_degree_equator_frozen():
    d = haversine_km(0.0, 0.0, 0.0, 1.0)
    assert d == pytest.approx(ONE_DEGREE_EQUATOR_KM, abs=1e-9)
    assert math.log(d) == pytest.approx(LOG_ONE_DEGREE_EQUATOR, abs=1e-12)


def test_two_location_log_distance_matches_frozen_value():
    locs = [
        Location(id="A", population=10, latitude=0.0, longitude=0.0),
        Location(id="B", population=20, latitude=0.0, longitude=1.0),
    ]
    data, report = build_dataset(locs, [FlowRecord("A", "B", 5)])
    assert report.n_pairs_retained == 1
    assert data.log_distance[0, 1] == pytest.approx(LOG_ONE_DEGREE_EQUATOR, abs=1e-12)
    assert data.outcome[0] == pytest.approx(math.log(5.0))


@given(
    lat1=st.floats(-80, 80), lon1=st.floats(-179, 179),
    lat2=st.floats(-80, 80), lon2=st.floats(-179, 179),
)
@settings(max_examples=100, deadline=None)
def test_haversine_matches_scalar_oracle(lat1, lon1, lat2, lon2):
    got = float(haversine_km(lat1, lon1, lat2, lon2))
    want = oracles.haversine_scalar(lat1, lon1, lat2, lon2)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


def test_zero_count_pair_excluded_and_reported():
    locs = square_locations()
    flows = all_pairs_flows(locs)
    flows[0] = FlowRecord(flows[0].source, flows[0].destination, 0)
    data, report = build_dataset(locs, flows)
    assert report.dropped_zero_pairs == 1
    assert data.n_pairs == 11
    pair_keys = {(f.source, f.destination) for f in data.flows}
    assert (flows[0].source, flows[0].destination) not in pair_keys


def test_self_pair_dropped():
    locs = square_locations()
    flows = all_pairs_flows(locs) + [FlowRecord("L0", "L0", 9)]
    data, report = build_dataset(locs, flows)
    assert report.dropped_self_pairs == 1
    assert data.n_pairs == 12


def test_mean_coordinate_averages_members():
    assert mean_coordinate([(40.0, -75.0), (42.0, -73.0)]) == (41.0, -74.0)


def test_duplicate_pair_rejected():
    locs = square_locations()
    flows = all_pairs_flows(locs) + [FlowRecord("L0", "L1", 7)]
    with pytest.raises(FlowDataError):
        build_dataset(locs, flows)


def test_unknown_location_in_flow_rejected():
    locs = square_locations()
    with pytest.raises(FlowDataError):
        build_dataset(locs, [FlowRecord("L0", "NOPE", 3)])


def test_explicit_distance_matrix_used_verbatim():
    locs = [
        Location(id="A", population=10),
        Location(id="B", population=20),
    ]
    dist = np.array([[0.0, 200.0], [200.0, 0.0]])
    data, _ = build_dataset(
        locs, [FlowRecord("A", "B", 5)], distance_source="explicit_matrix",
        distance_km=dist,
    )
    assert data.log_distance[0, 1] == pytest.approx(math.log(200.0))


def test_top_k_full_size_is_identity():
    locs = square_locations()
    data, _ = build_dataset(locs, all_pairs_flows(locs))
    sub = top_k_subset(data, 4)
    assert sub.location_ids == data.location_ids
    assert np.array_equal(sub.outcome, data.outcome)


def test_top_k_keeps_largest_populations():
    locs = [
        Location(id="A", population=10, latitude=0.0, longitude=0.0),
        Location(id="B", population=20, latitude=0.0, longitude=1.0),
        Location(id="C", population=30, latitude=1.0, longitude=0.0),
    ]
    flows = all_pairs_flows(locs)
    data, _ = build_dataset(locs, flows)
    sub = top_k_subset(data, 2)
    assert sorted(loc.population for loc in sub.locations) == [20, 30]
    assert sub.n_pairs == 2


def test_top_k_population_tie_breaks_by_id():
    locs = [
        Location(id="B", population=10, latitude=0.0, longitude=0.0),
        Location(id="A", population=10, latitude=0.0, longitude=1.0),
        Location(id="C", population=99, latitude=1.0, longitude=0.0),
    ]
    data, _ = build_dataset(locs, all_pairs_flows(locs))
    picks = [top_k_subset(data, 2).location_ids for _ in range(3)]
    assert picks[0] == picks[1] == picks[2]
    assert set(picks[0]) == {"A", "C"}


def test_total_population_sums_locations():
    locs = square_locations()
    data, _ = build_dataset(locs, all_pairs_flows(locs))
    assert total_population(data) == pytest.approx(10000, rel=1e-12)


def test_save_load_round_trip_bit_exact(tmp_path):
    locs = square_locations()
    data, _ = build_dataset(locs, all_pairs_flows(locs, count=7))
    loc_file = tmp_path / "locations.csv"
    flow_file = tmp_path / "flows.csv"
    save_dataset(data, loc_file, flow_file)
    back, report = load_dataset(loc_file, flow_file)
    assert back.location_ids == data.location_ids
    assert np.array_equal(back.outcome, data.outcome)
    assert np.array_equal(
        np.nan_to_num(back.log_distance), np.nan_to_num(data.log_distance)
    )
    assert report.n_pairs_retained == data.n_pairs


def test_save_load_explicit_matrix_round_trip(tmp_path):
    locs = [Location(id="A", population=10), Location(id="B", population=20)]
    dist = np.array([[0.0, 123.456], [123.456, 0.0]])
    data, _ = build_dataset(
        locs, [FlowRecord("A", "B", 5), FlowRecord("B", "A", 2)],
        distance_source="explicit_matrix", distance_km=dist,
    )
    files = [tmp_path / n for n in ("locations.csv", "flows.csv", "distances.csv")]
    save_dataset(data, *files)
    back, _ = load_dataset(
        files[0], files[1], distance_source="explicit_matrix", distance_file=files[2]
    )
    assert np.array_equal(
        np.nan_to_num(back.log_distance), np.nan_to_num(data.log_distance)
    )


def test_source_rows_cover_all_pairs_contiguously():
    locs = square_locations()
    data, _ = build_dataset(locs, all_pairs_flows(locs))
    seen = np.zeros(data.n_pairs, dtype=bool)
    for i in range(data.n_locations):
        rows = data.source_rows(i)
        assert np.all(data.source_index[rows] == i)
        seen[rows] = True
    assert seen.all()
