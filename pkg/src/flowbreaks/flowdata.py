"""Loading, validation, and indexing of directed flow datasets.

A dataset couples a table of locations (id, population, coordinates) with a
table of directed flow counts between them.  Distances are great-circle
kilometers computed from coordinates, or taken from an explicit matrix.
All modeling happens on the log scale: the outcome for a retained ordered
pair is ``log(count)`` and the distance covariate is ``log(km)``.

Ordered pairs with a zero recorded count are dropped (the log outcome is
undefined there); the number of dropped pairs is reported rather than
silently discarded.  Self-pairs are never modeled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0

DISTANCE_SOURCES = ("haversine", "explicit_matrix")


class FlowDataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Location:
    """One location: stable id, population size, and optional coordinates."""

    id: str
    population: int
    latitude: float | None = None
    longitude: float | None = None


@dataclass(frozen=True)
class FlowRecord:
    """One directed flow: source id, destination id, positive count."""

    source: str
    destination: str
    count: int


@dataclass(frozen=True)
class LoadReport:
    """Summary of what a load kept and dropped."""

    n_locations: int
    n_pairs_retained: int
    dropped_zero_pairs: int
    dropped_self_pairs: int = 0


@dataclass
class FlowDataset:
    """Validated dataset in canonical pair order.

    Attributes
    ----------
    locations : list[Location]
        Defines the index order used by every array in the dataset.
    flows : list[FlowRecord]
        Retained flows (count >= 1, source != destination), sorted by
        (source index, destination index).
    log_distance : ndarray, shape (S, S)
        Log kilometers between locations; the diagonal is NaN.
    log_population : ndarray, shape (S,)
        Log population sizes.
    outcome : ndarray, shape (n,)
        log(count) per retained ordered pair, in ``flows`` order.
    source_index, dest_index : ndarray, shape (n,)
        Location indices per retained pair.
    """

    locations: list[Location]
    flows: list[FlowRecord]
    log_distance: np.ndarray
    log_population: np.ndarray
    outcome: np.ndarray
    source_index: np.ndarray = field(repr=False)
    dest_index: np.ndarray = field(repr=False)
    distance_km: np.ndarray = field(repr=False, default=None)

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def n_pairs(self) -> int:
        return self.outcome.shape[0]

    @property
    def location_ids(self) -> tuple[str, ...]:
        return tuple(loc.id for loc in self.locations)

    def index_of(self, location_id: str) -> int:
        try:
            return self.location_ids.index(location_id)
        except ValueError:
            raise FlowDataError(f"unknown location id {location_id!r}") from None

    @property
    def pair_log_distance(self) -> np.ndarray:
        return self.log_distance[self.source_index, self.dest_index]

    def source_rows(self, i: int) -> slice:
        """Contiguous row slice of pairs whose source is location ``i``."""
        lo = int(np.searchsorted(self.source_index, i, side="left"))
        hi = int(np.searchsorted(self.source_index, i, side="right"))
        return slice(lo, hi)

    def theta_ranges(self) -> np.ndarray:
        """Per-source open interval of observed log distances, shape (S, 2).

        Sources with no retained outgoing pair get (nan, nan).
        """
        out = np.full((self.n_locations, 2), np.nan)
        d = self.pair_log_distance
        for i in range(self.n_locations):
            rows = self.source_rows(i)
            if rows.stop > rows.start:
                out[i, 0] = d[rows].min()
                out[i, 1] = d[rows].max()
        return out


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in kilometers between coordinate pairs (degrees)."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def mean_coordinate(coordinates) -> tuple[float, float]:
    """Arithmetic mean of (latitude, longitude) pairs.

    Convention for representing an aggregate unit (say a county built from
    several co-located sub-units) by a single point.
    """
    arr = np.asarray(coordinates, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != 2:
        raise FlowDataError("coordinates must be a non-empty sequence of (lat, lon) pairs")
    lat, lon = arr.mean(axis=0)
    return float(lat), float(lon)


def _distance_matrix_haversine(locations: list[Location]) -> np.ndarray:
    lats = np.array([loc.latitude for loc in locations], dtype=float)
    lons = np.array([loc.longitude for loc in locations], dtype=float)
    return haversine_km(lats[:, None], lons[:, None], lats[None, :], lons[None, :])


def _validate_locations(locations: list[Location], need_coords: bool) -> None:
    if not locations:
        raise FlowDataError("locations table is empty")
    seen: set[str] = set()
    for loc in locations:
        if loc.id in seen:
            raise FlowDataError(f"duplicate location id {loc.id!r}")
        seen.add(loc.id)
        if loc.population < 1:
            raise FlowDataError(f"location {loc.id!r} has population {loc.population} < 1")
        if need_coords:
            if loc.latitude is None or loc.longitude is None:
                raise FlowDataError(f"location {loc.id!r} lacks coordinates required for haversine distances")
            if not (-90.0 <= loc.latitude <= 90.0) or not (-180.0 <= loc.longitude <= 180.0):
                raise FlowDataError(f"location {loc.id!r} has out-of-range coordinates")


def build_dataset(
    locations: list[Location],
    flows: list[FlowRecord],
    distance_source: str = "haversine",
    distance_km: np.ndarray | None = None,
) -> tuple[FlowDataset, LoadReport]:
    """Assemble and validate a FlowDataset from in-memory tables.

    Zero-count flows are dropped (counted in the report); self-flows are
    likewise dropped and counted.  Negative counts, unknown ids, duplicate
    ordered pairs, and non-positive or asymmetric explicit distances are
    hard errors.
    """
    if distance_source not in DISTANCE_SOURCES:
        raise FlowDataError(f"distance_source must be one of {DISTANCE_SOURCES}, got {distance_source!r}")
    _validate_locations(locations, need_coords=distance_source == "haversine")
    index = {loc.id: k for k, loc in enumerate(locations)}
    S = len(locations)

    if distance_source == "haversine":
        dist = _distance_matrix_haversine(locations)
    else:
        if distance_km is None:
            raise FlowDataError("explicit_matrix distance source requires a distance matrix")
        dist = np.asarray(distance_km, dtype=float)
        if dist.shape != (S, S):
            raise FlowDataError(f"distance matrix shape {dist.shape} does not match {S} locations")
        if not np.allclose(dist, dist.T, rtol=1e-9, atol=1e-9):
            raise FlowDataError("distance matrix is not symmetric")
        dist = 0.5 * (dist + dist.T)

    off = ~np.eye(S, dtype=bool)
    if S > 1 and (not np.all(np.isfinite(dist[off])) or np.any(dist[off] <= 0.0)):
        bad = np.argwhere(off & ~(np.isfinite(dist) & (dist > 0.0)))[0]
        a, b = locations[bad[0]].id, locations[bad[1]].id
        raise FlowDataError(f"non-positive or non-finite distance between {a!r} and {b!r}")

    log_distance = np.full((S, S), np.nan)
    log_distance[off] = np.log(dist[off])
    np.fill_diagonal(dist, 0.0)

    dropped_zero = 0
    dropped_self = 0
    seen_pairs: set[tuple[int, int]] = set()
    kept: list[tuple[int, int, FlowRecord]] = []
    for rec in flows:
        if rec.source not in index:
            raise FlowDataError(f"flow references unknown source id {rec.source!r}")
        if rec.destination not in index:
            raise FlowDataError(f"flow references unknown destination id {rec.destination!r}")
        if rec.count < 0:
            raise FlowDataError(f"flow {rec.source!r}->{rec.destination!r} has negative count {rec.count}")
        i, j = index[rec.source], index[rec.destination]
        if (i, j) in seen_pairs:
            raise FlowDataError(f"duplicate flow entry for pair {rec.source!r}->{rec.destination!r}")
        seen_pairs.add((i, j))
        if i == j:
            dropped_self += 1
            continue
        if rec.count == 0:
            dropped_zero += 1
            continue
        kept.append((i, j, rec))

    kept.sort(key=lambda t: (t[0], t[1]))
    src = np.array([t[0] for t in kept], dtype=np.intp)
    dst = np.array([t[1] for t in kept], dtype=np.intp)
    counts = np.array([t[2].count for t in kept], dtype=float)
    outcome = np.log(counts) if counts.size else np.empty(0)

    data = FlowDataset(
        locations=list(locations),
        flows=[t[2] for t in kept],
        log_distance=log_distance,
        log_population=np.log(np.array([loc.population for loc in locations], dtype=float)),
        outcome=outcome,
        source_index=src,
        dest_index=dst,
        distance_km=dist,
    )
    report = LoadReport(
        n_locations=S,
        n_pairs_retained=len(kept),
        dropped_zero_pairs=dropped_zero,
        dropped_self_pairs=dropped_self,
    )
    return data, report


def _parse_locations_file(path) -> list[Location]:
    locations = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "population"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FlowDataError(f"{path}: locations file must have columns id,population[,latitude,longitude]")
        for lineno, row in enumerate(reader, start=2):
            try:
                lat = row.get("latitude")
                lon = row.get("longitude")
                locations.append(
                    Location(
                        id=row["id"].strip(),
                        population=int(row["population"]),
                        latitude=float(lat) if lat not in (None, "") else None,
                        longitude=float(lon) if lon not in (None, "") else None,
                    )
                )
            except (TypeError, ValueError) as exc:
                raise FlowDataError(f"{path}:{lineno}: malformed location record ({exc})") from None
    return locations


def _parse_flows_file(path) -> list[FlowRecord]:
    flows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"source_id", "destination_id", "count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FlowDataError(f"{path}: flows file must have columns source_id,destination_id,count")
        for lineno, row in enumerate(reader, start=2):
            try:
                flows.append(
                    FlowRecord(
                        source=row["source_id"].strip(),
                        destination=row["destination_id"].strip(),
                        count=int(row["count"]),
                    )
                )
            except (TypeError, ValueError) as exc:
                raise FlowDataError(f"{path}:{lineno}: malformed flow record ({exc})") from None
    return flows


def load_dataset(
    locations_file,
    flows_file,
    distance_source: str = "haversine",
    distance_file=None,
) -> tuple[FlowDataset, LoadReport]:
    """Load and validate a dataset from delimited text files.

    ``locations_file`` needs columns id,population[,latitude,longitude];
    ``flows_file`` needs source_id,destination_id,count.  With
    ``distance_source="explicit_matrix"``, ``distance_file`` must hold a
    dense S x S table of kilometers in location order (no header).
    """
    locations = _parse_locations_file(locations_file)
    flows = _parse_flows_file(flows_file)
    distance_km = None
    if distance_source == "explicit_matrix":
        if distance_file is None:
            raise FlowDataError("explicit_matrix distance source requires distance_file")
        distance_km = np.atleast_2d(np.loadtxt(distance_file, delimiter=","))
    return build_dataset(locations, flows, distance_source, distance_km)


def save_dataset(data: FlowDataset, locations_file, flows_file, distance_file=None) -> None:
    """Write a dataset back to delimited text; inverse of :func:`load_dataset`.

    Counts are recovered as round(exp(outcome)); for datasets loaded from
    count files this is exact and the round trip is bit-for-bit.
    """
    with open(locations_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "population", "latitude", "longitude"])
        for loc in data.locations:
            writer.writerow(
                [
                    loc.id,
                    loc.population,
                    "" if loc.latitude is None else repr(loc.latitude),
                    "" if loc.longitude is None else repr(loc.longitude),
                ]
            )
    with open(flows_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "destination_id", "count"])
        for rec in data.flows:
            writer.writerow([rec.source, rec.destination, rec.count])
    if distance_file is not None:
        np.savetxt(distance_file, data.distance_km, delimiter=",", fmt="%.17g")


def top_k_subset(data: FlowDataset, k: int) -> FlowDataset:
    """Restrict to the k most populous locations (ties broken by id).

    Flows between retained locations are kept; everything is re-indexed and
    recomputed.  ``k = S`` reproduces the dataset unchanged.
    """
    if not 1 <= k <= data.n_locations:
        raise FlowDataError(f"k must be in [1, {data.n_locations}], got {k}")
    ranked = sorted(data.locations, key=lambda loc: (-loc.population, loc.id))
    keep_ids = {loc.id for loc in ranked[:k]}
    locations = [loc for loc in data.locations if loc.id in keep_ids]
    flows = [rec for rec in data.flows if rec.source in keep_ids and rec.destination in keep_ids]
    old_index = {loc.id: i for i, loc in enumerate(data.locations)}
    idx = np.array([old_index[loc.id] for loc in locations], dtype=np.intp)
    new_index = {loc.id: i for i, loc in enumerate(locations)}

    kept = sorted(flows, key=lambda rec: (new_index[rec.source], new_index[rec.destination]))
    src = np.array([new_index[rec.source] for rec in kept], dtype=np.intp)
    dst = np.array([new_index[rec.destination] for rec in kept], dtype=np.intp)
    counts = np.array([rec.count for rec in kept], dtype=float)
    return FlowDataset(
        locations=locations,
        flows=kept,
        log_distance=data.log_distance[np.ix_(idx, idx)],
        log_population=data.log_population[idx],
        outcome=np.log(counts) if counts.size else np.empty(0),
        source_index=src,
        dest_index=dst,
        distance_km=data.distance_km[np.ix_(idx, idx)],
    )


def total_population(data: FlowDataset) -> float:
    return float(np.exp(data.log_population).sum())
