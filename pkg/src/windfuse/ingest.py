"""Raw data intake: station minute records, forecast-grid extractions,
and the alignment of both onto hourly day-block panels.

The robust input path is plain CSV (``timestamp,station,speed_kn`` for
measurements, ``day,hour,grid_lat,grid_long,land_use,speed_ms`` for the
forecast extraction).  A tolerant fixed-column reader for the one-minute
station archive format is provided for convenience; the archive layout
drifts across years, so only the documented subset is supported and
unparseable lines are counted, not fatal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .core import (KNOTS_TO_MS, DayBlock, Panel, PanelFormatError,
                   StationMeta)

__all__ = [
    "RawSeries",
    "haversine_km",
    "nearest_neighbor_indices",
    "nearest_neighbors",
    "match_nearest_grid",
    "moving_average_resample",
    "parse_asos_minute",
    "parse_speed_csv",
    "read_station_csv",
    "read_nwp_csv",
    "build_obs_panel",
    "cluster_stations",
]

_EARTH_RADIUS_KM = 6371.0


@dataclass
class RawSeries:
    """Irregular high-frequency speed record for one station."""

    station_id: str
    times: np.ndarray    # datetime64[s], strictly increasing
    speeds: np.ndarray   # float, same length
    unit: str = "kn"     # "kn" | "ms"
    n_rejected: int = 0  # unparseable source lines

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype="datetime64[s]")
        self.speeds = np.asarray(self.speeds, dtype=float)
        if self.times.shape != self.speeds.shape or self.times.ndim != 1:
            raise ValueError("times and speeds must be equal-length 1-d")
        if self.times.size > 1 and not np.all(np.diff(self.times)
                                              > np.timedelta64(0, "s")):
            raise ValueError("times must be strictly increasing")
        if self.unit not in ("kn", "ms"):
            raise ValueError(f"unknown unit {self.unit!r}")

    def speeds_ms(self) -> np.ndarray:
        return self.speeds * (KNOTS_TO_MS if self.unit == "kn" else 1.0)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def haversine_km(lat1: float, long1: float, lat2: float,
                 long2: float) -> float:
    """Great-circle distance in km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(long2 - long1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) \
        * math.sin(dl / 2.0) ** 2
    return 2.0 * _EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def nearest_neighbor_indices(site: StationMeta,
                             grid: list[StationMeta] | tuple[StationMeta, ...],
                             k: int = 3) -> list[int]:
    """Indices of the ``k`` closest grid points, ascending great-circle
    distance; ties broken by lexicographically smaller (lat, long)."""
    if len(grid) < k:
        raise ValueError(f"need at least {k} grid points, have {len(grid)}")
    keyed = sorted(
        range(len(grid)),
        key=lambda i: (haversine_km(site.lat, site.long,
                                    grid[i].lat, grid[i].long),
                       grid[i].lat, grid[i].long),
    )
    return keyed[:k]


def nearest_neighbors(site: StationMeta, grid: list[StationMeta],
                      k: int = 3) -> list[StationMeta]:
    """The ``k`` closest grid points themselves (see index variant)."""
    return [grid[i] for i in nearest_neighbor_indices(site, grid, k)]


def match_nearest_grid(stations: list[StationMeta],
                       grid: list[StationMeta]
                       ) -> tuple[dict[str, StationMeta],
                                  list[StationMeta]]:
    """Match every station to its closest grid point.

    Returns the mapping (station id -> grid point) and the station list
    with each station's land use set from its match.
    """
    mapping: dict[str, StationMeta] = {}
    updated: list[StationMeta] = []
    for s in stations:
        g = grid[nearest_neighbor_indices(s, grid, k=1)[0]]
        mapping[s.id] = g
        updated.append(replace(s, land_use=g.land_use))
    return mapping, updated


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def moving_average_resample(series: RawSeries, start: datetime,
                            n_hours: int,
                            window: timedelta = timedelta(hours=1)
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Hourly values as the mean of raw samples in a centered window
    around each top of hour, in m/s.

    The window is half-open, ``[t - w/2, t + w/2)``.  Hours with no
    samples come back masked.  Returns ``(values, mask)`` of length
    ``n_hours`` starting at ``start``.
    """
    if start.tzinfo is None:
        raise ValueError("start must be timezone-aware")
    start64 = np.datetime64(start.astimezone(timezone.utc)
                            .replace(tzinfo=None), "s")
    half = np.timedelta64(int(window.total_seconds() * 1e6 // 2), "us")
    speeds = series.speeds_ms()
    values = np.zeros(n_hours)
    mask = np.zeros(n_hours, dtype=bool)
    hours = start64 + np.arange(n_hours) * np.timedelta64(3600, "s")
    lo = np.searchsorted(series.times, hours - half, side="left")
    hi = np.searchsorted(series.times, hours + half, side="left")
    for i in range(n_hours):
        if hi[i] > lo[i]:
            values[i] = speeds[lo[i]:hi[i]].mean()
            mask[i] = True
    return values, mask


# ---------------------------------------------------------------------------
# parsers
# ---------------------------------------------------------------------------

def parse_asos_minute(path: str | Path) -> dict[str, RawSeries]:
    """Tolerant reader for one-minute station wind records (fixed-column).

    Supported layout per line: WBAN number in columns 0:5, call sign in
    5:9, observation time ``YYYYMMDDHHMM`` in columns 9:21 (UTC), and the
    wind fields as whitespace-separated numeric tokens after column 21,
    of which the first is the 2-minute direction and the second the
    2-minute speed in knots.  Lines that do not parse are counted per
    station (or dropped silently when no station is recognizable); the
    archive layout varies by year, so the CSV path is the robust one.
    """
    per_station: dict[str, list[tuple[datetime, float]]] = {}
    rejected: dict[str, int] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if len(line) < 22:
                continue
            call = line[5:9].strip()
            if not call:
                continue
            try:
                when = datetime.strptime(line[9:21], "%Y%m%d%H%M").replace(
                    tzinfo=timezone.utc)
                tokens = line[21:].split()
                numeric = [float(tok) for tok in tokens[:2]]
                if len(numeric) < 2:
                    raise ValueError("missing wind fields")
                speed_kn = numeric[1]
                if speed_kn < 0.0:
                    raise ValueError("negative speed")
            except ValueError:
                rejected[call] = rejected.get(call, 0) + 1
                continue
            per_station.setdefault(call, []).append((when, speed_kn))
    out: dict[str, RawSeries] = {}
    for call, rows in per_station.items():
        rows.sort(key=lambda r: r[0])
        # Keep the last record for duplicated minutes.
        dedup: dict[datetime, float] = {t: v for t, v in rows}
        times = np.array([np.datetime64(t.replace(tzinfo=None), "s")
                          for t in sorted(dedup)])
        speeds = np.array([dedup[t] for t in sorted(dedup)])
        out[call] = RawSeries(call, times, speeds, unit="kn",
                              n_rejected=rejected.get(call, 0))
    return out


def parse_speed_csv(path: str | Path) -> dict[str, RawSeries]:
    """Read ``timestamp,station,speed_kn`` CSV into per-station series."""
    per_station: dict[str, list[tuple[datetime, float]]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [c.strip() for c in header] != [
                "timestamp", "station", "speed_kn"]:
            raise PanelFormatError(
                f"{path}: expected header timestamp,station,speed_kn")
        for ln, rec in enumerate(r, start=2):
            if not rec:
                continue
            try:
                ts = datetime.fromisoformat(rec[0])
                if ts.tzinfo is None:
                    ts = ts.replace(tzinfo=timezone.utc)
                per_station.setdefault(rec[1], []).append((ts, float(rec[2])))
            except (IndexError, ValueError) as exc:
                raise PanelFormatError(
                    f"{path}:{ln}: bad record {rec!r}: {exc}") from exc
    out = {}
    for sid, rows in per_station.items():
        rows.sort(key=lambda r: r[0])
        times = np.array([np.datetime64(t.astimezone(timezone.utc)
                                        .replace(tzinfo=None), "s")
                          for t, _ in rows])
        speeds = np.array([v for _, v in rows])
        out[sid] = RawSeries(sid, times, speeds, unit="kn")
    return out


def read_station_csv(path: str | Path) -> list[StationMeta]:
    """Read ``id,lat,long`` station list."""
    out = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [c.strip() for c in header][:3] != [
                "id", "lat", "long"]:
            raise PanelFormatError(f"{path}: expected header id,lat,long")
        for ln, rec in enumerate(r, start=2):
            if not rec:
                continue
            try:
                out.append(StationMeta(rec[0], float(rec[1]), float(rec[2])))
            except (IndexError, ValueError) as exc:
                raise PanelFormatError(
                    f"{path}:{ln}: bad station {rec!r}: {exc}") from exc
    if not out:
        raise PanelFormatError(f"{path}: no stations")
    return out


def read_nwp_csv(path: str | Path, h: int = 24,
                 start: datetime | None = None) -> Panel:
    """Read a forecast extraction ``day,hour,grid_lat,grid_long,land_use,
    speed_ms`` into a panel on the grid-point set.

    Grid points are the unique (lat, long) pairs, ordered
    lexicographically, with ids ``g000``, ``g001``, ...; ``day`` is the
    1-based block index.  Missing (day, hour, point) combinations are
    masked.
    """
    start = start or datetime(2000, 1, 1, tzinfo=timezone.utc)
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        want = ["day", "hour", "grid_lat", "grid_long", "land_use",
                "speed_ms"]
        if header is None or [c.strip() for c in header] != want:
            raise PanelFormatError(
                f"{path}: expected header {','.join(want)}")
        for ln, rec in enumerate(r, start=2):
            if not rec:
                continue
            try:
                rows.append((int(rec[0]), int(rec[1]), float(rec[2]),
                             float(rec[3]), int(rec[4]), float(rec[5])))
            except (IndexError, ValueError) as exc:
                raise PanelFormatError(
                    f"{path}:{ln}: bad record {rec!r}: {exc}") from exc
    if not rows:
        raise PanelFormatError(f"{path}: no forecast records")
    coords = sorted({(la, lo) for _, _, la, lo, _, _ in rows})
    lu_by_coord: dict[tuple[float, float], int] = {}
    for _, _, la, lo, lu, _ in rows:
        prev = lu_by_coord.setdefault((la, lo), lu)
        if prev != lu:
            raise PanelFormatError(
                f"{path}: conflicting land use at grid point {(la, lo)}")
    points = [StationMeta(f"g{i:03d}", la, lo, land_use=lu_by_coord[(la, lo)])
              for i, (la, lo) in enumerate(coords)]
    col = {c: i for i, c in enumerate(coords)}
    K = max(d for d, *_ in rows)
    blocks = [DayBlock(k + 1, start + timedelta(hours=h * k), h)
              for k in range(K)]
    values = np.zeros((K, h, len(points)))
    mask = np.zeros((K, h, len(points)), dtype=bool)
    for d, t, la, lo, _, v in rows:
        if not (1 <= d <= K and 0 <= t < h):
            raise PanelFormatError(
                f"{path}: day/hour ({d},{t}) out of range")
        values[d - 1, t, col[(la, lo)]] = v
        mask[d - 1, t, col[(la, lo)]] = True
    return Panel("nwp", points, blocks, values, mask, transform=None)


def build_obs_panel(series: dict[str, RawSeries],
                    stations: list[StationMeta],
                    blocks: list[DayBlock],
                    window: timedelta = timedelta(hours=1)) -> Panel:
    """Resample per-station series onto the given blocks (raw m/s panel).

    Stations with no series at all are fully masked.
    """
    h = blocks[0].length
    K, J = len(blocks), len(stations)
    values = np.zeros((K, h, J))
    mask = np.zeros((K, h, J), dtype=bool)
    for j, s in enumerate(stations):
        if s.id not in series:
            continue
        for pos, b in enumerate(blocks):
            v, m = moving_average_resample(series[s.id], b.start, h, window)
            values[pos, :, j] = np.where(m, v, 0.0)
            mask[pos, :, j] = m
    return Panel("obs", stations, blocks, values, mask, transform=None)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def _kmeans_pp_init(X: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min([(np.square(X - c).sum(axis=1)) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0.0:
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    return np.array(centers)


def cluster_stations(panel: Panel, k: int, seed: int = 0) -> np.ndarray:
    """Group stations by mean hour-of-day profile and coordinates.

    Features per station: the hour-of-day mean of available values (h
    columns) plus latitude and longitude, each feature standardized.
    k-means with seeded k-means++ starts; rows are canonicalized by
    lexicographic sort before seeding, so permuting the station order
    permutes labels but never changes the grouping.  Returns 1-based
    labels in station order; every cluster is non-empty.
    """
    J, h = panel.n_stations, panel.h
    if not 1 <= k <= J:
        raise ValueError(f"k must be in 1..{J}")
    prof = np.zeros((J, h))
    for j in range(J):
        for t in range(h):
            sel = panel.mask[:, t, j]
            if not sel.any():
                raise ValueError(
                    f"station {panel.stations[j].id} has no data at hour {t}")
            prof[j, t] = panel.values[sel, t, j].mean()
    X = np.column_stack([prof,
                         [s.lat for s in panel.stations],
                         [s.long for s in panel.stations]])
    sd = X.std(axis=0)
    mu = X.mean(axis=0)
    X = (X - mu) / np.where(sd > 0.0, sd, 1.0)
    if np.allclose(X, X[0]):
        raise ValueError("stations are indistinguishable; cannot cluster")

    # Canonical row order -> permutation-invariant seeding.
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(Xs, k, rng)
    labels_s = np.full(J, -1, dtype=int)
    for _it in range(300):
        d2 = np.square(Xs[:, None, :] - centers[None, :, :]).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # Re-seed empty clusters with the farthest point.
        for c in range(k):
            if not (new_labels == c).any():
                far = d2[np.arange(J), new_labels].argmax()
                new_labels[far] = c
        if (new_labels == labels_s).all():
            break
        labels_s = new_labels
        for c in range(k):
            centers[c] = Xs[labels_s == c].mean(axis=0)
    labels = np.empty(J, dtype=int)
    labels[order] = labels_s
    # Relabel by first appearance in canonical order for determinism.
    remap: dict[int, int] = {}
    for lab in labels_s:
        if lab not in remap:
            remap[lab] = len(remap) + 1
    return np.array([remap[v] for v in labels])
