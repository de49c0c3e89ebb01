"""Shared domain types and conventions.

Everything downstream agrees on three things defined here:

* the station / day-block / panel data model and its CSV + JSON-sidecar
  serialization,
* the vectorization convention for one day block — station-major, hour
  fastest within a station — which fixes the meaning of every covariance
  matrix in the package,
* small bookkeeping helpers (complete-block selection, unit constants).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

__all__ = [
    "KNOTS_TO_MS",
    "PanelFormatError",
    "StationMeta",
    "DayBlock",
    "BoxCoxSpec",
    "Panel",
    "vectorize",
    "devectorize",
    "block_slice",
    "complete_block_indices",
    "write_panel",
    "read_panel",
]

# 1 knot in metres per second.
KNOTS_TO_MS = 0.514444


class PanelFormatError(ValueError):
    """A panel file, sidecar, or parameter file is malformed."""


@dataclass(frozen=True)
class StationMeta:
    """Identity and siting attributes of one station or one grid point.

    ``land_use`` is an integer surface-category code; for measurement
    stations it is inherited from the nearest forecast grid point.
    ``cluster`` is an optional 1-based group label.
    """

    id: str
    lat: float
    long: float
    land_use: int | None = None
    cluster: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("station id must be non-empty")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat!r}")
        if not -180.0 <= self.long <= 180.0:
            raise ValueError(f"longitude out of range: {self.long!r}")


@dataclass(frozen=True)
class DayBlock:
    """One contiguous block of ``length`` hours, 1-based ``index``."""

    index: int
    start: datetime
    length: int = 24

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ValueError("block index is 1-based and must be >= 1")
        if self.length < 1:
            raise ValueError("block length must be >= 1")
        if self.start.tzinfo is None:
            raise ValueError("block start must be timezone-aware (UTC)")
        if self.start.minute or self.start.second or self.start.microsecond:
            raise ValueError("block start must fall on a whole hour")

    def hour_stamps(self) -> list[datetime]:
        return [self.start + timedelta(hours=k) for k in range(self.length)]


@dataclass(frozen=True)
class BoxCoxSpec:
    """Power-transform specification: exponent ``lam`` and additive ``shift``.

    The transform maps raw ``y`` to ``((y + shift)**lam - 1) / lam``
    (natural log at ``lam == 0``); ``shift`` keeps the argument positive.
    """

    lam: float
    shift: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.lam) or not math.isfinite(self.shift):
            raise ValueError("Box-Cox parameters must be finite")
        if self.shift < 0.0:
            raise ValueError("Box-Cox shift must be >= 0")


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.flags.writeable = False
    return a


@dataclass
class Panel:
    """Aligned hourly values for one source on a station set.

    ``values`` has shape ``(K, h, J)`` — day block, hour within block,
    station (in ``stations`` order).  ``mask`` is True where a value is
    available; masked entries of ``values`` are never read.  ``transform``
    records the power transform the values are expressed in; ``None``
    means raw metres per second.
    """

    source: str
    stations: list[StationMeta]
    blocks: list[DayBlock]
    values: np.ndarray
    mask: np.ndarray
    transform: BoxCoxSpec | None = None

    def __post_init__(self) -> None:
        if self.source not in ("obs", "nwp"):
            raise ValueError(f"unknown panel source: {self.source!r}")
        if not self.stations:
            raise ValueError("panel needs at least one station")
        if not self.blocks:
            raise ValueError("panel needs at least one block")
        lengths = {b.length for b in self.blocks}
        if len(lengths) != 1:
            raise ValueError("all blocks in a panel must share one length")
        indices = [b.index for b in self.blocks]
        if indices != sorted(indices) or len(set(indices)) != len(indices):
            raise ValueError("block indices must be strictly increasing")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ValueError("station ids must be unique within a panel")

        vals = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        want = (len(self.blocks), self.blocks[0].length, len(self.stations))
        if vals.shape != want or mask.shape != want:
            raise ValueError(
                f"values/mask shape {vals.shape}/{mask.shape} != {want}"
            )
        if not np.all(np.isfinite(vals[mask])):
            raise ValueError("available entries must be finite")
        if self.transform is None and mask.any() and vals[mask].min() < 0.0:
            raise ValueError("raw wind speeds must be non-negative")
        self.values = _as_readonly(vals)
        self.mask = _as_readonly(mask)

    @property
    def h(self) -> int:
        return self.blocks[0].length

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def station_ids(self) -> list[str]:
        return [s.id for s in self.stations]

    def block_position(self, block_index: int) -> int:
        """Position of 1-based ``block_index`` in the ``blocks`` list."""
        for pos, b in enumerate(self.blocks):
            if b.index == block_index:
                return pos
        raise KeyError(f"no block with index {block_index}")

    def with_values(self, values: np.ndarray,
                    transform: BoxCoxSpec | None) -> "Panel":
        """Same geometry/mask, new values (e.g. after a transform)."""
        return Panel(self.source, self.stations, self.blocks,
                     values, np.array(self.mask), transform)


def vectorize(block: np.ndarray) -> np.ndarray:
    """Flatten one ``(h, J)`` day block station-major, hour fastest.

    Entry ``j*h + t`` of the result is hour ``t`` at station ``j``, so a
    ``[[a, b], [c, d]]`` block (rows = hours) becomes ``(a, c, b, d)``.
    Every covariance matrix in the package is indexed this way.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("expected a 2-d (hours x stations) block")
    return block.T.reshape(-1).copy()


def devectorize(vec: np.ndarray, h: int, n_stations: int) -> np.ndarray:
    """Inverse of :func:`vectorize`: back to an ``(h, J)`` block."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (h * n_stations,):
        raise ValueError(f"vector length {vec.size} != h*J = {h * n_stations}")
    return vec.reshape(n_stations, h).T.copy()


def block_slice(panel: Panel, block_index: int) -> np.ma.MaskedArray:
    """One day block as an ``(h, J)`` masked array (1-based index).

    Unavailable positions are masked, never zero-filled.
    """
    pos = panel.block_position(block_index)
    return np.ma.MaskedArray(panel.values[pos], mask=~panel.mask[pos])


def complete_block_indices(*panels: Panel) -> list[int]:
    """Block indices (1-based) fully available in every given panel.

    Only blocks present in all panels qualify.  This is the retention rule
    for likelihood work: partially observed blocks are dropped whole.
    """
    if not panels:
        return []
    common: set[int] | None = None
    for p in panels:
        ok = {b.index for pos, b in enumerate(p.blocks) if p.mask[pos].all()}
        common = ok if common is None else (common & ok)
    return sorted(common or ())


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CSV_HEADER = ["day", "hour", "station_id", "value", "available"]


def _meta_path_for(csv_path: Path) -> Path:
    return csv_path.with_suffix(csv_path.suffix + ".meta.json")


def _station_to_json(s: StationMeta) -> dict:
    return asdict(s)


def _station_from_json(d: dict) -> StationMeta:
    return StationMeta(
        id=str(d["id"]), lat=float(d["lat"]), long=float(d["long"]),
        land_use=None if d.get("land_use") is None else int(d["land_use"]),
        cluster=None if d.get("cluster") is None else int(d["cluster"]),
    )


def write_panel(panel: Panel, csv_path: str | Path,
                meta_path: str | Path | None = None) -> tuple[Path, Path]:
    """Write a panel as ``day,hour,station_id,value,available`` CSV plus a
    JSON sidecar holding stations, block starts, and the transform.

    Values are written with full ``repr`` precision so that a
    write/read round trip is bit-exact.
    """
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else _meta_path_for(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for pos, b in enumerate(panel.blocks):
            for t in range(panel.h):
                for j, s in enumerate(panel.stations):
                    if panel.mask[pos, t, j]:
                        w.writerow([b.index, t, s.id,
                                    repr(float(panel.values[pos, t, j])), 1])
                    else:
                        w.writerow([b.index, t, s.id, "", 0])
    meta = {
        "source": panel.source,
        "h": panel.h,
        "blocks": [{"index": b.index, "start": b.start.isoformat()}
                   for b in panel.blocks],
        "stations": [_station_to_json(s) for s in panel.stations],
        "transform": None if panel.transform is None else
        {"lam": panel.transform.lam, "shift": panel.transform.shift},
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return csv_path, meta_path


def read_panel(csv_path: str | Path,
               meta_path: str | Path | None = None) -> Panel:
    """Read a panel written by :func:`write_panel`."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else _meta_path_for(csv_path)
    if not csv_path.exists():
        raise PanelFormatError(f"panel file not found: {csv_path}")
    if not meta_path.exists():
        raise PanelFormatError(f"panel sidecar not found: {meta_path}")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
        stations = [_station_from_json(d) for d in meta["stations"]]
        blocks = [
            DayBlock(index=int(d["index"]),
                     start=datetime.fromisoformat(d["start"]),
                     length=int(meta["h"]))
            for d in meta["blocks"]
        ]
        tr = meta.get("transform")
        transform = None if tr is None else BoxCoxSpec(float(tr["lam"]),
                                                       float(tr["shift"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise PanelFormatError(f"bad panel sidecar {meta_path}: {exc}") from exc

    h, K, J = int(meta["h"]), len(blocks), len(stations)
    col = {s.id: j for j, s in enumerate(stations)}
    row = {b.index: pos for pos, b in enumerate(blocks)}
    values = np.zeros((K, h, J))
    mask = np.zeros((K, h, J), dtype=bool)
    seen = np.zeros((K, h, J), dtype=bool)
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != _CSV_HEADER:
            raise PanelFormatError(
                f"{csv_path}: expected header {','.join(_CSV_HEADER)}")
        for ln, rec in enumerate(r, start=2):
            if not rec:
                continue
            try:
                day, hour, sid, val, avail = rec
                pos, t, j = row[int(day)], int(hour), col[sid]
                if not 0 <= t < h:
                    raise ValueError(f"hour {t} outside 0..{h - 1}")
                if seen[pos, t, j]:
                    raise ValueError("duplicate record")
                seen[pos, t, j] = True
                if int(avail):
                    values[pos, t, j] = float(val)
                    mask[pos, t, j] = True
            except (KeyError, ValueError) as exc:
                raise PanelFormatError(
                    f"{csv_path}:{ln}: bad record {rec!r}: {exc}") from exc
    try:
        return Panel(meta["source"], stations, blocks, values, mask, transform)
    except ValueError as exc:
        raise PanelFormatError(f"{csv_path}: {exc}") from exc
