"""Named parameter pack for the two-layer model, plus its flat-vector
codec (used by the optimizer and the numerical gradient) and the
``name=value`` text file format with ``#se:`` companions.

The pack mirrors the model's four groups:

* ``nwp_mean``   — harmonic-profile coefficients times a per-site factor
  (land-use gain + per-site gain) for the forecast layer mean,
* ``nwp_cov``    — a shared temporal kernel mixed across sites by
  tridiagonal site operators, plus a per-site temporal kernel,
* ``cond_mean``  — harmonic bias correction plus the forecast-to-station
  transition weights (temporal decay per land use, affine weights for the
  three nearest grid points),
* ``cond_cov``   — same family as ``nwp_cov``, independent values, on the
  station set.

Positivity-constrained entries (sills, decays, nuggets) live in log space
in the packed vector, so any real vector decodes to a valid pack.  The
weight of the decaying part of the temporal transition is tied to its
lag-infinity floor (they sum to one), so only the former is stored.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import PanelFormatError

__all__ = [
    "MeanParams",
    "CovParams",
    "CondMeanParams",
    "Theta",
    "ModelStructure",
    "ThetaCodec",
    "write_theta",
    "read_theta",
]

_BANDS = ("diag", "sub", "sup")
_ORDERS = ("c0", "c1", "c2")
_COORDS = ("lat", "long")


@dataclass
class MeanParams:
    """Forecast-layer mean: ``profile(t) * (lu_gain[lu(s)] + site_gain[s])``."""

    harm: np.ndarray        # (7,) const, cos/sin of periods h, h/2, h/3
    lu_gain: np.ndarray     # (n_lu,)
    site_gain: np.ndarray   # (n_sites,)

    def __post_init__(self) -> None:
        self.harm = np.asarray(self.harm, dtype=float)
        self.lu_gain = np.asarray(self.lu_gain, dtype=float)
        self.site_gain = np.asarray(self.site_gain, dtype=float)
        if self.harm.shape != (7,):
            raise ValueError("nwp mean needs 7 harmonic coefficients")


@dataclass
class CovParams:
    """One space-time covariance: shared kernel mixed by tridiagonal site
    operators plus an independent per-site kernel.

    ``tilt[band, order, coord]`` are the coordinate tilts of the site
    operators' band polynomials: band entry at hour-index ``i`` is
    ``sum_o (1 + tilt[b,o,0]*lat + tilt[b,o,1]*long) * i**o``.
    """

    tilt: np.ndarray          # (3, 3, 2)
    common_sill: float
    common_decay: float
    common_nugget: float
    site_sill: np.ndarray     # (n_sites,)
    site_decay: np.ndarray
    site_nugget: np.ndarray

    def __post_init__(self) -> None:
        self.tilt = np.asarray(self.tilt, dtype=float)
        if self.tilt.shape != (3, 3, 2):
            raise ValueError("tilt must have shape (3, 3, 2)")
        for name in ("site_sill", "site_decay", "site_nugget"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        sizes = {self.site_sill.size, self.site_decay.size,
                 self.site_nugget.size}
        if len(sizes) != 1:
            raise ValueError("per-site kernel arrays must share one length")

    def validate_positive(self) -> None:
        vals = np.concatenate([
            [self.common_sill, self.common_decay, self.common_nugget],
            self.site_sill, self.site_decay, self.site_nugget])
        if not np.all(vals > 0.0):
            raise ValueError("sills, decays and nuggets must be > 0")


@dataclass
class CondMeanParams:
    """Station-layer mean correction and forecast-transition weights.

    ``tw_base[l]`` is the lag-0 weight of the decaying part of the
    temporal transition for land use ``l`` (the flat remainder is
    ``1 - tw_base`` so the lag-0 weight is one exactly); ``tw_decay[l]``
    its decay rate.  ``nb_weight[k]`` holds the (const, |dlat|, |dlong|)
    affine coefficients of the k-th nearest grid point's weight.
    """

    harm: np.ndarray        # (5,) const, cos/sin of periods h, h/2
    lat_gain: float
    long_gain: float
    tw_base: np.ndarray     # (n_lu,)
    tw_decay: np.ndarray    # (n_lu,) > 0
    nb_weight: np.ndarray   # (3, 3)

    def __post_init__(self) -> None:
        self.harm = np.asarray(self.harm, dtype=float)
        self.tw_base = np.asarray(self.tw_base, dtype=float)
        self.tw_decay = np.asarray(self.tw_decay, dtype=float)
        self.nb_weight = np.asarray(self.nb_weight, dtype=float)
        if self.harm.shape != (5,):
            raise ValueError("station mean needs 5 harmonic coefficients")
        if self.nb_weight.shape != (3, 3):
            raise ValueError("nb_weight must have shape (3, 3)")

    @property
    def tw_tail(self) -> np.ndarray:
        """Lag-infinity floor of the temporal transition, one minus base."""
        return 1.0 - self.tw_base


@dataclass
class Theta:
    """Full parameter pack for the two-layer model."""

    nwp_mean: MeanParams
    nwp_cov: CovParams
    cond_mean: CondMeanParams
    cond_cov: CovParams

    def copy(self) -> "Theta":
        return copy.deepcopy(self)

    @property
    def n_lu(self) -> int:
        return self.nwp_mean.lu_gain.size

    def validate(self) -> None:
        self.nwp_cov.validate_positive()
        self.cond_cov.validate_positive()
        if not np.all(self.cond_mean.tw_decay > 0.0):
            raise ValueError("temporal transition decays must be > 0")


@dataclass(frozen=True)
class ModelStructure:
    """Which parts of the model are active.

    The three named structures mirror the usual reduction ladder:
    ``full`` keeps everything; ``temporal`` drops all cross-site
    interactions (no shared covariance kernel, transition from the nearest
    grid point only); ``bias`` additionally drops temporal dependence
    (same-hour transition only, diagonal covariances).
    """

    common_signal: bool = True
    n_neighbors: int = 3
    temporal_weights: bool = True
    site_temporal: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.n_neighbors <= 3:
            raise ValueError("n_neighbors must be in 1..3")

    @classmethod
    def full(cls) -> "ModelStructure":
        return cls()

    @classmethod
    def temporal(cls) -> "ModelStructure":
        return cls(common_signal=False, n_neighbors=1)

    @classmethod
    def bias(cls) -> "ModelStructure":
        return cls(common_signal=False, n_neighbors=1,
                   temporal_weights=False, site_temporal=False)

    @classmethod
    def by_name(cls, name: str) -> "ModelStructure":
        try:
            return {"full": cls.full, "temporal": cls.temporal,
                    "bias": cls.bias}[name]()
        except KeyError:
            raise ValueError(f"unknown model structure {name!r}") from None

    @property
    def name(self) -> str:
        for n in ("full", "temporal", "bias"):
            if self == ModelStructure.by_name(n):
                return n
        return "custom"


# ---------------------------------------------------------------------------
# flat-vector codec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Entry:
    name: str
    group: str       # attribute path on Theta, dot-separated
    index: tuple     # numpy index into the leaf array, or () for scalars
    positive: bool


def _cov_entries(prefix: str, ids: list[str],
                 structure: ModelStructure) -> list[_Entry]:
    out: list[_Entry] = []
    g = f"{prefix}_cov"
    if structure.common_signal:
        for b, bn in enumerate(_BANDS):
            for o, on in enumerate(_ORDERS):
                for c, cn in enumerate(_COORDS):
                    out.append(_Entry(f"{prefix}_mix_{bn}_{on}_{cn}",
                                      f"{g}.tilt", (b, o, c), False))
        out.append(_Entry(f"{prefix}_common_sill", f"{g}.common_sill", (), True))
        out.append(_Entry(f"{prefix}_common_decay", f"{g}.common_decay", (), True))
        out.append(_Entry(f"{prefix}_common_nugget", f"{g}.common_nugget", (), True))
    for j, sid in enumerate(ids):
        if structure.site_temporal:
            out.append(_Entry(f"{prefix}_site_sill.{sid}",
                              f"{g}.site_sill", (j,), True))
            out.append(_Entry(f"{prefix}_site_decay.{sid}",
                              f"{g}.site_decay", (j,), True))
        out.append(_Entry(f"{prefix}_site_nugget.{sid}",
                          f"{g}.site_nugget", (j,), True))
    return out


class ThetaCodec:
    """Bijection between the active part of a :class:`Theta` and a flat
    real vector; positive parameters are log-transformed.

    Construction needs the station-set shape: land-use categories,
    forecast-point ids, station ids, and the active
    :class:`ModelStructure`.  Names are stable and id-based, so packed
    order survives station reordering in files.
    """

    def __init__(self, land_uses: tuple[int, ...], nwp_ids: list[str],
                 obs_ids: list[str],
                 structure: ModelStructure | None = None) -> None:
        self.structure = structure or ModelStructure.full()
        self.land_uses = tuple(land_uses)
        self.nwp_ids = list(nwp_ids)
        self.obs_ids = list(obs_ids)
        e: list[_Entry] = []
        for i in range(7):
            e.append(_Entry(f"nwp_harm_{i}", "nwp_mean.harm", (i,), False))
        for li, lu in enumerate(self.land_uses):
            e.append(_Entry(f"nwp_lu_gain_{lu}", "nwp_mean.lu_gain",
                            (li,), False))
        for j, sid in enumerate(self.nwp_ids):
            e.append(_Entry(f"nwp_site_gain.{sid}", "nwp_mean.site_gain",
                            (j,), False))
        e.extend(_cov_entries("nwp", self.nwp_ids, self.structure))
        for i in range(5):
            e.append(_Entry(f"obs_harm_{i}", "cond_mean.harm", (i,), False))
        e.append(_Entry("obs_lat_gain", "cond_mean.lat_gain", (), False))
        e.append(_Entry("obs_long_gain", "cond_mean.long_gain", (), False))
        if self.structure.temporal_weights:
            for li, lu in enumerate(self.land_uses):
                e.append(_Entry(f"tw_base_{lu}", "cond_mean.tw_base",
                                (li,), False))
                e.append(_Entry(f"tw_decay_{lu}", "cond_mean.tw_decay",
                                (li,), True))
        for k in range(self.structure.n_neighbors):
            for c, cn in enumerate(("const", "dlat", "dlong")):
                e.append(_Entry(f"nb{k + 1}_{cn}", "cond_mean.nb_weight",
                                (k, c), False))
        e.extend(_cov_entries("cond", self.obs_ids, self.structure))
        self._entries = e
        self.names = [x.name for x in e]
        self.positive = np.array([x.positive for x in e])
        # which Theta component each packed entry lives in
        # ("nwp_mean", "nwp_cov", "cond_mean" or "cond_cov")
        self.groups = tuple(x.group.split(".", 1)[0] for x in e)

    @property
    def size(self) -> int:
        return len(self._entries)

    @staticmethod
    def _leaf(theta: Theta, group: str):
        obj: object = theta
        *parents, leaf = group.split(".")
        for p in parents:
            obj = getattr(obj, p)
        return obj, leaf

    def pack(self, theta: Theta) -> np.ndarray:
        x = np.empty(self.size)
        for i, ent in enumerate(self._entries):
            obj, leaf = self._leaf(theta, ent.group)
            v = getattr(obj, leaf)
            v = float(v[ent.index]) if ent.index else float(v)
            if ent.positive:
                if v <= 0.0:
                    raise ValueError(
                        f"{ent.name} must be > 0 to pack (got {v})")
                v = math.log(v)
            x[i] = v
        return x

    def unpack(self, x: np.ndarray, base: Theta) -> Theta:
        """Decode ``x`` onto a copy of ``base`` (inactive entries kept)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"packed vector must have length {self.size}")
        theta = base.copy()
        for i, ent in enumerate(self._entries):
            v = math.exp(x[i]) if ent.positive else float(x[i])
            obj, leaf = self._leaf(theta, ent.group)
            if ent.index:
                getattr(obj, leaf)[ent.index] = v
            else:
                setattr(obj, leaf, v)
        return theta

    def natural_scale(self, x: np.ndarray) -> np.ndarray:
        """|d(natural)/d(packed)| at ``x`` — delta-method factors."""
        out = np.ones(self.size)
        out[self.positive] = np.exp(x[self.positive])
        return out


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

def write_theta(path: str | Path, theta: Theta, codec: ThetaCodec,
                h: int, center: tuple[float, float],
                std_errors: np.ndarray | None = None,
                extra: dict[str, str] | None = None) -> Path:
    """Write parameters as ``name=value`` lines with full float precision.

    Standard errors, when given (aligned with ``codec.names``, natural
    scale), follow each parameter as a ``#se: name=value`` line.  Header
    fields carry everything needed to rebuild the fitted context: block
    length, coordinate origin, land-use categories, site id lists, and
    the active structure.
    """
    x = codec.pack(theta)
    nat = x.copy()
    nat[codec.positive] = np.exp(nat[codec.positive])
    path = Path(path)
    lines = [
        "# windfuse model parameters",
        "format=1",
        f"structure={codec.structure.name}",
        f"h={h}",
        f"center_lat={float(center[0])!r}",
        f"center_long={float(center[1])!r}",
        "land_use=" + ",".join(str(v) for v in codec.land_uses),
        "nwp_ids=" + ",".join(codec.nwp_ids),
        "obs_ids=" + ",".join(codec.obs_ids),
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    for i, name in enumerate(codec.names):
        lines.append(f"{name}={float(nat[i])!r}")
        if std_errors is not None and np.isfinite(std_errors[i]):
            lines.append(f"#se: {name}={float(std_errors[i])!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _neutral_theta(land_uses: tuple[int, ...], n_nwp: int,
                   n_obs: int) -> Theta:
    n_lu = len(land_uses)

    def cov(n: int) -> CovParams:
        return CovParams(np.zeros((3, 3, 2)), 1.0, 1.0, 1.0,
                         np.ones(n), np.ones(n), np.ones(n))

    return Theta(
        MeanParams(np.zeros(7), np.zeros(n_lu), np.zeros(n_nwp)),
        cov(n_nwp),
        CondMeanParams(np.zeros(5), 0.0, 0.0, np.full(n_lu, 0.5),
                       np.ones(n_lu), np.zeros((3, 3))),
        cov(n_obs),
    )


def read_theta(path: str | Path) -> tuple[Theta, ThetaCodec, dict]:
    """Read a parameter file written by :func:`write_theta`.

    Returns the pack, the codec reconstructed from the header, and a meta
    dict with keys ``h``, ``center``, ``structure``, plus ``se`` (a
    name->value dict, possibly empty) and any extra header fields.
    """
    path = Path(path)
    if not path.exists():
        raise PanelFormatError(f"parameter file not found: {path}")
    header: dict[str, str] = {}
    values: dict[str, float] = {}
    se: dict[str, float] = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#se:"):
            body = line[4:].strip()
            name, _, val = body.partition("=")
            try:
                se[name.strip()] = float(val)
            except ValueError as exc:
                raise PanelFormatError(f"{path}:{ln}: bad SE line") from exc
            continue
        if line.startswith("#"):
            continue
        name, eq, val = line.partition("=")
        if not eq:
            raise PanelFormatError(f"{path}:{ln}: expected name=value")
        name = name.strip()
        val = val.strip()
        if name in _HEADER_FIELDS or not _is_param(name):
            header[name] = val
        else:
            try:
                values[name] = float(val)
            except ValueError as exc:
                raise PanelFormatError(
                    f"{path}:{ln}: bad value for {name}") from exc
    try:
        land_uses = tuple(int(v) for v in header["land_use"].split(",") if v)
        nwp_ids = [v for v in header["nwp_ids"].split(",") if v]
        obs_ids = [v for v in header["obs_ids"].split(",") if v]
        structure = ModelStructure.by_name(header.get("structure", "full"))
        h = int(header["h"])
        center = (float(header["center_lat"]), float(header["center_long"]))
    except (KeyError, ValueError) as exc:
        raise PanelFormatError(f"{path}: incomplete header: {exc}") from exc

    codec = ThetaCodec(land_uses, nwp_ids, obs_ids, structure)
    theta = _neutral_theta(land_uses, len(nwp_ids), len(obs_ids))
    x = np.empty(codec.size)
    for i, name in enumerate(codec.names):
        if name not in values:
            raise PanelFormatError(f"{path}: missing parameter {name}")
        v = values[name]
        if codec.positive[i]:
            if v <= 0.0:
                raise PanelFormatError(f"{path}: {name} must be > 0")
            v = math.log(v)
        x[i] = v
    theta = codec.unpack(x, theta)
    meta = {"h": h, "center": center, "structure": structure, "se": se}
    for k, v in header.items():
        if k not in ("h", "center_lat", "center_long", "structure",
                     "land_use", "nwp_ids", "obs_ids", "format"):
            meta[k] = v
    return theta, codec, meta


_HEADER_FIELDS = frozenset({
    "format", "structure", "h", "center_lat", "center_long",
    "land_use", "nwp_ids", "obs_ids",
})
_PARAM_PREFIXES = ("nwp_", "obs_", "cond_", "tw_", "nb")


def _is_param(name: str) -> bool:
    return name.startswith(_PARAM_PREFIXES)
