"""Station-level forecasting from a fitted model.

Two routes produce the same predictive law for stations given a complete
forecast block: general Gaussian conditioning on the assembled joint
moments, and the direct form (transition applied to the forecast, plus
the station-layer mean and covariance) that the model's layering implies.
Both are kept so they can check each other.  On top of that law:
counter-based scenario sampling, back-transformation to raw wind speed,
and parameter extension to stations that were never fitted.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BoxCoxSpec, PanelFormatError, StationMeta, vectorize
from .model import (CovarianceMatrix, Geometry, assemble_joint, build_lambda,
                    cov_marginal, mean_cond_vector)
from .params import ModelStructure, Theta
from .transform import detransform_values

__all__ = [
    "PredictiveDistribution",
    "ScenarioSet",
    "krige",
    "conditional_forecast",
    "extend_for_stations",
    "sample_scenarios",
    "predictive_mean_forecast",
    "write_scenarios",
    "read_scenarios",
]

_FULL = ModelStructure.full()


@dataclass
class PredictiveDistribution:
    """Gaussian law of one vectorized station block in model space."""

    mean: np.ndarray
    cov: CovarianceMatrix
    h: int
    station_ids: list[str]

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        expect = self.h * len(self.station_ids)
        if self.mean.shape != (expect,) or self.cov.dim != expect:
            raise ValueError("mean/cov size does not match h * stations")

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    def block(self) -> np.ndarray:
        """Mean as an (h, n_stations) block."""
        return self.mean.reshape(self.n_stations, self.h).T

    def marginal_sd(self) -> np.ndarray:
        """Per-coordinate standard deviations, vectorized order."""
        return np.sqrt(np.clip(np.diag(self.cov.values), 0.0, None))

    def restrict(self, station_ids: list[str]) -> "PredictiveDistribution":
        """Marginal law of a subset of stations (order as given)."""
        pos = [self.station_ids.index(s) for s in station_ids]
        idx = np.concatenate([np.arange(p * self.h, (p + 1) * self.h)
                              for p in pos])
        sub = self.cov.values[np.ix_(idx, idx)]
        return PredictiveDistribution(self.mean[idx],
                                      CovarianceMatrix.from_dense(sub),
                                      self.h, list(station_ids))


def krige(mean: np.ndarray, cov: np.ndarray | CovarianceMatrix,
          observed_idx: np.ndarray, y_observed: np.ndarray,
          target_idx: np.ndarray | None = None
          ) -> tuple[np.ndarray, CovarianceMatrix]:
    """Condition a joint Gaussian on an observed coordinate subset.

    Returns the conditional mean and covariance of ``target_idx`` (the
    complement of ``observed_idx`` when omitted):
    ``m_T + S_TO S_OO^-1 (y - m_O)`` and ``S_TT - S_TO S_OO^-1 S_OT``.
    """
    mean = np.asarray(mean, dtype=float)
    S = cov.values if isinstance(cov, CovarianceMatrix) else \
        np.asarray(cov, dtype=float)
    obs = np.asarray(observed_idx, dtype=int)
    if obs.size != np.unique(obs).size:
        raise ValueError("observed indices must be unique")
    if target_idx is None:
        tgt = np.setdiff1d(np.arange(mean.size), obs)
    else:
        tgt = np.asarray(target_idx, dtype=int)
        if np.intersect1d(tgt, obs).size:
            raise ValueError("target indices overlap observed indices")
    y = np.asarray(y_observed, dtype=float)
    if y.shape != (obs.size,):
        raise ValueError("observed values do not match observed indices")
    Soo = CovarianceMatrix.from_dense(S[np.ix_(obs, obs)])
    Sto = S[np.ix_(tgt, obs)]
    m = mean[tgt] + Sto @ Soo.solve(y - mean[obs])
    C = S[np.ix_(tgt, tgt)] - Sto @ Soo.solve(Sto.T)
    return m, CovarianceMatrix.from_dense(0.5 * (C + C.T),
                                          symmetry_tol=1e-8)


def conditional_forecast(theta: Theta, geom: Geometry,
                         y_nwp_block: np.ndarray,
                         structure: ModelStructure = _FULL,
                         method: str = "direct") -> PredictiveDistribution:
    """Predictive law of all stations given one complete forecast block.

    ``method="direct"`` uses the model's layering: conditioning on the
    whole forecast block collapses to transition-shifted station-layer
    moments.  ``method="krige"`` conditions the assembled joint law
    numerically; it must agree to rounding and exists as a cross-check.
    """
    y = np.asarray(y_nwp_block, dtype=float)
    if y.ndim == 2:
        y = vectorize(y)
    nh = geom.h * geom.n_points
    if y.shape != (nh,):
        raise ValueError("forecast block does not match geometry")
    ids = [s.id for s in geom.stations]
    if method == "direct":
        lam = build_lambda(theta, geom, structure)
        mean = mean_cond_vector(theta, geom) + lam.apply(y)
        cov = cov_marginal(theta, geom, "cond", structure)
        return PredictiveDistribution(mean, cov, geom.h, ids)
    if method == "krige":
        jm = assemble_joint(theta, geom, structure)
        obs_idx = np.arange(jm.obs_dim, jm.obs_dim + jm.nwp_dim)
        tgt_idx = np.arange(jm.obs_dim)
        m, C = krige(jm.mean, jm.cov, obs_idx, y, tgt_idx)
        return PredictiveDistribution(m, C, geom.h, ids)
    raise ValueError(f"unknown method {method!r}")


def extend_for_stations(theta: Theta, geom: Geometry,
                        new_stations: list[StationMeta]
                        ) -> tuple[Theta, Geometry, list[str]]:
    """Extend fitted parameters to stations outside the fitted set.

    New stations get the fitted-station average of the station-layer
    kernel values (flagged, since nothing was estimated for them); the
    mean surfaces and transition weights need only coordinates and land
    use, which the rebuilt geometry provides.  The coordinate origin and
    land-use categories are frozen from the fitted geometry.
    """
    known = {s.id for s in geom.stations}
    for s in new_stations:
        if s.id in known:
            raise ValueError(f"station {s.id!r} is already in the geometry")
    flags = [f"site-kernel-averaged:{s.id}" for s in new_stations]
    geom2 = geom.with_stations(list(geom.stations) + list(new_stations))
    cc = theta.cond_cov
    theta2 = theta.copy()
    m = len(new_stations)
    theta2.cond_cov.site_sill = np.concatenate(
        [cc.site_sill, np.full(m, cc.site_sill.mean())])
    theta2.cond_cov.site_decay = np.concatenate(
        [cc.site_decay, np.full(m, cc.site_decay.mean())])
    theta2.cond_cov.site_nugget = np.concatenate(
        [cc.site_nugget, np.full(m, cc.site_nugget.mean())])
    return theta2, geom2, flags


@dataclass
class ScenarioSet:
    """Equally likely joint draws from one predictive law.

    ``values`` has shape ``(n, h, n_stations)``; ``transform`` is the
    space the draws live in (None means raw m/s), and ``n_clamped``
    counts draws clipped to the domain boundary on back-transformation.
    """

    values: np.ndarray
    station_ids: list[str]
    transform: BoxCoxSpec | None
    n_clamped: int = 0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_raw(self, spec: BoxCoxSpec | None) -> "ScenarioSet":
        """Back-transform every draw to raw m/s (counts clamping)."""
        if self.transform is None:
            raise ValueError("scenarios are already in raw space")
        raw, n_clamped = detransform_values(self.values, spec)
        raw = np.maximum(raw, 0.0)
        return ScenarioSet(raw, list(self.station_ids), None,
                           self.n_clamped + n_clamped)


def sample_scenarios(dist: PredictiveDistribution, n: int,
                     seed: int = 0) -> ScenarioSet:
    """Draw ``n`` joint scenarios with a counter-based generator, so the
    set is reproducible and independent of how many are drawn."""
    if n < 1:
        raise ValueError("need at least one scenario")
    rng = np.random.Generator(np.random.Philox(seed))
    L = dist.cov.cholesky()
    z = rng.standard_normal((n, dist.mean.size))
    draws = dist.mean + z @ L.T
    J = dist.n_stations
    vals = draws.reshape(n, J, dist.h).transpose(0, 2, 1)
    return ScenarioSet(vals, list(dist.station_ids), BoxCoxSpec(1.0, 0.0))


def predictive_mean_forecast(dist: PredictiveDistribution,
                             spec: BoxCoxSpec | None,
                             n: int = 1000, seed: int = 0) -> np.ndarray:
    """Raw-space predictive mean, as an (h, n_stations) block.

    In model space the mean is exact; the nonlinear back-transform makes
    the raw mean an integral, estimated by antithetic Monte Carlo unless
    ``spec`` is None (identity) or the law is degenerate (plug-in)."""
    J = dist.n_stations
    mean_block = dist.block()
    if spec is None:
        return np.maximum(mean_block, 0.0)
    if float(np.abs(np.diag(dist.cov.values)).max()) == 0.0:
        raw, _ = detransform_values(mean_block, spec)
        return np.maximum(raw, 0.0)
    rng = np.random.Generator(np.random.Philox(seed))
    L = dist.cov.cholesky()
    z = rng.standard_normal((n, dist.mean.size))
    draws = np.concatenate([dist.mean + z @ L.T, dist.mean - z @ L.T])
    raw, _ = detransform_values(draws, spec)
    raw = np.maximum(raw, 0.0)
    out = raw.mean(axis=0).reshape(J, dist.h).T
    return out


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

_SCN_HEADER = ["scenario", "day", "hour", "station_id", "value"]


def write_scenarios(scn: ScenarioSet, csv_path: str | Path,
                    block_index: int,
                    meta_path: str | Path | None = None
                    ) -> tuple[Path, Path]:
    """Write a scenario set as ``scenario,day,hour,station_id,value`` rows
    (full float precision) plus a JSON sidecar with the block index,
    member count, station ids, transform, and clamp count."""
    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else \
        csv_path.with_name(csv_path.name + ".meta.json")
    n, h, J = scn.values.shape
    day = int(block_index)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SCN_HEADER)
        for i in range(n):
            for t in range(h):
                for j in range(J):
                    w.writerow([i + 1, day, t, scn.station_ids[j],
                                repr(float(scn.values[i, t, j]))])
    meta = {
        "source": "scenarios",
        "block": int(block_index),
        "h": h,
        "n_scenarios": n,
        "station_ids": list(scn.station_ids),
        "transform": None if scn.transform is None else
        {"lam": scn.transform.lam, "shift": scn.transform.shift},
        "n_clamped": int(scn.n_clamped),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return csv_path, meta_path


def read_scenarios(csv_path: str | Path) -> tuple[ScenarioSet, int]:
    """Read a scenario file; returns the set and its block index."""
    csv_path = Path(csv_path)
    meta_path = csv_path.with_name(csv_path.name + ".meta.json")
    if not csv_path.exists():
        raise PanelFormatError(f"scenario file not found: {csv_path}")
    if not meta_path.exists():
        raise PanelFormatError(f"scenario sidecar not found: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("source") != "scenarios":
        raise PanelFormatError(f"{meta_path}: not a scenario sidecar")
    try:
        ids = [str(s) for s in meta["station_ids"]]
        h, n = int(meta["h"]), int(meta["n_scenarios"])
        tr = meta.get("transform")
        spec = None if tr is None else BoxCoxSpec(float(tr["lam"]),
                                                  float(tr["shift"]))
        day = int(meta["block"])
    except (KeyError, TypeError, ValueError) as exc:
        raise PanelFormatError(f"{meta_path}: malformed sidecar: {exc}") \
            from exc
    pos = {s: j for j, s in enumerate(ids)}
    values = np.full((n, h, len(ids)), np.nan)
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or [c.strip() for c in header] != _SCN_HEADER:
            raise PanelFormatError(
                f"{csv_path}: expected header {','.join(_SCN_HEADER)}")
        for ln, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                i = int(row[0]) - 1
                if int(row[1]) != day:
                    raise ValueError("day column disagrees with sidecar")
                t = int(row[2])
                j = pos[row[3]]
                values[i, t, j] = float(row[4])
            except (ValueError, KeyError, IndexError) as exc:
                raise PanelFormatError(
                    f"{csv_path}:{ln}: bad scenario row ({exc})") from exc
    if np.isnan(values).any():
        raise PanelFormatError(f"{csv_path}: incomplete scenario grid")
    out = ScenarioSet(values, ids, spec, int(meta.get("n_clamped", 0)))
    return out, day
