"""Synthetic geometries, parameter packs, and simulated panels.

Simulation draws each day block independently from the two-layer model:
first the forecast block from its marginal, then the station block from
its conditional given the forecast draw.  Per-block RNG streams are
spawned from one seed, so results do not depend on evaluation order.
"""

from __future__ import annotations

from datetime import datetime, timezone, timedelta

import numpy as np

from .core import BoxCoxSpec, DayBlock, Panel, StationMeta
from .model import Geometry
from .params import (CondMeanParams, CovParams, MeanParams, ModelStructure,
                     Theta)
from .transform import detransform_values

__all__ = [
    "make_test_geometry",
    "random_theta",
    "simulate_panel",
]

_FULL = ModelStructure.full()


def make_test_geometry(n_stations: int, n_grid: int, h: int = 24,
                       seed: int = 0) -> Geometry:
    """Random stations over a ~2-degree box plus a regular forecast grid.

    Grid points carry 2 land-use categories (3 when the grid has at
    least 6 points); stations inherit the category of their nearest grid
    point.
    """
    if n_grid < 3:
        raise ValueError("need at least 3 grid points")
    rng = np.random.default_rng(seed)
    lat0, long0 = 44.0, -89.0
    stations = [
        StationMeta(f"s{i:02d}",
                    lat0 + 2.0 * rng.random(),
                    long0 + 2.0 * rng.random())
        for i in range(n_stations)
    ]
    n_lu = 2 if n_grid < 6 else 3
    side = int(np.ceil(np.sqrt(n_grid)))
    lats = np.linspace(lat0 - 0.1, lat0 + 2.1, side)
    longs = np.linspace(long0 - 0.1, long0 + 2.1, side)
    points = []
    for i in range(n_grid):
        r, c = divmod(i, side)
        points.append(StationMeta(f"g{i:03d}", float(lats[r]),
                                  float(longs[c]),
                                  land_use=(i % n_lu) + 1))
    return Geometry.build(stations, points, h)


def random_theta(geom: Geometry, seed: int = 0,
                 harm_scale: float = 0.5) -> Theta:
    """A valid random parameter pack, well-conditioned for the geometry.

    Sills/decays/nuggets are drawn positive; tilt coefficients are kept
    small so the site-operator band polynomials stay near their neutral
    values over the centered coordinate range.
    """
    rng = np.random.default_rng(seed)
    n_lu = len(geom.land_uses)
    n, J = geom.n_points, geom.n_stations

    def cov(m: int) -> CovParams:
        return CovParams(
            tilt=rng.uniform(-0.15, 0.15, size=(3, 3, 2)),
            common_sill=float(rng.uniform(0.5, 1.5) * 1e-3),
            common_decay=float(rng.uniform(0.1, 0.8)),
            common_nugget=float(rng.uniform(0.2, 0.8) * 1e-3),
            site_sill=rng.uniform(0.3, 1.2, size=m),
            site_decay=rng.uniform(0.2, 1.0, size=m),
            site_nugget=rng.uniform(0.1, 0.4, size=m),
        )

    harm7 = np.concatenate([[rng.uniform(4.0, 6.0)],
                            rng.uniform(-harm_scale, harm_scale, 6)])
    harm5 = np.concatenate([[rng.uniform(1.0, 2.0)],
                            rng.uniform(-harm_scale, harm_scale, 4)])
    nb = np.column_stack([
        np.array([0.55, 0.2, 0.1]) + rng.uniform(-0.05, 0.05, 3),
        rng.uniform(-0.1, 0.1, 3),
        rng.uniform(-0.1, 0.1, 3),
    ])
    return Theta(
        nwp_mean=MeanParams(
            harm=harm7,
            lu_gain=rng.uniform(0.8, 1.4, size=n_lu),
            site_gain=rng.uniform(-0.2, 0.2, size=n),
        ),
        nwp_cov=cov(n),
        cond_mean=CondMeanParams(
            harm=harm5,
            lat_gain=float(rng.uniform(-0.2, 0.2)),
            long_gain=float(rng.uniform(-0.2, 0.2)),
            tw_base=rng.uniform(0.4, 0.9, size=n_lu),
            tw_decay=rng.uniform(0.3, 1.2, size=n_lu),
            nb_weight=nb,
        ),
        cond_cov=cov(J),
    )


def simulate_panel(theta: Theta, geom: Geometry, n_blocks: int,
                   seed: int = 0, structure: ModelStructure = _FULL,
                   start: datetime | None = None,
                   transforms: tuple[BoxCoxSpec | None,
                                     BoxCoxSpec | None] = (None, None)
                   ) -> tuple[Panel, Panel]:
    """Simulate aligned (obs, nwp) panels of ``n_blocks`` day blocks.

    With ``transforms=(obs_spec, nwp_spec)`` given, values are drawn in
    transformed space, back-transformed through those specs, and the
    panels come out in raw m/s (clipped at zero) with no attached
    transform — the shape real ingested data has.  Otherwise panels keep
    the values as drawn and carry the affine ``BoxCoxSpec(1, 0)`` marker,
    i.e. "model space equals raw minus one", so downstream raw-space code
    stays well-defined on them.
    """
    from .likelihood import ModelMoments

    if n_blocks < 1:
        raise ValueError("need at least one block")
    start = start or datetime(2000, 1, 1, tzinfo=timezone.utc)
    m = ModelMoments.build(theta, geom, structure)
    Ln = m.cov_nwp.cholesky()
    Lc = m.cov_cond.cholesky()
    h, J, n = geom.h, geom.n_stations, geom.n_points
    obs_spec, nwp_spec = transforms

    blocks = [DayBlock(k + 1, start + timedelta(hours=h * k), h)
              for k in range(n_blocks)]
    obs_vals = np.zeros((n_blocks, h, J))
    nwp_vals = np.zeros((n_blocks, h, n))
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    for k, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        yn = m.mu_nwp + Ln @ rng.standard_normal(n * h)
        yo = m.mu_cond + m.lam.apply(yn) + Lc @ rng.standard_normal(J * h)
        nwp_vals[k] = yn.reshape(n, h).T
        obs_vals[k] = yo.reshape(J, h).T
    model_space = BoxCoxSpec(1.0, 0.0)
    if obs_spec is not None:
        obs_vals, _ = detransform_values(obs_vals, obs_spec)
        obs_vals = np.maximum(obs_vals, 0.0)
        obs_tr = None
    else:
        obs_tr = model_space
    if nwp_spec is not None:
        nwp_vals, _ = detransform_values(nwp_vals, nwp_spec)
        nwp_vals = np.maximum(nwp_vals, 0.0)
        nwp_tr = None
    else:
        nwp_tr = model_space
    full = np.ones((n_blocks, h, J), dtype=bool)
    obs = Panel("obs", list(geom.stations), blocks, obs_vals, full,
                transform=obs_tr)
    nwp = Panel("nwp", list(geom.nwp_points), blocks, nwp_vals,
                np.ones((n_blocks, h, n), dtype=bool), transform=nwp_tr)
    return obs, nwp
