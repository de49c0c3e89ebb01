"""Parametric moments of the two-layer space-time Gaussian model.

Layer one is the forecast (grid) field: mean = harmonic day profile times
a per-site factor; covariance = a shared temporal kernel mixed across
sites by tridiagonal site operators, plus an independent per-site
temporal kernel, so cross-site covariance flows only through the shared
kernel.  Layer two is the station field given the forecast field: mean =
harmonic bias correction plus a sparse linear transition (for each
station, temporally-decayed affine weights on its three nearest grid
points); covariance = the same parametric family with its own values.

All matrices follow the station-major / hour-fastest vectorization of
:mod:`windfuse.core`.  Coordinates enter the formulas centered at a fixed
origin (stored on the :class:`Geometry`, frozen at fit time); distances
for neighbor selection use the great circle and are computed when the
geometry is built.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import StationMeta
from .params import CovParams, ModelStructure, Theta

__all__ = [
    "SingularModelError",
    "JITTER_AUDIT",
    "Geometry",
    "CovarianceMatrix",
    "TransitionOperator",
    "JointMoments",
    "harmonic_basis",
    "mean_nwp_vector",
    "mean_nwp",
    "gamma_matrix",
    "build_A",
    "cov_marginal",
    "temporal_weight",
    "spatial_weight",
    "build_lambda",
    "mean_cond_vector",
    "mean_cond",
    "assemble_joint",
    "chol_with_jitter",
]

_FULL = ModelStructure.full()


class SingularModelError(RuntimeError):
    """A covariance could not be factorized within the jitter budget."""


class _JitterAudit:
    """Process-wide record of diagonal jitter applied by factorizations.

    ``max_rel`` is the largest jitter ever applied relative to the mean
    diagonal of its matrix; used by numerical-hygiene audits.
    """

    def __init__(self) -> None:
        self.count = 0
        self.events = 0
        self.max_rel = 0.0

    def record(self, rel: float) -> None:
        self.count += 1
        if rel > 0.0:
            self.events += 1
            self.max_rel = max(self.max_rel, rel)

    def reset(self) -> None:
        self.__init__()


JITTER_AUDIT = _JitterAudit()

# Relative jitter ladder: first try without, then escalate. The cap is
# the numerical-hygiene budget; beyond it the model is declared singular.
_JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def chol_with_jitter(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat``, adding escalating diagonal jitter
    (relative to the mean diagonal) when needed.

    Returns ``(L, jitter)`` with ``jitter`` the absolute value added to
    the diagonal (0.0 almost always).  Raises :class:`SingularModelError`
    if the ladder is exhausted.
    """
    mat = np.asarray(mat, dtype=float)
    scale = float(np.mean(np.diag(mat)))
    if not np.isfinite(scale) or scale <= 0.0:
        raise SingularModelError("covariance diagonal is not positive")
    eye = np.eye(mat.shape[0])
    for rel in _JITTER_LADDER:
        try:
            L = np.linalg.cholesky(mat + (rel * scale) * eye if rel else mat)
        except np.linalg.LinAlgError:
            continue
        JITTER_AUDIT.record(rel)
        return L, rel * scale
    raise SingularModelError(
        f"covariance not positive definite within jitter budget "
        f"({_JITTER_LADDER[-1]:g} x mean diagonal)")


@dataclass
class CovarianceMatrix:
    """A validated covariance: symmetric, positive definite after at most
    the recorded diagonal jitter.  Carries its Cholesky factor."""

    values: np.ndarray
    jitter: float = 0.0

    _chol: np.ndarray | None = None

    @classmethod
    def from_dense(cls, mat: np.ndarray,
                   symmetry_tol: float = 1e-12) -> "CovarianceMatrix":
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("covariance must be square")
        scale = max(float(np.abs(mat).max()), 1.0)
        if float(np.abs(mat - mat.T).max()) > symmetry_tol * scale:
            raise ValueError("covariance is not symmetric")
        mat = 0.5 * (mat + mat.T)
        L, jitter = chol_with_jitter(mat)
        out = cls(values=mat, jitter=jitter)
        out._chol = L
        return out

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol, self.jitter = chol_with_jitter(self.values)
        return self._chol

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky()))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        from scipy.linalg import cho_solve
        return cho_solve((self.cholesky(), True), b)


@dataclass
class TransitionOperator:
    """Sparse-structured linear map from the vectorized forecast block to
    the vectorized station block (dense storage; at most
    ``n_neighbors * h`` non-zeros per row)."""

    matrix: np.ndarray
    h: int
    n_stations: int
    n_points: int

    def apply(self, y_nwp_vec: np.ndarray) -> np.ndarray:
        return self.matrix @ y_nwp_vec


@dataclass(frozen=True)
class Geometry:
    """Station set, forecast-point set, neighbor stencil, and the frozen
    coordinate origin all formula evaluations subtract.

    ``neighbors[s]`` holds indices into ``nwp_points`` of the three
    closest grid points of station ``s`` (ascending great-circle
    distance, ties broken by lexicographic (lat, long)).
    """

    stations: tuple[StationMeta, ...]
    nwp_points: tuple[StationMeta, ...]
    h: int
    neighbors: np.ndarray
    center: tuple[float, float]
    land_uses: tuple[int, ...]

    @classmethod
    def build(cls, stations: list[StationMeta],
              nwp_points: list[StationMeta], h: int,
              center: tuple[float, float] | None = None,
              land_uses: tuple[int, ...] | None = None) -> "Geometry":
        from .ingest import nearest_neighbor_indices

        if len(nwp_points) < 3:
            raise ValueError("need at least 3 forecast grid points")
        if any(p.land_use is None for p in nwp_points):
            raise ValueError("every forecast grid point needs a land use")
        if h < 1:
            raise ValueError("block length must be >= 1")
        neigh = np.array([nearest_neighbor_indices(s, nwp_points, k=3)
                          for s in stations], dtype=int).reshape(len(stations), 3)
        # Stations inherit the land use of their closest grid point.
        stations = [
            s if s.land_use is not None
            else replace(s, land_use=nwp_points[neigh[i, 0]].land_use)
            for i, s in enumerate(stations)
        ]
        if land_uses is None:
            land_uses = tuple(sorted(
                {p.land_use for p in nwp_points}
                | {s.land_use for s in stations}))
        for s in list(stations) + list(nwp_points):
            if s.land_use not in land_uses:
                raise ValueError(
                    f"{s.id}: land use {s.land_use} not in {land_uses}")
        if center is None:
            everyone = list(stations) + list(nwp_points)
            center = (float(np.mean([p.lat for p in everyone])),
                      float(np.mean([p.long for p in everyone])))
        return cls(tuple(stations), tuple(nwp_points), h, neigh,
                   center, tuple(land_uses))

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_points(self) -> int:
        return len(self.nwp_points)

    def lu_index(self, land_use: int) -> int:
        return self.land_uses.index(land_use)

    def centered(self, sites: tuple[StationMeta, ...]) -> np.ndarray:
        """(n, 2) array of (lat, long) minus the frozen origin."""
        return np.array([[s.lat - self.center[0], s.long - self.center[1]]
                         for s in sites])

    def with_stations(self, stations: list[StationMeta]) -> "Geometry":
        """Same forecast set / origin / categories, new target stations."""
        return Geometry.build(stations, list(self.nwp_points), self.h,
                              center=self.center, land_uses=self.land_uses)

    def station_index(self, sid: str) -> int:
        for i, s in enumerate(self.stations):
            if s.id == sid:
                return i
        raise KeyError(f"unknown station {sid!r}")


# ---------------------------------------------------------------------------
# means
# ---------------------------------------------------------------------------

def harmonic_basis(h: int, n_terms: int) -> np.ndarray:
    """(h, n_terms) design of [1, cos, sin, cos, sin, ...] columns with
    periods h, h/2, h/3 evaluated at hours 0..h-1."""
    t = np.arange(h, dtype=float)
    cols = [np.ones(h)]
    k = 1
    while len(cols) < n_terms:
        w = 2.0 * np.pi * k * t / h
        cols.append(np.cos(w))
        if len(cols) < n_terms:
            cols.append(np.sin(w))
        k += 1
    return np.column_stack(cols[:n_terms])


def mean_nwp_vector(theta: Theta, geom: Geometry) -> np.ndarray:
    """Forecast-layer mean over one block, vectorized (h * n_points,)."""
    profile = harmonic_basis(geom.h, 7) @ theta.nwp_mean.harm
    lu = np.array([geom.lu_index(p.land_use) for p in geom.nwp_points])
    factor = theta.nwp_mean.lu_gain[lu] + theta.nwp_mean.site_gain
    return np.outer(factor, profile).reshape(-1)


def mean_nwp(theta: Theta, geom: Geometry, t: int, j: int) -> float:
    """Forecast-layer mean at hour ``t`` of grid point ``j``."""
    if not 0 <= t < geom.h:
        raise ValueError(f"hour {t} outside 0..{geom.h - 1}")
    return float(mean_nwp_vector(theta, geom)[j * geom.h + t])


def mean_cond_vector(theta: Theta, geom: Geometry) -> np.ndarray:
    """Station-layer mean correction over one block (h * n_stations,)."""
    cm = theta.cond_mean
    profile = harmonic_basis(geom.h, 5) @ cm.harm
    cc = geom.centered(geom.stations)
    factor = 1.0 + cm.lat_gain * cc[:, 0] + cm.long_gain * cc[:, 1]
    return np.outer(factor, profile).reshape(-1)


def mean_cond(theta: Theta, geom: Geometry, t: int, s: int,
              lam: TransitionOperator, y_nwp_vec: np.ndarray) -> float:
    """Conditional station mean at hour ``t`` of station ``s`` given the
    vectorized forecast block."""
    if not 0 <= t < geom.h:
        raise ValueError(f"hour {t} outside 0..{geom.h - 1}")
    idx = s * geom.h + t
    return float(mean_cond_vector(theta, geom)[idx]
                 + lam.matrix[idx] @ y_nwp_vec)


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------

def _gamma(sill: float, decay: float, nugget: float, h: int) -> np.ndarray:
    lag = np.subtract.outer(np.arange(h, dtype=float), np.arange(h, dtype=float))
    return sill * np.exp(-decay * lag ** 2) + nugget * np.eye(h)


def gamma_matrix(sill: float, decay: float, nugget: float,
                 h: int) -> CovarianceMatrix:
    """Squared-exponential-in-lag temporal kernel with a nugget:
    ``sill * exp(-decay * (t - t')**2) + nugget * 1{t == t'}``."""
    if min(sill, decay, nugget) <= 0.0:
        raise ValueError("sill, decay and nugget must be > 0")
    return CovarianceMatrix.from_dense(_gamma(sill, decay, nugget, h))


def build_A(cov: CovParams, lat_c: float, long_c: float, h: int) -> np.ndarray:
    """Tridiagonal site operator mixing the shared kernel.

    Band entries are quadratic polynomials in the 1-based hour index
    ``i`` whose coefficients tilt linearly with the centered coordinates:
    coefficient of ``i**o`` on band ``b`` is
    ``1 + tilt[b,o,0]*lat_c + tilt[b,o,1]*long_c``.
    """
    i = np.arange(1, h + 1, dtype=float)
    coef = 1.0 + cov.tilt[:, :, 0] * lat_c + cov.tilt[:, :, 1] * long_c
    bands = coef[:, 0:1] + coef[:, 1:2] * i + coef[:, 2:3] * i ** 2  # (3, h)
    A = np.diag(bands[0])
    sub_rows = np.arange(1, h)
    A[sub_rows, sub_rows - 1] = bands[1, 1:]      # row i uses its own i
    sup_rows = np.arange(0, h - 1)
    A[sup_rows, sup_rows + 1] = bands[2, :-1]
    return A


def _cov_sites(theta: Theta, geom: Geometry, which: str) -> tuple[
        CovParams, tuple[StationMeta, ...]]:
    if which == "nwp":
        return theta.nwp_cov, geom.nwp_points
    if which == "cond":
        return theta.cond_cov, geom.stations
    raise ValueError(f"which must be 'nwp' or 'cond', got {which!r}")


def _stacked_A(cov: CovParams, geom: Geometry,
               sites: tuple[StationMeta, ...]) -> np.ndarray:
    cc = geom.centered(sites)
    return np.vstack([build_A(cov, cc[j, 0], cc[j, 1], geom.h)
                      for j in range(len(sites))])


def _cov_dense(theta: Theta, geom: Geometry, which: str,
               structure: ModelStructure) -> np.ndarray:
    cov, sites = _cov_sites(theta, geom, which)
    n, h = len(sites), geom.h
    if cov.site_sill.size != n:
        raise ValueError(
            f"{which} covariance has {cov.site_sill.size} per-site kernels "
            f"for {n} sites")
    out = np.zeros((n * h, n * h))
    if structure.common_signal:
        M = _stacked_A(cov, geom, sites)
        G0 = _gamma(cov.common_sill, cov.common_decay, cov.common_nugget, h)
        out = M @ G0 @ M.T
    for j in range(n):
        sl = slice(j * h, (j + 1) * h)
        if structure.site_temporal:
            out[sl, sl] += _gamma(cov.site_sill[j], cov.site_decay[j],
                                  cov.site_nugget[j], h)
        else:
            out[sl, sl] += cov.site_nugget[j] * np.eye(h)
    return 0.5 * (out + out.T)


def cov_marginal(theta: Theta, geom: Geometry, which: str = "nwp",
                 structure: ModelStructure = _FULL) -> CovarianceMatrix:
    """Marginal covariance of one layer over a block: shared kernel mixed
    by site operators plus per-site diagonal blocks.

    ``which`` selects the forecast-layer set (``"nwp"``, grid points) or
    the station-layer set (``"cond"``, stations).
    """
    return CovarianceMatrix.from_dense(_cov_dense(theta, geom, which,
                                                  structure))


# ---------------------------------------------------------------------------
# transition operator
# ---------------------------------------------------------------------------

def temporal_weight(theta: Theta, geom: Geometry, land_use: int, dt: float,
                    structure: ModelStructure = _FULL) -> float:
    """Lag weight of the forecast-to-station transition for a land use:
    decaying part plus flat floor, exactly one at lag zero."""
    li = geom.lu_index(land_use)
    if not structure.temporal_weights:
        return 1.0 if dt == 0 else 0.0
    cm = theta.cond_mean
    return float(cm.tw_base[li] * np.exp(-cm.tw_decay[li] * abs(dt))
                 + (1.0 - cm.tw_base[li]))


def spatial_weight(theta: Theta, k: int, dlat: float, dlong: float) -> float:
    """Affine weight of the k-th nearest grid point (0-based ``k``),
    in absolute coordinate differences."""
    w = theta.cond_mean.nb_weight[k]
    return float(w[0] + w[1] * dlat + w[2] * dlong)


def _tw_profile(theta: Theta, geom: Geometry, li: int,
                structure: ModelStructure) -> np.ndarray:
    """(h, h) matrix of lag weights between station hour t and forecast
    hour t' for land-use index ``li``."""
    h = geom.h
    if not structure.temporal_weights:
        return np.eye(h)
    cm = theta.cond_mean
    lag = np.abs(np.subtract.outer(np.arange(h, dtype=float),
                                   np.arange(h, dtype=float)))
    return cm.tw_base[li] * np.exp(-cm.tw_decay[li] * lag) \
        + (1.0 - cm.tw_base[li])


def build_lambda(theta: Theta, geom: Geometry,
                 structure: ModelStructure = _FULL) -> TransitionOperator:
    """Assemble the forecast-to-station transition operator.

    Row (station s, hour t), column (grid point g, hour t') is the
    temporal lag weight for s's land use times the affine spatial weight
    of g among s's nearest neighbors; zero when g is not one of them.
    """
    h, J, n = geom.h, geom.n_stations, geom.n_points
    out = np.zeros((J * h, n * h))
    for s_idx, st in enumerate(geom.stations):
        R = _tw_profile(theta, geom, geom.lu_index(st.land_use), structure)
        rows = slice(s_idx * h, (s_idx + 1) * h)
        for k in range(structure.n_neighbors):
            g = int(geom.neighbors[s_idx, k])
            pt = geom.nwp_points[g]
            w = spatial_weight(theta, k, abs(st.lat - pt.lat),
                               abs(st.long - pt.long))
            out[rows, g * h:(g + 1) * h] += w * R
    return TransitionOperator(out, h, J, n)


# ---------------------------------------------------------------------------
# joint assembly
# ---------------------------------------------------------------------------

@dataclass
class JointMoments:
    """Mean and covariance of the stacked (station block; forecast block)
    vector; stations first, each side station-major / hour-fastest."""

    mean: np.ndarray
    cov: CovarianceMatrix
    obs_dim: int

    @property
    def nwp_dim(self) -> int:
        return self.mean.size - self.obs_dim


def assemble_joint(theta: Theta, geom: Geometry,
                   structure: ModelStructure = _FULL) -> JointMoments:
    """Implied joint distribution of one block of both layers.

    The station block marginally has mean ``mu + T mu_f`` and covariance
    ``C + T S T'`` where T is the transition, S / C the two layer
    covariances and mu_f / mu the two layer means; the cross block is
    ``T S``.
    """
    mu_f = mean_nwp_vector(theta, geom)
    mu_c = mean_cond_vector(theta, geom)
    S = _cov_dense(theta, geom, "nwp", structure)
    C = _cov_dense(theta, geom, "cond", structure)
    T = build_lambda(theta, geom, structure).matrix
    TS = T @ S
    top = np.hstack([C + TS @ T.T, TS])
    bottom = np.hstack([TS.T, S])
    mean = np.concatenate([mu_c + T @ mu_f, mu_f])
    cov = CovarianceMatrix.from_dense(np.vstack([top, bottom]))
    return JointMoments(mean=mean, cov=cov, obs_dim=mu_c.size)
