"""Block-independent Gaussian log-likelihood of the two-layer model.

Day blocks are independent given the parameters, so the total
log-likelihood is a sum over retained (fully observed) blocks of a
forecast-layer marginal term and a station-layer conditional term.  The
two covariances do not depend on the block, so they are factorized once
per parameter value and reused across all blocks; block quadratic forms
are evaluated in one batched triangular solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .core import Panel, complete_block_indices, vectorize
from .model import (CovarianceMatrix, Geometry, TransitionOperator,
                    build_lambda, cov_marginal, mean_cond_vector,
                    mean_nwp_vector)
from .params import ModelStructure, Theta, ThetaCodec

__all__ = [
    "ModelMoments",
    "block_loglik_nwp",
    "block_loglik_cond",
    "total_loglik",
    "per_block_logliks",
    "GradientResult",
    "numerical_gradient",
]

_FULL = ModelStructure.full()
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelMoments:
    """Factorized per-parameter moments reused across blocks."""

    geom: Geometry
    mu_nwp: np.ndarray
    cov_nwp: CovarianceMatrix
    mu_cond: np.ndarray
    cov_cond: CovarianceMatrix
    lam: TransitionOperator

    @classmethod
    def build(cls, theta: Theta, geom: Geometry,
              structure: ModelStructure = _FULL) -> "ModelMoments":
        return cls(
            geom=geom,
            mu_nwp=mean_nwp_vector(theta, geom),
            cov_nwp=cov_marginal(theta, geom, "nwp", structure),
            mu_cond=mean_cond_vector(theta, geom),
            cov_cond=cov_marginal(theta, geom, "cond", structure),
            lam=build_lambda(theta, geom, structure),
        )

    def _gauss_logliks(self, cov: CovarianceMatrix,
                       residuals: np.ndarray) -> np.ndarray:
        """Log densities for residual rows (n, d) under N(0, cov)."""
        L = cov.cholesky()
        z = solve_triangular(L, residuals.T, lower=True)
        quad = np.square(z).sum(axis=0)
        d = cov.dim
        return -0.5 * (d * _LOG_2PI + cov.logdet() + quad)

    def logliks_nwp(self, y_nwp: np.ndarray) -> np.ndarray:
        """Forecast-layer marginal log densities; rows vectorized blocks."""
        y = np.atleast_2d(y_nwp)
        return self._gauss_logliks(self.cov_nwp, y - self.mu_nwp)

    def logliks_cond(self, y_obs: np.ndarray,
                     y_nwp: np.ndarray) -> np.ndarray:
        """Station-layer conditional log densities, rows paired blocks."""
        yo = np.atleast_2d(y_obs)
        yn = np.atleast_2d(y_nwp)
        resid = yo - self.mu_cond - yn @ self.lam.matrix.T
        return self._gauss_logliks(self.cov_cond, resid)


def block_loglik_nwp(theta: Theta, geom: Geometry, y_nwp_block: np.ndarray,
                     structure: ModelStructure = _FULL,
                     moments: ModelMoments | None = None) -> float:
    """Marginal log density of one vectorized (or (h, J)) forecast block."""
    m = moments or ModelMoments.build(theta, geom, structure)
    y = np.asarray(y_nwp_block, dtype=float)
    if y.ndim == 2:
        y = vectorize(y)
    return float(m.logliks_nwp(y)[0])


def block_loglik_cond(theta: Theta, geom: Geometry, y_obs_block: np.ndarray,
                      y_nwp_block: np.ndarray,
                      structure: ModelStructure = _FULL,
                      moments: ModelMoments | None = None) -> float:
    """Conditional log density of one station block given its forecast."""
    m = moments or ModelMoments.build(theta, geom, structure)
    yo = np.asarray(y_obs_block, dtype=float)
    yn = np.asarray(y_nwp_block, dtype=float)
    if yo.ndim == 2:
        yo = vectorize(yo)
    if yn.ndim == 2:
        yn = vectorize(yn)
    return float(m.logliks_cond(yo, yn)[0])


def _stacked_blocks(panel: Panel, indices: list[int]) -> np.ndarray:
    rows = []
    for bi in indices:
        pos = panel.block_position(bi)
        rows.append(vectorize(panel.values[pos]))
    return np.array(rows)


def per_block_logliks(theta: Theta, geom: Geometry, obs_panel: Panel,
                      nwp_panel: Panel,
                      structure: ModelStructure = _FULL,
                      block_indices: list[int] | None = None
                      ) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Per-block (marginal, conditional) log-likelihood terms.

    Blocks default to those fully observed in both panels.  Returns
    ``(indices, nwp_terms, cond_terms)`` in ascending block order.
    """
    if obs_panel.h != geom.h or nwp_panel.h != geom.h:
        raise ValueError("panel block length differs from geometry h")
    if obs_panel.n_stations != geom.n_stations:
        raise ValueError("station panel does not match geometry stations")
    if nwp_panel.n_stations != geom.n_points:
        raise ValueError("forecast panel does not match geometry points")
    if block_indices is None:
        block_indices = complete_block_indices(obs_panel, nwp_panel)
    else:
        complete = set(complete_block_indices(obs_panel, nwp_panel))
        missing = [b for b in block_indices if b not in complete]
        if missing:
            raise ValueError(
                f"blocks {missing} are not fully observed in both panels")
        block_indices = sorted(block_indices)
    if not block_indices:
        raise ValueError("no fully observed blocks shared by both panels")
    m = ModelMoments.build(theta, geom, structure)
    Yn = _stacked_blocks(nwp_panel, block_indices)
    Yo = _stacked_blocks(obs_panel, block_indices)
    return block_indices, m.logliks_nwp(Yn), m.logliks_cond(Yo, Yn)


def total_loglik(theta: Theta, geom: Geometry, obs_panel: Panel,
                 nwp_panel: Panel, structure: ModelStructure = _FULL,
                 block_indices: list[int] | None = None) -> float:
    """Joint log-likelihood over retained blocks (both layers)."""
    _, ln, lc = per_block_logliks(theta, geom, obs_panel, nwp_panel,
                                  structure, block_indices)
    # Fixed ascending-block summation order keeps results reproducible.
    return float(ln.sum() + lc.sum())


# ---------------------------------------------------------------------------
# numerical gradient
# ---------------------------------------------------------------------------

@dataclass
class GradientResult:
    values: np.ndarray
    one_sided: np.ndarray  # bool per coordinate: central diff fell back


def _gauss_sum(cov, resid: np.ndarray) -> float:
    """Summed log density of residual rows under N(0, cov)."""
    L = cov.cholesky()
    z = solve_triangular(L, resid.T, lower=True)
    n = resid.shape[0]
    return -0.5 * (n * (cov.dim * _LOG_2PI + cov.logdet())
                   + float(np.square(z).sum()))


def numerical_gradient(theta: Theta, geom: Geometry, obs_panel: Panel,
                       nwp_panel: Panel, codec: ThetaCodec,
                       structure: ModelStructure = _FULL,
                       rel_step: float = 1e-5,
                       abs_step: float = 1e-7) -> GradientResult:
    """Central-difference gradient of the total log-likelihood in packed
    coordinates (positivity-constrained parameters are differentiated in
    log space because that is how they are packed).

    Per-coordinate step: ``max(rel_step * |x_k|, abs_step)``.  If the
    likelihood is non-finite at a perturbed point, that coordinate falls
    back to a one-sided difference and is flagged.

    Each packed coordinate enters exactly one of the two likelihood
    layers (forecast marginal or station conditional), so only that
    layer is re-evaluated per perturbation, and mean-side coordinates
    reuse the unperturbed covariance factorization.  The other layer's
    contribution is constant and cancels from the difference.
    """
    from .model import SingularModelError

    x0 = codec.pack(theta)
    block_indices, ln0, lc0 = per_block_logliks(
        theta, geom, obs_panel, nwp_panel, structure)
    Yn = _stacked_blocks(nwp_panel, block_indices)
    Yo = _stacked_blocks(obs_panel, block_indices)
    cov_n0 = cov_marginal(theta, geom, "nwp", structure)
    cov_c0 = cov_marginal(theta, geom, "cond", structure)
    f0_layer = {"nwp": float(ln0.sum()), "cond": float(lc0.sum())}
    _ERRS = (SingularModelError, np.linalg.LinAlgError,
             FloatingPointError, OverflowError)

    def f_nwp(x: np.ndarray, mean_only: bool) -> float:
        th = codec.unpack(x, theta)
        try:
            cov = cov_n0 if mean_only else cov_marginal(th, geom, "nwp",
                                                        structure)
            return _gauss_sum(cov, Yn - mean_nwp_vector(th, geom))
        except _ERRS:
            return np.nan

    def f_cond(x: np.ndarray, mean_only: bool) -> float:
        th = codec.unpack(x, theta)
        try:
            cov = cov_c0 if mean_only else cov_marginal(th, geom, "cond",
                                                        structure)
            lam = build_lambda(th, geom, structure)
            resid = Yo - mean_cond_vector(th, geom) - Yn @ lam.matrix.T
            return _gauss_sum(cov, resid)
        except _ERRS:
            return np.nan

    grad = np.empty(codec.size)
    one_sided = np.zeros(codec.size, dtype=bool)
    for k in range(codec.size):
        layer = "nwp" if codec.groups[k].startswith("nwp") else "cond"
        mean_only = codec.groups[k].endswith("_mean")
        f = f_nwp if layer == "nwp" else f_cond
        hk = max(rel_step * abs(x0[k]), abs_step)
        xp, xm = x0.copy(), x0.copy()
        xp[k] += hk
        xm[k] -= hk
        fp, fm = f(xp, mean_only), f(xm, mean_only)
        if np.isfinite(fp) and np.isfinite(fm):
            grad[k] = (fp - fm) / (2.0 * hk)
            continue
        f0 = f0_layer[layer]
        if not np.isfinite(f0):
            raise FloatingPointError(
                "log-likelihood is not finite at the evaluation point")
        one_sided[k] = True
        if np.isfinite(fp):
            grad[k] = (fp - f0) / hk
        elif np.isfinite(fm):
            grad[k] = (f0 - fm) / hk
        else:
            raise FloatingPointError(
                f"log-likelihood not finite on either side of "
                f"coordinate {codec.names[k]}")
    return GradientResult(values=grad, one_sided=one_sided)
