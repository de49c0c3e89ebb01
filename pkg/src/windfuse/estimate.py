"""Two-stage estimation for the two-layer model.

Stage one builds starting values from closed-form least squares: the
rank-one mean surfaces are split by alternating projections, transition
weights come from a linear regression of station blocks on their
neighboring forecast series, temporal-transition profiles from lagged
cross-covariances, and the covariance kernels from per-site lag curves
with a short bounded refinement.  Stage two runs quasi-Newton (BFGS with
Armijo backtracking) on the exact block log-likelihood with a central
finite-difference gradient in packed coordinates.  Standard errors come
from the finite-difference curvature of the objective at the optimum,
mapped back to natural scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from .core import Panel, complete_block_indices
from .likelihood import numerical_gradient, total_loglik
from .model import (Geometry, SingularModelError, build_A, build_lambda,
                    harmonic_basis, mean_cond_vector)
from .params import (CondMeanParams, CovParams, MeanParams, ModelStructure,
                     Theta, ThetaCodec)

__all__ = [
    "InitResult",
    "FitResult",
    "StdErrResult",
    "minimize_bfgs",
    "finite_diff_hessian",
    "init_least_squares",
    "fit_mle",
    "standard_errors",
]

_FULL = ModelStructure.full()

# Floors keeping inactive / degenerate positive parameters valid.
_POS_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# generic numerical pieces (testable in isolation)
# ---------------------------------------------------------------------------

@dataclass
class BfgsResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    status: str            # Converged | MaxIter | LineSearchFail | GradientFail
    n_iter: int
    n_eval: int
    trace: list[tuple[int, float, float]]  # (iteration, value, grad max-norm)


def minimize_bfgs(fun: Callable[[np.ndarray], float],
                  grad: Callable[[np.ndarray], np.ndarray],
                  x0: np.ndarray,
                  max_iter: int = 500,
                  tol_scale: float = 1e-4,
                  armijo_c1: float = 1e-4,
                  max_halvings: int = 40,
                  callback: Callable[[int, np.ndarray, float], None]
                  | None = None) -> BfgsResult:
    """Minimize with BFGS and monotone Armijo backtracking.

    The step starts at one and halves until
    ``f(x + a p) <= f(x) + c1 a g.p``; accepted iterates are strictly
    non-increasing.  Convergence is declared when the gradient max-norm
    drops below ``tol_scale * (1 + |f|)``.  On stagnation the best
    iterate seen is returned with a status explaining why.  Curvature
    pairs that would break positive definiteness are skipped, and a
    non-descent direction resets the inverse-curvature matrix.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    n_eval = 0

    def f(z: np.ndarray) -> float:
        nonlocal n_eval
        n_eval += 1
        v = fun(z)
        return float(v) if np.isfinite(v) else np.inf

    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    g = np.asarray(grad(x), dtype=float)
    H = np.eye(n)
    best_x, best_f, best_g = x.copy(), fx, g.copy()
    trace: list[tuple[int, float, float]] = [(0, fx, float(np.abs(g).max()))]
    status = "MaxIter"
    it = 0
    first_update = True
    for it in range(1, max_iter + 1):
        gnorm = float(np.abs(g).max())
        if not np.all(np.isfinite(g)):
            status = "GradientFail"
            break
        if gnorm < tol_scale * (1.0 + abs(fx)):
            status = "Converged"
            break
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0.0:
            H = np.eye(n)
            p = -g
            slope = float(g @ p)
        a = 1.0
        fx_new = np.inf
        for _ in range(max_halvings):
            fx_new = f(x + a * p)
            if fx_new <= fx + armijo_c1 * a * slope:
                break
            a *= 0.5
        else:
            status = "LineSearchFail"
            break
        s = a * p
        x_new = x + s
        g_new = np.asarray(grad(x_new), dtype=float)
        if np.all(np.isfinite(g_new)):
            y = g_new - g
            ys = float(y @ s)
            if ys > 1e-10 * np.linalg.norm(y) * np.linalg.norm(s):
                if first_update:
                    H *= ys / float(y @ y)
                    first_update = False
                rho = 1.0 / ys
                V = np.eye(n) - rho * np.outer(s, y)
                H = V @ H @ V.T + rho * np.outer(s, s)
        x, fx, g = x_new, fx_new, g_new
        if fx < best_f:
            best_x, best_f, best_g = x.copy(), fx, g.copy()
        trace.append((it, fx, float(np.abs(g).max())))
        if callback is not None:
            callback(it, x, fx)
    else:
        it = max_iter
    if status == "Converged":
        best_x, best_f, best_g = x, fx, g
    return BfgsResult(best_x, best_f, best_g, status, it, n_eval, trace)


def finite_diff_hessian(grad: Callable[[np.ndarray], np.ndarray],
                        x: np.ndarray,
                        rel_step: float = 1e-3,
                        abs_step: float = 1e-4) -> np.ndarray:
    """Symmetrized central-difference Jacobian of a gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for k in range(n):
        hk = max(rel_step * abs(x[k]), abs_step)
        xp, xm = x.copy(), x.copy()
        xp[k] += hk
        xm[k] -= hk
        H[:, k] = (np.asarray(grad(xp)) - np.asarray(grad(xm))) / (2.0 * hk)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------

@dataclass
class InitResult:
    theta: Theta
    flags: list[str] = field(default_factory=list)


def _stack_complete(obs_panel: Panel, nwp_panel: Panel
                    ) -> tuple[np.ndarray, np.ndarray]:
    idx = complete_block_indices(obs_panel, nwp_panel)
    if not idx:
        raise ValueError("no fully observed blocks shared by both panels")
    Yo = np.stack([obs_panel.values[obs_panel.block_position(b)]
                   for b in idx])
    Yn = np.stack([nwp_panel.values[nwp_panel.block_position(b)]
                   for b in idx])
    return Yo, Yn


def _lstsq_flagged(A: np.ndarray, b: np.ndarray, what: str,
                   flags: list[str]) -> np.ndarray:
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        # Rank-deficient design: refit with a small ridge so the answer
        # is stable rather than minimum-norm-arbitrary.
        sol = np.linalg.solve(A.T @ A + 1e-6 * np.eye(A.shape[1]), A.T @ b)
        flags.append(f"ridge:{what}")
    return sol


def _rank_one_profile(M: np.ndarray, basis: np.ndarray, flags: list[str],
                      what: str) -> tuple[np.ndarray, np.ndarray]:
    """Split ``M[t, j] ~ (basis @ beta)[t] * f[j]`` by alternating
    projections; the site factor is normalized to unit mean."""
    h, m = M.shape
    f = np.ones(m)
    beta = np.zeros(basis.shape[1])
    for _ in range(60):
        beta_new = _lstsq_flagged(basis, M @ f / max(f @ f, 1e-12),
                                  what, flags)
        p = basis @ beta_new
        pp = float(p @ p)
        if pp < 1e-12:
            flags.append(f"degenerate-profile:{what}")
            return beta_new, f
        f_new = (p @ M) / pp
        if (np.allclose(beta_new, beta, rtol=0, atol=1e-12)
                and np.allclose(f_new, f, rtol=0, atol=1e-12)):
            beta, f = beta_new, f_new
            break
        beta, f = beta_new, f_new
    c = float(f.mean())
    if abs(c) > 1e-9:
        f = f / c
        beta = beta * c
    return beta, f


def _lag_curve(res: np.ndarray, max_lag: int) -> np.ndarray:
    """Mean products of one demeaned (blocks, hours) series at lags
    0..max_lag."""
    out = np.empty(max_lag + 1)
    h = res.shape[1]
    for d in range(max_lag + 1):
        out[d] = float(np.mean(res[:, : h - d] * res[:, d:]))
    return out


def _fit_lag_kernel(curve: np.ndarray, flags: list[str],
                    what: str) -> tuple[float, float, float]:
    """Moment-match sill * exp(-decay d^2) + nugget [d=0] to a lag curve,
    then refine the three values with a short bounded least squares."""
    c0 = float(curve[0])
    if c0 <= 0.0 or curve.size < 3 or curve[1] <= 0.0:
        flags.append(f"flat-lag-curve:{what}")
        base = max(c0, _POS_FLOOR)
        return (max(0.7 * base, _POS_FLOOR), 1.0,
                max(0.3 * base, _POS_FLOOR))
    ratio = curve[2] / curve[1] if curve[2] > 0 else 1e-6
    decay0 = float(np.clip(-np.log(max(ratio, 1e-6)) / 3.0, 1e-3, 5.0))
    sill0 = float(np.clip(curve[1] * np.exp(decay0), 1e-4, None))
    nugget0 = float(np.clip(c0 - sill0, max(0.05 * c0, 1e-4), None))
    d = np.arange(curve.size, dtype=float)

    def resid(logp: np.ndarray) -> np.ndarray:
        s, a, g = np.exp(logp)
        model = s * np.exp(-a * d ** 2)
        model[0] += g
        return model - curve

    try:
        sol = least_squares(resid, np.log([sill0, decay0, nugget0]),
                            max_nfev=200)
        s, a, g = np.exp(sol.x)
    except Exception:
        flags.append(f"kernel-refine-failed:{what}")
        s, a, g = sill0, decay0, nugget0
    # An under-dispersed start is poison for the likelihood (quadratic
    # blow-up), an over-dispersed one only costs log-determinant; keep
    # both parts at a sane fraction of the observed level, never below
    # the global positivity floor.
    lo = max(0.05 * c0, _POS_FLOOR)
    hi = max(3.0 * c0, _POS_FLOOR)
    s = float(np.clip(s, lo, hi))
    a = float(np.clip(a, _POS_FLOOR, 20.0))
    g = float(np.clip(g, lo, hi))
    return s, a, g


def _fit_cov_params(res: np.ndarray, structure: ModelStructure,
                    flags: list[str], what: str) -> CovParams:
    """Kernel parameters for one layer from residual blocks (K, h, m).

    The shared kernel is identified first from the pair-averaged
    cross-site covariance (the independent kernels vanish there), its
    predicted own-site contribution is subtracted from each site's lag
    curve, and the remainders give the per-site kernels.
    """
    K, h, m = res.shape
    max_lag = min(6, h - 1)
    curves = np.stack([_lag_curve(res[:, :, j], max_lag) for j in range(m)])

    tilt = np.zeros((3, 3, 2))
    common = (_POS_FLOOR, 1.0, _POS_FLOOR)
    common_curve = np.zeros(max_lag + 1)
    if structure.common_signal and m >= 2:
        Cbar = np.zeros((h, h))
        n_pairs = 0
        for j in range(m):
            for j2 in range(j + 1, m):
                Cbar += res[:, :, j].T @ res[:, :, j2] / K
                n_pairs += 1
        Cbar = (Cbar + Cbar.T) / (2 * n_pairs)
        A0 = build_A(CovParams(tilt, 1.0, 1.0, 1.0, np.ones(m), np.ones(m),
                               np.ones(m)), 0.0, 0.0, h)
        q = float(np.mean(np.diag(A0 @ A0.T)))
        scale = max(float(np.mean(np.diag(Cbar))), 1e-8)
        x0 = np.log([max(scale / q, 1e-10), 0.5,
                     max(0.1 * scale / q, 1e-10)])
        lag2 = np.subtract.outer(np.arange(h, dtype=float),
                                 np.arange(h, dtype=float)) ** 2

        def resid(logp: np.ndarray) -> np.ndarray:
            s, a, g = np.exp(logp)
            G = s * np.exp(-a * lag2) + g * np.eye(h)
            return (A0 @ G @ A0.T - Cbar).ravel()

        try:
            sol = least_squares(resid, x0, max_nfev=200)
            vals = np.exp(sol.x)
            if np.all(np.isfinite(vals)) and np.all(vals > 0):
                common = (float(np.clip(vals[0], _POS_FLOOR, None)),
                          float(np.clip(vals[1], _POS_FLOOR, 20.0)),
                          float(np.clip(vals[2], _POS_FLOOR, None)))
            else:
                flags.append(f"common-kernel-degenerate:{what}")
        except Exception:
            flags.append(f"common-kernel-failed:{what}")
        G = common[0] * np.exp(-common[1] * lag2) + common[2] * np.eye(h)
        P = A0 @ G @ A0.T
        for d in range(max_lag + 1):
            common_curve[d] = float(np.mean(np.diagonal(P, offset=d)))

    site_sill = np.empty(m)
    site_decay = np.empty(m)
    site_nugget = np.empty(m)
    for j in range(m):
        # Cap the shared-signal subtraction so each site keeps at least
        # a fifth of its observed variance for its own kernel.
        scale = 1.0
        if common_curve[0] > 0.0 and curves[j][0] > 0.0:
            scale = min(1.0, 0.8 * curves[j][0] / common_curve[0])
            if scale < 1.0:
                flags.append(f"common-capped:{what}[{j}]")
        own = curves[j] - scale * common_curve
        if structure.site_temporal:
            s, a, g = _fit_lag_kernel(own, flags, f"{what}[{j}]")
        else:
            # Diagonal reduction: everything left over is nugget.
            s, a, g = _POS_FLOOR, 1.0, max(float(own[0]), _POS_FLOOR)
        site_sill[j] = s
        site_decay[j] = a
        site_nugget[j] = g
    return CovParams(tilt, common[0], common[1], common[2],
                     site_sill, site_decay, site_nugget)


def init_least_squares(obs_panel: Panel, nwp_panel: Panel, geom: Geometry,
                       structure: ModelStructure = _FULL) -> InitResult:
    """Closed-form starting values from complete blocks of both panels.

    Panels must be in model (transformed) space.  Any numerically shaky
    sub-fit falls back to a stable default and is reported in ``flags``.
    """
    flags: list[str] = []
    Yo, Yn = _stack_complete(obs_panel, nwp_panel)
    K, h, J = Yo.shape
    n = Yn.shape[2]
    if h != geom.h or J != geom.n_stations or n != geom.n_points:
        raise ValueError("panels do not match the geometry")

    # --- forecast-layer mean: profile times per-site factor -------------
    B7 = harmonic_basis(h, 7)
    beta_n, f_n = _rank_one_profile(Yn.mean(axis=0), B7, flags, "nwp-mean")
    lu_idx = np.array([geom.lu_index(p.land_use) for p in geom.nwp_points])
    n_lu = len(geom.land_uses)
    lu_gain = np.array([f_n[lu_idx == li].mean() if np.any(lu_idx == li)
                        else 1.0 for li in range(n_lu)])
    site_gain = f_n - lu_gain[lu_idx]
    nwp_mean = MeanParams(beta_n, lu_gain, site_gain)

    # --- transition weights from block anomalies -------------------------
    # Taking out the per-(hour, site) ensemble mean cancels every mean
    # term of the model, leaving anomaly(obs) = transition(anomaly(fcst))
    # + noise exactly — so the weights regress cleanly, free of the
    # collinearity the shared diurnal shape would otherwise inject.
    B5 = harmonic_basis(h, 5)
    cc = geom.centered(geom.stations)
    nb = geom.neighbors[:, : structure.n_neighbors]
    feats = np.empty((J, structure.n_neighbors, 3))
    for s in range(J):
        st = geom.stations[s]
        for k in range(structure.n_neighbors):
            pt = geom.nwp_points[int(nb[s, k])]
            feats[s, k] = (1.0, abs(st.lat - pt.lat), abs(st.long - pt.long))
    Mo, Mn = Yo.mean(axis=0), Yn.mean(axis=0)
    Ao = (Yo - Mo).transpose(0, 2, 1)                      # (K, J, h)
    An = Yn - Mn                                           # (K, h, n)
    lu_station = np.array([geom.lu_index(s.land_use) for s in geom.stations])
    target = Ao.reshape(-1)

    def _nb_regression(conv: np.ndarray) -> np.ndarray:
        """Weight coefficients from anomaly columns (K, J, h) per k."""
        cols = []
        for k in range(structure.n_neighbors):
            for c in range(3):
                cols.append((conv[k] * feats[:, k, c][None, :, None]
                             ).reshape(-1)[:, None])
        X = np.concatenate(cols, axis=1)
        sol = _lstsq_flagged(X, target, "transition-weights", flags)
        return sol.reshape(structure.n_neighbors, 3)

    lag0 = np.stack([An[:, :, nb[:, k]].transpose(0, 2, 1)
                     for k in range(structure.n_neighbors)])
    nb_coef = _nb_regression(lag0)

    tw_base = np.full(n_lu, 0.7)
    tw_decay = np.full(n_lu, 0.5)
    if structure.temporal_weights:
        # Lagged cross-covariance of obs anomalies with the weighted
        # neighbor anomaly, normalized at lag zero, traces the lag
        # profile of the transition (smeared by forecast autocovariance,
        # which is fine for a starting value).
        m_sig = np.zeros_like(lag0[0])
        for k in range(structure.n_neighbors):
            w = feats[:, k] @ nb_coef[k]
            m_sig += w[None, :, None] * lag0[k]
        max_lag = min(5, h - 1)
        for li in range(n_lu):
            ratios = []
            for s in np.flatnonzero(lu_station == li):
                num = np.empty(max_lag + 1)
                for d in range(max_lag + 1):
                    fwd = np.mean(Ao[:, s, d:] * m_sig[:, s, : h - d])
                    bwd = np.mean(Ao[:, s, : h - d] * m_sig[:, s, d:])
                    num[d] = 0.5 * (fwd + bwd)
                if num[0] > 1e-10:
                    ratios.append(num / num[0])
            if not ratios:
                flags.append(f"tw-default:lu{li}")
                continue
            prof = np.mean(ratios, axis=0)
            d = np.arange(max_lag + 1, dtype=float)

            def resid(p2: np.ndarray) -> np.ndarray:
                return p2[0] * np.exp(-p2[1] * d) + (1 - p2[0]) - prof

            try:
                sol = least_squares(resid, np.array([0.7, 0.5]),
                                    bounds=([0.01, 1e-3], [0.99, 10.0]),
                                    max_nfev=200)
                tw_base[li] = float(sol.x[0])
                tw_decay[li] = float(sol.x[1])
            except Exception:
                flags.append(f"tw-fit-failed:lu{li}")

        # Second pass: convolve neighbor anomalies with the fitted lag
        # profile so the weights are read off at the right scale.
        lag = np.abs(np.subtract.outer(np.arange(h, dtype=float),
                                       np.arange(h, dtype=float)))
        conv = np.empty_like(lag0)
        for k in range(structure.n_neighbors):
            for s in range(J):
                li = lu_station[s]
                R = tw_base[li] * np.exp(-tw_decay[li] * lag) \
                    + (1.0 - tw_base[li])
                conv[k, :, s] = lag0[k][:, s] @ R.T
        nb_coef = _nb_regression(conv)

    full_nb = np.zeros((3, 3))
    full_nb[: structure.n_neighbors] = nb_coef

    # --- station-layer mean from the transition-free ensemble mean ------
    draft_cm = CondMeanParams(np.zeros(5), 0.0, 0.0, tw_base, tw_decay,
                              full_nb)
    draft = Theta(nwp_mean,
                  CovParams(np.zeros((3, 3, 2)), 1.0, 1.0, 1.0,
                            np.ones(n), np.ones(n), np.ones(n)),
                  draft_cm,
                  CovParams(np.zeros((3, 3, 2)), 1.0, 1.0, 1.0,
                            np.ones(J), np.ones(J), np.ones(J)))
    lam = build_lambda(draft, geom, structure)
    D = Mo - lam.apply(Mn.T.reshape(-1)).reshape(J, h).T    # (h, J)
    beta_o, f_o = _rank_one_profile(D, B5, flags, "cond-mean")
    g = _lstsq_flagged(cc, f_o - 1.0, "cond-gain", flags)
    lat_gain, long_gain = float(g[0]), float(g[1])
    cond_mean = CondMeanParams(beta_o, lat_gain, long_gain, tw_base,
                               tw_decay, full_nb)

    # --- covariance kernels from residual lag curves --------------------
    # Kernels are matched around the empirical block mean, not the mean
    # sub-fits above: any mean misfit is constant across blocks and
    # would otherwise inflate every lag-zero moment (and so every sill).
    # Only a single block leaves no empirical mean to remove.
    if K >= 2:
        res_n = An
    else:
        profile_n = B7 @ beta_n
        lu_factor = lu_gain[lu_idx] + site_gain
        res_n = Yn - (lu_factor[None, :] * profile_n[:, None])[None]
    nwp_cov = _fit_cov_params(res_n, structure, flags, "nwp")

    draft = Theta(nwp_mean, nwp_cov, cond_mean,
                  CovParams(np.zeros((3, 3, 2)), 1e-4, 1.0, 1e-4,
                            np.ones(J), np.ones(J), np.ones(J)))
    lam = build_lambda(draft, geom, structure)
    mc = mean_cond_vector(draft, geom)
    res_c = np.empty((K, h, J))
    for k in range(K):
        vec_o = Yo[k].T.reshape(-1)
        vec_n = Yn[k].T.reshape(-1)
        e = vec_o - mc - lam.apply(vec_n)
        res_c[k] = e.reshape(J, h).T
    if K >= 2:
        res_c -= res_c.mean(axis=0, keepdims=True)
    cond_cov = _fit_cov_params(res_c, structure, flags, "cond")
    theta = Theta(nwp_mean, nwp_cov, cond_mean, cond_cov)
    theta.validate()
    return InitResult(theta, list(dict.fromkeys(flags)))


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    theta: Theta
    codec: ThetaCodec
    structure: ModelStructure
    loglik: float
    status: str
    n_iter: int
    n_eval: int
    grad_norm: float
    x: np.ndarray
    trace: list[tuple[int, float, float]]  # (iteration, loglik, grad norm)
    init_flags: list[str] = field(default_factory=list)


def fit_mle(obs_panel: Panel, nwp_panel: Panel, geom: Geometry,
            structure: ModelStructure = _FULL,
            theta0: Theta | None = None,
            max_iter: int = 500,
            tol_scale: float = 1e-4,
            callback: Callable[[int, float], None] | None = None
            ) -> FitResult:
    """Maximize the block log-likelihood from least-squares starting
    values (or ``theta0``).  The returned log-likelihood and parameters
    are the best iterate seen, whatever the stopping reason."""
    init_flags: list[str] = []
    if theta0 is None:
        init = init_least_squares(obs_panel, nwp_panel, geom, structure)
        theta0, init_flags = init.theta, init.flags
    codec = ThetaCodec(geom.land_uses, [p.id for p in geom.nwp_points],
                       [s.id for s in geom.stations], structure)
    base = theta0.copy()

    def fun(x: np.ndarray) -> float:
        try:
            return -total_loglik(codec.unpack(x, base), geom, obs_panel,
                                 nwp_panel, structure)
        except (SingularModelError, np.linalg.LinAlgError,
                FloatingPointError, OverflowError):
            return np.inf

    def grad(x: np.ndarray) -> np.ndarray:
        res = numerical_gradient(codec.unpack(x, base), geom, obs_panel,
                                 nwp_panel, codec, structure)
        return -res.values

    inner = None
    if callback is not None:
        def inner(it: int, _x: np.ndarray, fx: float) -> None:
            callback(it, -fx)

    res = minimize_bfgs(fun, grad, codec.pack(theta0), max_iter=max_iter,
                        tol_scale=tol_scale, callback=inner)
    theta = codec.unpack(res.x, base)
    trace = [(it, -v, gn) for it, v, gn in res.trace]
    return FitResult(theta, codec, structure, -res.value, res.status,
                     res.n_iter, res.n_eval, float(np.abs(res.grad).max()),
                     res.x, trace, init_flags)


@dataclass
class StdErrResult:
    packed_se: np.ndarray    # aligned with codec.names, packed scale
    natural_se: np.ndarray   # delta-method, natural scale
    hessian: np.ndarray      # observed curvature, packed coordinates
    condition: float
    floored: bool            # eigenvalue floor was applied


def standard_errors(fit: FitResult, obs_panel: Panel, nwp_panel: Panel,
                    geom: Geometry) -> StdErrResult:
    """Curvature-based standard errors at the fitted parameters.

    The observed information is the finite-difference Jacobian of the
    negative log-likelihood gradient; eigenvalues below ``1e-8`` of the
    largest are floored (flagged) before inversion, and packed-scale
    errors are mapped to natural scale with the log-derivative factors.
    """
    codec, structure = fit.codec, fit.structure
    base = fit.theta.copy()

    def grad(x: np.ndarray) -> np.ndarray:
        res = numerical_gradient(codec.unpack(x, base), geom, obs_panel,
                                 nwp_panel, codec, structure)
        return -res.values

    H = finite_diff_hessian(grad, fit.x)
    w, V = np.linalg.eigh(H)
    w_max = float(w.max())
    if w_max <= 0.0:
        raise SingularModelError(
            "curvature has no positive direction; no standard errors")
    floor = 1e-8 * w_max
    floored = bool(np.any(w < floor))
    w_f = np.maximum(w, floor)
    cov = (V / w_f) @ V.T
    packed_se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    natural_se = packed_se * codec.natural_scale(fit.x)
    condition = float(w_f.max() / w_f.min())
    return StdErrResult(packed_se, natural_se, H, condition, floored)
