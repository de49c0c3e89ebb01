"""Power (Box-Cox) transform of wind speeds, per source.

Speeds are shifted to stay positive, power-transformed toward Gaussian
shape, and the arrays modeled downstream live in that transformed space.
The exponent is selected by profile log-likelihood on a grid; the inverse
clamps out-of-domain values to the boundary and counts how often.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .core import BoxCoxSpec, Panel

__all__ = [
    "boxcox",
    "inv_boxcox",
    "estimate_lambda",
    "default_lambda_grid",
    "transform_panel",
    "detransform_values",
]

# Shift margin above the sample minimum when values touch zero.
_SHIFT_EPS = 1e-2


def boxcox(values: np.ndarray, spec: BoxCoxSpec) -> np.ndarray:
    """Apply the transform; requires ``values + shift > 0`` everywhere."""
    x = np.asarray(values, dtype=float) + spec.shift
    if x.size and x.min() <= 0.0:
        raise ValueError("values + shift must be > 0")
    if spec.lam == 0.0:
        return np.log(x)
    return special.boxcox(x, spec.lam)


def inv_boxcox(values: np.ndarray,
               spec: BoxCoxSpec) -> tuple[np.ndarray, int]:
    """Invert the transform, clamping to the domain boundary.

    For ``lam != 0`` the inverse only exists where ``lam*z + 1 > 0``;
    out-of-domain entries are clamped to the boundary (raw value
    ``-shift``, i.e. zero speed for the usual shift conventions) and
    counted.  Returns ``(raw_values, n_clamped)``.
    """
    z = np.asarray(values, dtype=float)
    if spec.lam == 0.0:
        return np.exp(z) - spec.shift, 0
    arg = spec.lam * z
    bad = arg <= -1.0
    n_clamped = int(bad.sum())
    # exp(log1p(lam*z)/lam) stays accurate as lam -> 0, where the naive
    # (lam*z + 1)**(1/lam) rounds lam*z + 1 to 1 and returns 1.
    with np.errstate(divide="ignore", over="ignore"):
        raw = np.exp(np.log1p(np.where(bad, 0.0, arg)) / spec.lam)
    raw = np.where(bad, 0.0, raw) - spec.shift
    if spec.lam < 0.0:
        # Boundary is +infinity for negative exponents; clamp to the
        # largest finite raw value representable instead.
        raw = np.where(bad, np.finfo(float).max, raw)
    return raw, n_clamped


def default_lambda_grid() -> np.ndarray:
    return np.round(np.arange(0.0, 1.0 + 1e-9, 0.1), 10)


def estimate_lambda(values: np.ndarray,
                    grid: np.ndarray | None = None) -> BoxCoxSpec:
    """Select the exponent by profile log-likelihood over a grid.

    The shift is 0 when all values are positive, else
    ``|min| + 0.01``.  For each candidate exponent the criterion is the
    Gaussian profile log-likelihood of the transformed sample including
    the transform's Jacobian term.  Ties prefer the smaller exponent.
    """
    y = np.asarray(values, dtype=float).ravel()
    y = y[np.isfinite(y)]
    if y.size < 2:
        raise ValueError("need at least 2 values to select an exponent")
    grid = default_lambda_grid() if grid is None else np.asarray(grid, float)
    mn = y.min()
    shift = 0.0 if mn > 0.0 else abs(mn) + _SHIFT_EPS
    x = y + shift
    logx_sum = float(np.log(x).sum())
    n = x.size
    best_lam, best_ll = None, -np.inf
    for lam in grid:
        spec = BoxCoxSpec(float(lam), shift)
        z = boxcox(y, spec)
        var = float(z.var())
        if var <= 0.0:
            continue
        ll = -0.5 * n * np.log(var) + (lam - 1.0) * logx_sum
        if ll > best_ll + 1e-12:
            best_lam, best_ll = float(lam), ll
    if best_lam is None:
        raise ValueError("profile likelihood degenerate on the whole grid")
    return BoxCoxSpec(best_lam, shift)


def transform_panel(panel: Panel,
                    spec: BoxCoxSpec | None = None) -> Panel:
    """Return the panel in transformed space (estimating the exponent
    from available values when ``spec`` is None)."""
    if panel.transform is not None:
        raise ValueError("panel is already transformed")
    if spec is None:
        spec = estimate_lambda(panel.values[panel.mask])
    values = np.array(panel.values)
    values[panel.mask] = boxcox(panel.values[panel.mask], spec)
    return panel.with_values(values, spec)


def detransform_values(values: np.ndarray,
                       spec: BoxCoxSpec | None) -> tuple[np.ndarray, int]:
    """Back to raw m/s; identity when ``spec`` is None."""
    if spec is None:
        return np.asarray(values, dtype=float).copy(), 0
    return inv_boxcox(values, spec)
