"""Forecast verification metrics and their report container.

All metrics are pure functions of arrays.  Conventions:

* energy score uses the plain ensemble estimator with the 1/(2 m^2)
  pairwise term;
* the Gaussian fit score is ``logdet(cov) + mahalanobis^2`` (no constant,
  no half — differences between systems are what matters);
* the variogram score sums squared variogram gaps over unordered
  coordinate pairs, order 0.5 and equal weights by default;
* the periodogram is ``|DFT|^2 / (2 pi N)`` at all N Fourier
  frequencies, so the white-noise level is ``variance / (2 pi)`` and
  summing power times the frequency step returns the sample variance
  exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .core import Panel, PanelFormatError, vectorize
from .model import CovarianceMatrix

__all__ = [
    "rmse",
    "energy_score",
    "dss",
    "variogram_score",
    "RankHistogram",
    "rank_histogram",
    "periodogram",
    "empirical_st_correlation",
    "ScoreReport",
    "write_score_report",
    "read_score_report",
]


def rmse(forecast: np.ndarray, obs: np.ndarray) -> float:
    """Root mean squared difference over flattened, equally long inputs."""
    f = np.asarray(forecast, dtype=float).ravel()
    y = np.asarray(obs, dtype=float).ravel()
    if f.size != y.size:
        raise ValueError("forecast and observation lengths differ")
    if f.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((f - y) ** 2)))


def energy_score(ensemble: np.ndarray, obs: np.ndarray) -> float:
    """Ensemble energy score (Euclidean norm over coordinates).

    ``(1/m) sum_i ||x_i - y|| - (1/(2 m^2)) sum_ij ||x_i - x_j||``.
    A single-member ensemble reduces to the error norm.
    """
    X = np.atleast_2d(np.asarray(ensemble, dtype=float))
    y = np.asarray(obs, dtype=float).ravel()
    if X.shape[1] != y.size:
        raise ValueError("ensemble and observation dimensions differ")
    m = X.shape[0]
    term1 = float(np.mean(np.linalg.norm(X - y, axis=1)))
    diff = X[:, None, :] - X[None, :, :]
    term2 = float(np.linalg.norm(diff, axis=2).sum()) / (2.0 * m * m)
    return term1 - term2


def dss(mean: np.ndarray, cov: CovarianceMatrix | np.ndarray,
        obs: np.ndarray) -> float:
    """Gaussian fit score: log-determinant plus squared Mahalanobis
    distance of the observation."""
    if not isinstance(cov, CovarianceMatrix):
        cov = CovarianceMatrix.from_dense(np.asarray(cov, dtype=float))
    mean = np.asarray(mean, dtype=float).ravel()
    y = np.asarray(obs, dtype=float).ravel()
    if mean.size != cov.dim or y.size != cov.dim:
        raise ValueError("mean/observation do not match covariance")
    r = y - mean
    return float(cov.logdet() + r @ cov.solve(r))


def variogram_score(ensemble: np.ndarray, obs: np.ndarray, p: float = 0.5,
                    weights: np.ndarray | None = None) -> float:
    """Squared gap between observed and ensemble-mean variograms of
    order ``p`` summed over unordered coordinate pairs."""
    X = np.atleast_2d(np.asarray(ensemble, dtype=float))
    y = np.asarray(obs, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("variogram score needs at least 2 members")
    if p <= 0:
        raise ValueError("order p must be > 0")
    d = y.size
    if X.shape[1] != d:
        raise ValueError("ensemble and observation dimensions differ")
    if weights is None:
        W = np.ones((d, d))
    else:
        W = np.asarray(weights, dtype=float)
        if W.shape != (d, d):
            raise ValueError("weights must be d x d")
    vy = np.abs(y[:, None] - y[None, :]) ** p
    vx = np.mean(np.abs(X[:, :, None] - X[:, None, :]) ** p, axis=0)
    gap = (vy - vx) ** 2
    iu = np.triu_indices(d, k=1)
    return float((W[iu] * gap[iu]).sum())


@dataclass
class RankHistogram:
    """Counts of observation ranks among pooled ensemble members, with
    the 95% binomial band each bin would stay inside under uniformity."""

    counts: np.ndarray        # (m + 1,)
    band_low: int
    band_high: int
    n_cases: int
    n_members: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.n_cases, 1)

    def chi_square_pvalue(self) -> float:
        return float(stats.chisquare(self.counts).pvalue)


def rank_histogram(cases: list[tuple[np.ndarray, float]],
                   seed: int = 0) -> RankHistogram:
    """Univariate rank histogram over (members, observation) cases.

    The rank is the observation's position in the pooled sorted set of
    members plus observation (1-based); ties are broken uniformly at
    random with the given seed.
    """
    if not cases:
        raise ValueError("no rank cases")
    m = np.asarray(cases[0][0]).size
    rng = np.random.default_rng(seed)
    counts = np.zeros(m + 1, dtype=int)
    for members, ob in cases:
        x = np.asarray(members, dtype=float).ravel()
        if x.size != m:
            raise ValueError("all cases must have the same member count")
        below = int(np.sum(x < ob))
        ties = int(np.sum(x == ob))
        rank = below + (rng.integers(0, ties + 1) if ties else 0)
        counts[rank] += 1
    n = len(cases)
    lo, hi = stats.binom.interval(0.95, n, 1.0 / (m + 1))
    return RankHistogram(counts, int(lo), int(hi), n, m)


def periodogram(series: np.ndarray,
                window: str = "none") -> tuple[np.ndarray, np.ndarray]:
    """Periodogram at all N Fourier frequencies (angular units).

    The series is demeaned; a Hann taper (normalized to preserve the
    white-noise level) is applied when requested.  Power at frequency
    ``2 pi k / N`` is ``|DFT_k|^2 / (2 pi N)``.
    """
    x = np.asarray(series, dtype=float).ravel()
    N = x.size
    if N < 8:
        raise ValueError("series too short for a spectrum (need >= 8)")
    x = x - x.mean()
    if window == "hann":
        w = np.hanning(N)
        x = x * w / np.sqrt(np.mean(w ** 2))
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")
    X = np.fft.fft(x)
    power = np.abs(X) ** 2 / (2.0 * np.pi * N)
    freqs = 2.0 * np.pi * np.arange(N) / N
    return freqs, power


def average_periodogram(series_set: np.ndarray,
                        window: str = "none"
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Mean periodogram over rows (scenarios or blocks) of equal length."""
    S = np.atleast_2d(np.asarray(series_set, dtype=float))
    freqs, p0 = periodogram(S[0], window)
    acc = p0
    for row in S[1:]:
        acc = acc + periodogram(row, window)[1]
    return freqs, acc / S.shape[0]


def empirical_st_correlation(values: np.ndarray | Panel) -> np.ndarray:
    """Sample correlation across replicates of the vectorized block.

    Accepts a (K, h, J) array (panel values or scenario draws); rows are
    vectorized in the station-major / hour-fastest order used
    everywhere else.  Raises on zero-variance coordinates.
    """
    if isinstance(values, Panel):
        if not values.mask.all():
            raise ValueError("panel has masked entries; correlation needs "
                             "complete blocks")
        values = values.values
    V = np.asarray(values, dtype=float)
    if V.ndim != 3 or V.shape[0] < 2:
        raise ValueError("need at least 2 replicates of (h, J) blocks")
    rows = np.array([vectorize(b) for b in V])
    sd = rows.std(axis=0)
    if np.any(sd == 0.0):
        raise ValueError("zero-variance coordinate; correlation undefined")
    c = np.corrcoef(rows.T)
    return np.atleast_2d(c)


# ---------------------------------------------------------------------------
# per-day score reports
# ---------------------------------------------------------------------------

@dataclass
class ScoreReport:
    """Per-block verification scores for one forecast system."""

    system: str
    per_day: dict[str, list[float]] = field(default_factory=dict)
    block_indices: list[int] = field(default_factory=list)

    def add_day(self, block_index: int, scores: dict[str, float]) -> None:
        if self.block_indices and set(scores) != set(self.per_day):
            raise ValueError("metrics differ from earlier days")
        self.block_indices.append(block_index)
        for k, v in scores.items():
            self.per_day.setdefault(k, []).append(float(v))

    @property
    def aggregates(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.per_day.items()}

    def metric(self, name: str) -> np.ndarray:
        return np.asarray(self.per_day[name], dtype=float)


def write_score_report(path: str | Path,
                       reports: list[ScoreReport]) -> Path:
    """Long-format CSV: system, block ('all' rows carry aggregates),
    metric, value."""
    path = Path(path)
    lines = ["system,block,metric,value"]
    for r in reports:
        for metric, vals in r.per_day.items():
            for b, v in zip(r.block_indices, vals):
                lines.append(f"{r.system},{b},{metric},{float(v)!r}")
        for metric, v in r.aggregates.items():
            lines.append(f"{r.system},all,{metric},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_score_report(path: str | Path) -> list[ScoreReport]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "system,block,metric,value":
        raise PanelFormatError(f"{path}: not a score report")
    acc: dict[str, dict[int, dict[str, float]]] = {}
    order: list[str] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise PanelFormatError(f"{path}:{ln}: expected 4 fields")
        system, block, metric, value = parts
        if block == "all":
            continue  # aggregates are derived, not stored
        try:
            b = int(block)
            v = float(value)
        except ValueError as exc:
            raise PanelFormatError(f"{path}:{ln}: bad number") from exc
        if system not in acc:
            acc[system] = {}
            order.append(system)
        acc[system].setdefault(b, {})[metric] = v
    out = []
    for system in order:
        rep = ScoreReport(system)
        for b in sorted(acc[system]):
            rep.add_day(b, acc[system][b])
        out.append(rep)
    return out
