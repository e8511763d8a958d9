"""Forecast-verification diagnostics for ensemble rainfall forecasts.

Calibration: exceedance ROC/AUC from the marginal field, rank histograms
with randomized tie-breaking (ties are pervasive with exact zeros), and
pooled exceedance-frequency (ECDF) curves. Spatial coherence: correlation
of every location with a center point, and the variogram score with
inverse-distance weights. Accuracy: sample CRPS (the univariate energy
score, with the unbiased pairwise divisor so values are comparable across
ensemble sizes) and median-forecast bias summaries. All diagnostics are
pure over their inputs with fixed iteration order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .marginals import MarginalField
from .spatial import DistanceMatrix, LocationTable

__all__ = [
    "EnsembleBlock",
    "RocCurve",
    "roc_auc",
    "rank_histogram",
    "ecdf_curve",
    "cross_correlation",
    "crps_sample",
    "variogram_score",
    "rmsb_mab",
]


@dataclass(frozen=True)
class EnsembleBlock:
    """One day's forecast ensemble: (m, n) samples and the n observed values."""

    day: int
    samples: np.ndarray
    obs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "obs", np.asarray(self.obs, dtype=float).reshape(-1))
        if self.samples.ndim != 2 or self.samples.shape[1] != self.obs.size:
            raise ValueError("samples must be (m, n) aligned with the observation vector")
        if self.samples.shape[0] < 2:
            raise ValueError("need at least two ensemble members")
        if np.any(self.samples < 0.0) or np.any(self.obs < 0.0):
            raise ValueError("rainfall values must be nonnegative")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class RocCurve:
    """Exceedance ROC for one rainfall level q and its trapezoidal AUC.

    auc is NaN when the panel is degenerate (no events or all events).
    """

    q: float
    taus: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_auc(field: MarginalField, panel_values: np.ndarray, q: float,
            tau_grid=None) -> RocCurve:
    """Exceedance detection skill pooled over all cells.

    Each (location, day) cell is an independent trial: the event is
    observed rainfall above q, the forecast signal fires when the
    forecast exceedance probability 1 - F(q) is above the threshold tau
    (all cells signal at tau = 0, so the curve closes at (1, 1)). The
    curve sweeps tau from 1 down to 0 and AUC integrates it by trapezoid.
    """
    if q < 0.0:
        raise ValueError("exceedance level q must be nonnegative")
    if tau_grid is None:
        tau_grid = np.linspace(0.0, 1.0, 1001)
    taus = np.sort(np.asarray(tau_grid, dtype=float))[::-1]

    prob = 1.0 - field.cdf(np.full(field.p.shape, float(q)))
    events = np.asarray(panel_values, dtype=float) > q
    p_event = np.sort(prob[events])
    p_quiet = np.sort(prob[~events])
    n_event, n_quiet = p_event.size, p_quiet.size

    # signal iff prob > tau (tau > 0); everything signals at tau = 0
    tpr = np.empty(taus.size)
    fpr = np.empty(taus.size)
    pos_tau = taus > 0.0
    if n_event:
        tpr[pos_tau] = 1.0 - np.searchsorted(p_event, taus[pos_tau], side="right") / n_event
        tpr[~pos_tau] = 1.0
    else:
        tpr[:] = np.nan
    if n_quiet:
        fpr[pos_tau] = 1.0 - np.searchsorted(p_quiet, taus[pos_tau], side="right") / n_quiet
        fpr[~pos_tau] = 1.0
    else:
        fpr[:] = np.nan

    if n_event == 0 or n_quiet == 0:
        auc = float("nan")
    else:
        order = np.argsort(fpr, kind="stable")
        fx, ty = fpr[order], tpr[order]
        auc = float(np.sum(np.diff(fx) * 0.5 * (ty[1:] + ty[:-1])))
    return RocCurve(q=float(q), taus=taus, fpr=fpr, tpr=tpr, auc=auc)


def rank_histogram(blocks, bins: int, rng: np.random.Generator | None = None):
    """Histogram of observation ranks within their ensembles.

    The rank of an observation is the number of members strictly below it,
    plus a uniform random count among tied members (the standard correction;
    exact zeros make ties pervasive). Ranks live in {0, ..., m} and are
    folded into `bins` bins; counts are returned with normalized
    frequencies. Uniform iff the forecasts are calibrated.
    """
    if not blocks:
        raise ValueError("need at least one ensemble block")
    m = blocks[0].m
    if any(b.m != m for b in blocks):
        raise ValueError("all blocks must share one ensemble size")
    if bins < 1 or bins > m + 1:
        raise ValueError("bins must lie in [1, m + 1]")
    rng = rng or np.random.Generator(np.random.Philox(0))

    ranks = []
    for block in blocks:
        below = (block.samples < block.obs).sum(axis=0)
        ties = (block.samples == block.obs).sum(axis=0)
        ranks.append(below + rng.integers(0, ties + 1))
    ranks = np.concatenate(ranks)
    bin_idx = (ranks * bins) // (m + 1)
    counts = np.bincount(bin_idx, minlength=bins).astype(int)
    return counts, counts / counts.sum()


def ecdf_curve(blocks, levels):
    """Pooled exceedance frequencies of the model and the observations.

    For each level x: the fraction of all ensemble values above x and the
    fraction of all observations above x. A calibrated model's curve tracks
    the observed one.
    """
    levels = np.asarray(levels, dtype=float)
    if np.any(levels < 0.0):
        raise ValueError("levels must be nonnegative")
    samples = np.concatenate([b.samples.ravel() for b in blocks])
    obs = np.concatenate([b.obs for b in blocks])
    model_freq = (samples[None, :] > levels[:, None]).mean(axis=1)
    obs_freq = (obs[None, :] > levels[:, None]).mean(axis=1)
    return model_freq, obs_freq


def cross_correlation(panel_values: np.ndarray, locs: LocationTable,
                      center: str = "center-of-mass"):
    """Pearson correlation across days between a center series and every location.

    center is a location id, or "center-of-mass" to use the location nearest
    the mean (lat, lon). Zero-variance series yield NaN entries.
    Returns (center_id, correlations).
    """
    values = np.asarray(panel_values, dtype=float)
    if values.ndim != 2 or values.shape[0] != len(locs):
        raise ValueError("panel must be (n_locations, n_days) aligned with locations")
    if values.shape[1] < 3:
        raise ValueError("need at least 3 days for a correlation")

    if center == "center-of-mass":
        mean_lat, mean_lon = locs.lat.mean(), locs.lon.mean()
        center_idx = int(np.argmin((locs.lat - mean_lat) ** 2 + (locs.lon - mean_lon) ** 2))
    else:
        center_idx = locs.index_of(center)

    c = values[center_idx]
    c_dev = c - c.mean()
    c_ss = float(c_dev @ c_dev)
    dev = values - values.mean(axis=1, keepdims=True)
    ss = (dev ** 2).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (dev @ c_dev) / np.sqrt(ss * c_ss)
    corr[(ss == 0.0) | (c_ss == 0.0)] = np.nan
    return locs.ids[center_idx], corr


def crps_sample(samples, y: float) -> float:
    """Sample CRPS with the unbiased pairwise divisor.

    mean |x_j - y| minus half the mean of |x_j - x_k| over the m(m-1)
    ordered pairs. Nonnegative, smaller is better; a point forecast (all
    members equal) reduces it to the absolute error exactly.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    m = x.size
    if m < 2:
        raise ValueError("need at least two samples")
    term_obs = np.abs(x - y).mean()
    # sum_{j<k} (x_(k) - x_(j)) = sum_k (2k - m + 1) x_(k) on the sorted sample
    xs = np.sort(x)
    pair_sum = float((2.0 * np.arange(m) - m + 1.0) @ xs)
    return float(term_obs - pair_sum / (m * (m - 1)))


def variogram_score(block: EnsembleBlock, distance: DistanceMatrix,
                    p_exp: float = 1.0) -> float:
    """Inverse-distance-weighted variogram score of one day's ensemble.

    Sums w_kl * (|y_k - y_l|^p - mean_j |Y_jk - Y_jl|^p)^2 over all ordered
    location pairs, with w_kl = 1 / D_kl and w_kk = 0. Off-diagonal zero
    distances get weight 0 with a warning.
    """
    if p_exp <= 0.0:
        raise ValueError("p_exp must be positive")
    if distance.n != block.n:
        raise ValueError("distance matrix does not match the block's locations")
    d = distance.values
    off = ~np.eye(block.n, dtype=bool)
    zero_off = off & (d == 0.0)
    if np.any(zero_off):
        warnings.warn(
            f"{int(zero_off.sum())} zero off-diagonal distance(s); "
            "their pair weights are set to 0",
            UserWarning,
        )
    with np.errstate(divide="ignore"):
        w = np.where(off & (d > 0.0), 1.0 / np.where(d > 0.0, d, 1.0), 0.0)

    obs_gap = np.abs(block.obs[:, None] - block.obs[None, :]) ** p_exp
    sim_gap = np.abs(block.samples[:, :, None] - block.samples[:, None, :]) ** p_exp
    return float(np.sum(w * (obs_gap - sim_gap.mean(axis=0)) ** 2))


def rmsb_mab(blocks):
    """Root mean squared bias and mean absolute bias of the median forecast.

    The ensemble median per cell serves as the point forecast; both metrics
    pool over every (location, day) cell.
    """
    sq, ab, count = 0.0, 0.0, 0
    for block in blocks:
        med = np.median(block.samples, axis=0)
        diff = block.obs - med
        sq += float((diff ** 2).sum())
        ab += float(np.abs(diff).sum())
        count += diff.size
    if count == 0:
        raise ValueError("no cells to score")
    return float(np.sqrt(sq / count)), ab / count
