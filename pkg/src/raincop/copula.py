"""Latent Gaussian copula: sampling, censoring, and joint rainfall forecasts.

The latent field is a zero-mean Gaussian vector with the Matérn correlation
matrix; a coordinate whose latent value falls at or below its censoring
threshold d = Phi^{-1}(1 - p) is recorded as the threshold (rain: exactly
zero). Degenerate marginals are encoded with infinite sentinels: p = 0
(always dry) maps to d = +inf so the coordinate is always censored, p = 1
(never censored) to d = -inf.

Randomness is organized as counter-based substreams: `substream(seed, *path)`
derives an independent generator from a master seed and an integer path
(e.g. one per day), so outputs are independent of evaluation order and
thread count. Forecast sampling pushes the latent Gaussian's uniform
directly through the mixture quantile, preserving the copula coupling
exactly and emitting bit-exact 0.0 for dry outcomes.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import special as _sp

from .marginals import MarginalField, mixture_cdf, mixture_quantile
from .spatial import CovarianceMatrix

__all__ = [
    "substream",
    "censor_thresholds",
    "sample_latent",
    "censor",
    "obs_to_gaussian",
    "joint_forecast",
    "write_ensemble",
    "read_ensemble",
]

CDF_HI = 1.0 - 1e-12


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent counter-based generator for a (seed, path) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def censor_thresholds(field: MarginalField) -> np.ndarray:
    """Per-cell censoring thresholds Phi^{-1}(1 - p) with infinite sentinels.

    Finite wherever p is strictly inside (0, 1); +inf where p = 0, -inf
    where p = 1, keeping the elementwise-max censoring rule valid.
    """
    p = field.p
    out = np.empty_like(p)
    interior = (p > 0.0) & (p < 1.0)
    out[p == 0.0] = np.inf
    out[p == 1.0] = -np.inf
    out[interior] = _sp.ndtri(1.0 - p[interior])
    return out


def sample_latent(cov: CovarianceMatrix, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m latent vectors, rows x* = L z with z iid standard normal."""
    if m < 1:
        raise ValueError("need at least one draw")
    z = rng.standard_normal((m, cov.n))
    return z @ cov.factor.lower.T


def censor(draws: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Elementwise max of latent values and thresholds (ties censor)."""
    draws = np.asarray(draws, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if draws.shape[-1] != thresholds.shape[-1]:
        raise ValueError("draw and threshold dimensions do not match")
    return np.maximum(draws, thresholds)


def obs_to_gaussian(values: np.ndarray, field: MarginalField) -> np.ndarray:
    """Map observed rainfall onto the latent Gaussian scale cellwise.

    x = Phi^{-1}(F(y)); dry cells land exactly on the censoring threshold
    since both are computed as Phi^{-1}(1 - p). A CDF that rounds to 1 in
    floating point (huge observations) is clamped to 1 - 1e-12 with a
    warning.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != field.p.shape:
        raise ValueError("panel shape does not match the marginal field")
    u = mixture_cdf(field.p, field.mu, field.phi, values)
    hi = u >= 1.0
    if np.any(hi):
        warnings.warn(
            f"{int(hi.sum())} cell(s) reached CDF 1 in floating point; "
            f"clamped to {CDF_HI}",
            UserWarning,
        )
        u = np.where(hi, CDF_HI, u)
    with np.errstate(divide="ignore"):
        return _sp.ndtri(u)


def joint_forecast(cov: CovarianceMatrix, field: MarginalField, day: int, m: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Sample an (m, n) block of joint rainfall for one day.

    Each latent draw is pushed through u = Phi(x*) and the day's mixture
    quantile: u <= 1 - p gives bit-exact 0.0 rainfall, larger u the gamma
    quantile at (u - (1 - p)) / p. Marginals are exactly the cellwise
    mixture laws; dependence is inherited from the covariance.
    """
    if not (0 <= day < field.n_days):
        raise ValueError(f"day {day} outside field range [0, {field.n_days})")
    if cov.n != field.n_locations:
        raise ValueError("covariance size does not match the marginal field")
    latent = sample_latent(cov, m, rng)
    u = _sp.ndtr(latent)
    return mixture_quantile(field.p[:, day], field.mu[:, day], field.phi[:, day], u)


def _fmt_rain(v: float) -> str:
    return "0" if v == 0.0 else repr(float(v))


def write_ensemble(path, day_labels, location_ids, blocks) -> None:
    """Write ensemble CSV: day,replicate,loc_<id>,... with exact 0 tokens when dry.

    blocks is a sequence of (m, n) arrays aligned with day_labels.
    """
    header = "day,replicate," + ",".join(f"loc_{i}" for i in location_ids)
    lines = [header]
    for label, block in zip(day_labels, blocks):
        for j, row in enumerate(block):
            lines.append(f"{label},{j}," + ",".join(_fmt_rain(v) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ensemble(path, location_ids):
    """Read an ensemble CSV back into (day_labels, list of (m, n) blocks)."""
    expected = ["day", "replicate"] + [f"loc_{i}" for i in location_ids]
    day_labels: list = []
    rows_per_day: dict = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header != expected:
            raise ValueError(f"{path}: ensemble header does not match the locations file")
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(expected):
                raise ValueError(f"{path}: row {line_no}: wrong field count")
            label = parts[0]
            if label not in rows_per_day:
                rows_per_day[label] = []
                day_labels.append(label)
            rows_per_day[label].append([float(v) for v in parts[2:]])
    blocks = [np.asarray(rows_per_day[label], dtype=float) for label in day_labels]
    return day_labels, blocks
