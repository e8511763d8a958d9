"""Distance-matrix construction and Matérn-kernel covariance matrices.

The inter-location distance is a blend of two ingredients: plain Euclidean
norms on raw (lat, lon) pairs (no great-circle correction) and absolute
differences of elevation scaled by ``topo_scale``, combined as
``a * geographic + (1 - a) * topographic / topo_scale``. The blended
distances go through a Matérn kernel elementwise to produce a unit-diagonal
correlation matrix, validated positive definite under the jitter policy.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import SpdFactor, bessel_k, log_gamma, spd_factorize

__all__ = [
    "LocationTable",
    "DistanceMatrix",
    "MaternParams",
    "CovarianceMatrix",
    "build_distance_matrix",
    "matern_kernel",
    "build_covariance",
    "repaired_correlation",
    "read_locations",
    "write_locations",
    "DEFAULT_BLEND",
    "DEFAULT_TOPO_SCALE",
    "DEFAULT_NU",
]

DEFAULT_BLEND = 0.9
DEFAULT_TOPO_SCALE = 70.0
DEFAULT_NU = 3.5


@dataclass(frozen=True)
class LocationTable:
    """Site metadata: unique ids, coordinates in degrees, elevation."""

    ids: tuple
    lat: np.ndarray
    lon: np.ndarray
    elev: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        for name in ("lat", "lon", "elev"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.ids)
        if not (self.lat.shape == self.lon.shape == self.elev.shape == (n,)):
            raise ValueError("ids, lat, lon, elev must have one common length")
        if len(set(self.ids)) != n:
            raise ValueError("location ids must be unique")
        if not (np.all(np.isfinite(self.lat)) and np.all(np.isfinite(self.lon))
                and np.all(np.isfinite(self.elev))):
            raise ValueError("coordinates and elevations must be finite")
        if np.any(np.abs(self.lat) > 90.0):
            raise ValueError("latitude outside [-90, 90]")
        if np.any(np.abs(self.lon) > 180.0):
            raise ValueError("longitude outside [-180, 180]")

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, loc_id: str) -> int:
        try:
            return self.ids.index(loc_id)
        except ValueError:
            raise KeyError(f"unknown location id {loc_id!r}") from None

    def subset(self, indices) -> "LocationTable":
        idx = np.asarray(indices, dtype=int)
        return LocationTable(
            ids=tuple(self.ids[i] for i in idx),
            lat=self.lat[idx], lon=self.lon[idx], elev=self.elev[idx],
        )


@dataclass(frozen=True)
class DistanceMatrix:
    """Blended n x n distance matrix with its blend coefficient."""

    values: np.ndarray
    blend: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(v, v.T, rtol=1e-12, atol=1e-12):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("distance matrix must have a zero diagonal")
        if np.any(v < 0.0):
            raise ValueError("distances must be nonnegative")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def subset(self, indices) -> "DistanceMatrix":
        idx = np.asarray(indices, dtype=int)
        return DistanceMatrix(values=self.values[np.ix_(idx, idx)], blend=self.blend)


@dataclass(frozen=True)
class MaternParams:
    """Kernel parameters: lengthscale theta > 0 and smoothness nu (default 3.5)."""

    theta: float
    nu: float = DEFAULT_NU

    def __post_init__(self):
        if not (self.theta > 0.0 and np.isfinite(self.theta)):
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not (self.nu > 0.0 and np.isfinite(self.nu)):
            raise ValueError(f"nu must be positive, got {self.nu}")


@dataclass(frozen=True)
class CovarianceMatrix:
    """Unit-diagonal Matérn correlation matrix with its cached Cholesky factor."""

    sigma: np.ndarray
    params: MaternParams
    distance: DistanceMatrix
    factor: SpdFactor = field(repr=False)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


def build_distance_matrix(locs: LocationTable, a: float = DEFAULT_BLEND,
                          topo_scale: float = DEFAULT_TOPO_SCALE) -> DistanceMatrix:
    """Blend geographic and scaled topographic distances with coefficient a.

    a = 1 keeps only the (lat, lon) Euclidean distances, a = 0 only the
    elevation differences divided by topo_scale. Duplicate coordinates are
    allowed but produce zero off-diagonal distances, flagged as a warning
    since positive definiteness then rests on the jitter policy.
    """
    if not (0.0 <= a <= 1.0):
        raise ValueError("blend coefficient a must lie in [0, 1]")
    if topo_scale <= 0.0:
        raise ValueError("topo_scale must be positive")
    if len(locs) < 2:
        raise ValueError("need at least two locations")

    xy = np.column_stack([locs.lat, locs.lon])
    diff = xy[:, None, :] - xy[None, :, :]
    d_geo = np.sqrt((diff ** 2).sum(axis=2))
    d_topo = np.abs(locs.elev[:, None] - locs.elev[None, :])
    values = a * d_geo + (1.0 - a) * d_topo / topo_scale
    np.fill_diagonal(values, 0.0)

    off = values[~np.eye(len(locs), dtype=bool)]
    if np.any(off == 0.0):
        warnings.warn(
            "duplicate locations produce zero off-diagonal distances; "
            "covariance validity will rest on the jitter policy",
            UserWarning,
        )
    return DistanceMatrix(values=values, blend=a)


def _matern_half_integer(x: np.ndarray, n: int) -> np.ndarray:
    # exp(-x) * n!/(2n)! * sum_k (n+k)!/(k!(n-k)!) (2x)^(n-k); exact for nu = n + 1/2
    # and finite at x = 0 where it evaluates to 1.
    lead = math.factorial(n) / math.factorial(2 * n)
    acc = np.zeros_like(x)
    for k in range(n + 1):
        coef = math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k))
        acc += coef * (2.0 * x) ** (n - k)
    return np.exp(-x) * lead * acc


def matern_kernel(d, params: MaternParams):
    """Matérn correlation at distance d >= 0; exactly 1 at d = 0.

    Half-integer smoothness uses the closed polynomial-times-exponential
    form; other orders evaluate 2^(1-nu)/Gamma(nu) * x^nu * K_nu(x) with
    x = sqrt(2 nu) d / theta, returning the analytic limit 1 at d = 0 where
    that product is indeterminate.
    """
    d_a = np.asarray(d, dtype=float)
    scalar = d_a.ndim == 0
    d_a = np.atleast_1d(d_a)
    if np.any(d_a < 0.0) or not np.all(np.isfinite(d_a)):
        raise ValueError("distances must be finite and nonnegative")
    nu = params.nu
    x = np.sqrt(2.0 * nu) * d_a / params.theta

    n_half = round(nu - 0.5)
    if n_half >= 0 and abs(nu - (n_half + 0.5)) < 1e-12:
        out = _matern_half_integer(x, n_half)
    else:
        out = np.ones_like(x)
        # Below this the kernel is 1 to double precision for nu >= 1; evaluating
        # the x^nu * K_nu(x) product there would hit overflow in the K factor.
        pos = x > 1e-8 if nu >= 1.0 else x > 0.0
        if np.any(pos):
            log_pref = (1.0 - nu) * np.log(2.0) - log_gamma(nu)
            with np.errstate(under="ignore"):
                out[pos] = np.exp(log_pref + nu * np.log(x[pos])) * bessel_k(nu, x[pos])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def repaired_correlation(sigma: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Nearest-by-eigenvalue unit-diagonal repair of an indefinite correlation matrix.

    The additive distance blend is not Euclidean-embeddable, so for smooth
    kernels (nu > 1/2) the elementwise Matérn matrix can carry structurally
    negative eigenvalues whenever both blend ingredients vary at resolved
    scales, far beyond what the jitter ladder absorbs. This floors the
    spectrum at `floor`, reconstitutes, and renormalizes back to a unit
    diagonal. Matrices already positive definite are returned unchanged.
    """
    w, v = np.linalg.eigh(sigma)
    if w[0] >= floor:
        return sigma
    m = (v * np.maximum(w, floor)) @ v.T
    d = np.sqrt(np.diag(m))
    m = m / np.outer(d, d)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return m


def build_covariance(distance: DistanceMatrix, params: MaternParams,
                     repair: bool = False) -> CovarianceMatrix:
    """Apply the kernel elementwise and validate positive definiteness.

    The Cholesky factor (possibly jittered per the escalation policy) is
    cached on the result for reuse by the sampler; the stored matrix itself
    keeps its exact unit diagonal. With ``repair=True`` an indefinite matrix
    is first projected back to a valid correlation matrix (see
    repaired_correlation); otherwise NotPositiveDefinite propagates.
    """
    sigma = matern_kernel(distance.values.ravel(), params).reshape(distance.values.shape)
    np.fill_diagonal(sigma, 1.0)
    if repair:
        sigma = repaired_correlation(sigma)
    factor = spd_factorize(sigma)
    return CovarianceMatrix(sigma=sigma, params=params, distance=distance, factor=factor)


def read_locations(path) -> LocationTable:
    """Read a locations CSV with header id,lat,lon,elev."""
    ids, lat, lon, elev = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "lat", "lon", "elev"]:
            raise ValueError(f"{path}: expected header 'id,lat,lon,elev', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}: row {row_no}: expected 4 fields, got {len(row)}")
            ids.append(row[0].strip())
            try:
                lat.append(float(row[1]))
                lon.append(float(row[2]))
                elev.append(float(row[3]))
            except ValueError:
                raise ValueError(f"{path}: row {row_no}: non-numeric coordinate") from None
    return LocationTable(ids=tuple(ids), lat=np.array(lat), lon=np.array(lon),
                         elev=np.array(elev))


def write_locations(path, locs: LocationTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lat", "lon", "elev"])
        for i, loc_id in enumerate(locs.ids):
            writer.writerow([loc_id, repr(float(locs.lat[i])), repr(float(locs.lon[i])),
                             repr(float(locs.elev[i]))])
