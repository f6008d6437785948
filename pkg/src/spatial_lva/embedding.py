"""Distance-matrix repair and Euclidean embedding.

Raw travel-time matrices are generally asymmetric and break the triangle
inequality; valid covariogram families additionally require a Euclidean
distance.  This module repairs a raw matrix into a metric, approximates it
by a Euclidean one via spectral embedding of the double-centred Gram
matrix (classical multidimensional scaling), and selects the embedding
dimension by one of four criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_float_array, as_square_matrix, check_symmetric
from .errors import ValidationError

EARTH_RADIUS_KM = 6371.0088

#: Relative eigenvalue tolerance below which spectrum mass counts as zero.
EIGENVALUE_RTOL = 1e-9


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric nonnegative matrix with zero diagonal, with location ids."""

    ids: tuple
    entries: np.ndarray

    def __post_init__(self):
        entries = as_square_matrix(self.entries, "distance matrix")
        ids = tuple(self.ids)
        if len(ids) != entries.shape[0]:
            raise ValidationError("one id per row required")
        if len(set(ids)) != len(ids):
            raise ValidationError("ids must be unique")
        check_symmetric(entries, "distance matrix")
        if np.any(np.diag(entries) != 0.0):
            raise ValidationError("diagonal must be exactly zero")
        if np.any(entries < 0.0):
            raise ValidationError("distances must be nonnegative")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "entries", 0.5 * (entries + entries.T))

    @property
    def n(self) -> int:
        return len(self.ids)

    def reorder(self, ids: Sequence) -> "DistanceMatrix":
        """Restrict/permute to the given ids (all must be present)."""
        index = {v: i for i, v in enumerate(self.ids)}
        missing = [v for v in ids if v not in index]
        if missing:
            raise ValidationError(f"ids not present in distance matrix: {missing[:10]}")
        sel = np.array([index[v] for v in ids])
        return DistanceMatrix(tuple(ids), self.entries[np.ix_(sel, sel)])


@dataclass(frozen=True)
class GramMatrix:
    """Double-centred inner-product matrix (rows sum to zero)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = as_square_matrix(self.entries, "Gram matrix")
        check_symmetric(entries, "Gram matrix")
        scale = max(1.0, np.max(np.abs(entries)))
        if np.max(np.abs(entries.sum(axis=1))) > 1e-8 * scale:
            raise ValidationError("rows of a double-centred matrix must sum to 0")
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class Embedding:
    """Euclidean coordinates from the top eigenpairs of the Gram matrix."""

    ids: tuple
    coords: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        coords = as_float_array(self.coords, "coords")
        eigenvalues = as_float_array(self.eigenvalues, "eigenvalues")
        if coords.ndim != 2 or coords.shape[1] != eigenvalues.size:
            raise ValidationError("coords must be n x p with one eigenvalue per column")
        if np.any(eigenvalues <= 0.0) or np.any(np.diff(eigenvalues) > 0.0):
            raise ValidationError("eigenvalues must be positive and descending")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]


@dataclass(frozen=True)
class GeoCoords:
    """Latitude/longitude in degrees per location."""

    ids: tuple
    latitudes: np.ndarray
    longitudes: np.ndarray

    def __post_init__(self):
        lat = as_float_array(self.latitudes, "latitudes")
        lon = as_float_array(self.longitudes, "longitudes")
        ids = tuple(self.ids)
        if lat.shape != lon.shape or lat.ndim != 1 or lat.size != len(ids):
            raise ValidationError("need one (lat, lon) pair per id")
        if np.any(np.abs(lat) > 90.0):
            raise ValidationError("latitude out of [-90, 90]")
        if np.any(np.abs(lon) > 180.0):
            raise ValidationError("longitude out of [-180, 180]")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "latitudes", lat)
        object.__setattr__(self, "longitudes", lon)


def symmetrize(raw, ids=None) -> DistanceMatrix:
    """Average a raw (possibly asymmetric) matrix with its transpose."""
    raw = as_square_matrix(raw, "raw distances")
    if np.any(raw < 0.0):
        raise ValidationError("raw distances must be nonnegative")
    if np.any(np.diag(raw) != 0.0):
        raise ValidationError("raw diagonal must be zero")
    if ids is None:
        ids = range(raw.shape[0])
    return DistanceMatrix(tuple(ids), 0.5 * (raw + raw.T))


def metric_repair(d: DistanceMatrix) -> DistanceMatrix:
    """Largest metric dominated by ``d``: all-pairs shortest-path closure.

    Equivalent to iterating "clip d_kl to d_ik + d_il until no triangle is
    breached"; Floyd-Warshall reaches the same fixed point in one sweep.
    """
    a = d.entries.copy()
    for k in range(a.shape[0]):
        np.minimum(a, a[:, k, None] + a[None, k, :], out=a)
    a = np.minimum(a, a.T)
    return DistanceMatrix(d.ids, a)


def double_center(d: DistanceMatrix) -> GramMatrix:
    """B = -1/2 H (D o D) H with H the centring matrix."""
    sq = d.entries**2
    row = sq.mean(axis=1, keepdims=True)
    col = sq.mean(axis=0, keepdims=True)
    b = -0.5 * (sq - row - col + sq.mean())
    b = 0.5 * (b + b.T)
    return GramMatrix(b)


def positive_rank(d: DistanceMatrix) -> int:
    """Number of Gram eigenvalues above the relative tolerance."""
    eigvals = np.linalg.eigvalsh(double_center(d).entries)
    if eigvals.size == 0:
        return 0
    return int(np.sum(eigvals > EIGENVALUE_RTOL * max(eigvals[-1], 0.0)))


def embed(d: DistanceMatrix, p: int) -> Embedding:
    """Coordinates from the top-p eigenpairs of the centred Gram matrix.

    Column j is sqrt(eigenvalue_j) * eigenvector_j, so the coordinate Gram
    matrix reproduces the rank-p truncation of B exactly.
    """
    if p < 1:
        raise ValidationError("p must be a positive integer")
    b = double_center(d).entries
    eigvals, eigvecs = np.linalg.eigh(b)
    eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
    rank = int(np.sum(eigvals > EIGENVALUE_RTOL * max(eigvals[0], 0.0)))
    if p > rank:
        raise ValidationError(
            f"p={p} exceeds the positive rank {rank} of the centred Gram matrix"
        )
    coords = eigvecs[:, :p] * np.sqrt(eigvals[:p])
    return Embedding(d.ids, coords, eigvals[:p].copy())


def embedded_distances(e: Embedding) -> DistanceMatrix:
    """Pairwise Euclidean distances of the embedding coordinates."""
    diff = e.coords[:, None, :] - e.coords[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    np.fill_diagonal(dist, 0.0)
    return DistanceMatrix(e.ids, np.minimum(dist, dist.T))


def geodesic_distances(coords: GeoCoords) -> DistanceMatrix:
    """Great-circle (haversine) distances in km on the mean Earth sphere."""
    lat = np.radians(coords.latitudes)
    lon = np.radians(coords.longitudes)
    dlat = 0.5 * (lat[:, None] - lat[None, :])
    dlon = 0.5 * (lon[:, None] - lon[None, :])
    h = np.sin(dlat) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon) ** 2
    dist = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    np.fill_diagonal(dist, 0.0)
    return DistanceMatrix(coords.ids, np.minimum(dist, dist.T))


# ---------------------------------------------------------------------------
# Dimension selection.


@dataclass(frozen=True)
class DimensionSelection:
    """Chosen dimension plus the per-candidate score table."""

    criterion: str
    chosen: int
    table: tuple = field(default=())  # rows of (p, score) or (p, note)


def _upper_triangle(entries: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(entries.shape[0], k=1)
    return entries[iu]


def _rss_no_intercept(target: np.ndarray, regressor: np.ndarray) -> float:
    denom = float(regressor @ regressor)
    if denom == 0.0:
        return float(target @ target)
    slope = float(target @ regressor) / denom
    resid = target - slope * regressor
    return float(resid @ resid)


def select_dimension(
    d: DistanceMatrix,
    criterion: str,
    *,
    baseline: DistanceMatrix | None = None,
    scorer: Callable[[int], float] | None = None,
    requested: int | None = None,
    validity_cap: int | None = None,
    candidates: Sequence[int] | None = None,
) -> DimensionSelection:
    """Choose the embedding dimension p.

    criterion:
      - ``"rss"``: minimise the residual sum of squares of the no-intercept
        regression of the target distances on the embedded ones, reported
        relative to the same regression on ``baseline`` (required).
      - ``"sill_nugget"``: maximise ``scorer(p)`` (required callback, meant
        to return the fitted semisill-to-nugget ratio for candidate p);
        scorer failures are recorded in the table and skipped.
      - ``"cap"``: ``min(requested, validity_cap)`` for covariogram models
        only valid up to a maximum dimension.
      - ``"viz"``: 2 or 3, as requested, for plotting.
    """
    if criterion == "viz":
        if requested not in (2, 3):
            raise ValidationError("viz criterion requires requested dimension 2 or 3")
        return DimensionSelection("viz", requested)
    if criterion == "cap":
        if requested is None or validity_cap is None:
            raise ValidationError("cap criterion requires requested and validity_cap")
        return DimensionSelection("cap", min(requested, validity_cap))

    rank = positive_rank(d)
    if candidates is None:
        candidates = range(1, rank + 1)
    candidates = [int(p) for p in candidates]
    if any(p < 1 or p > rank for p in candidates):
        raise ValidationError(f"candidate dimensions must lie in 1..{rank}")

    if criterion == "rss":
        if baseline is None:
            raise ValidationError("rss criterion requires a baseline distance matrix")
        if baseline.ids != d.ids:
            baseline = baseline.reorder(d.ids)
        target = _upper_triangle(d.entries)
        base_rss = _rss_no_intercept(target, _upper_triangle(baseline.entries))
        full = embed(d, rank)
        sq = np.zeros_like(target)
        rss_by_p = {}
        for j in range(rank):
            col = full.coords[:, j]
            sq = sq + _upper_triangle((col[:, None] - col[None, :]) ** 2)
            if j + 1 in set(candidates):
                rss_by_p[j + 1] = _rss_no_intercept(target, np.sqrt(sq))
        rss = np.array([rss_by_p[p] for p in candidates])
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(base_rss > 0.0, rss / base_rss, np.where(rss > 0, np.inf, 1.0))
        best = rss.min()
        tol = 1e-12 * max(rss.max(), 1.0)
        chosen = candidates[int(np.argmax(rss <= best + tol))]
        table = tuple((p, float(r)) for p, r in zip(candidates, rel))
        return DimensionSelection("rss", chosen, table)

    if criterion == "sill_nugget":
        if scorer is None:
            raise ValidationError("sill_nugget criterion requires a scorer callback")
        table, scored = [], []
        for p in candidates:
            try:
                score = float(scorer(p))
            except Exception as exc:  # surface rather than guess
                table.append((p, f"failed: {exc}"))
                continue
            table.append((p, score))
            scored.append((score, p))
        if not scored:
            raise ValidationError("scorer failed for every candidate dimension")
        chosen = max(scored, key=lambda t: (t[0], -t[1]))[1]
        return DimensionSelection("sill_nugget", chosen, tuple(table))

    raise ValidationError(f"unknown criterion {criterion!r}")


class MetricEmbedding(BaseEstimator):
    """Estimator-style wrapper: distance matrix in, coordinates out.

    Parameters
    ----------
    n_components : int
        Embedding dimension (must not exceed the positive rank).
    repair : bool, default True
        Symmetrize and triangle-repair the input first, so raw travel-time
        matrices can be passed directly.
    """

    def __init__(self, n_components=2, repair=True):
        self.n_components = n_components
        self.repair = repair

    def fit(self, X, y=None):
        if isinstance(X, DistanceMatrix):
            d = X
        elif self.repair:
            d = symmetrize(X)
        else:
            d = DistanceMatrix(range(np.asarray(X).shape[0]), X)
        if self.repair:
            d = metric_repair(d)
        result = embed(d, self.n_components)
        self.ids_ = result.ids
        self.embedding_ = result.coords
        self.eigenvalues_ = result.eigenvalues
        self.positive_rank_ = positive_rank(d)
        self.distances_ = embedded_distances(result).entries
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
