"""Spatial dependence of functional summaries: variograms and mean weights.

The empirical object is the variogram cloud of all location pairs,
(distance, half squared L2 difference of the two local-variation
inverses).  A Matérn (or exponential) semivariance model is fitted to the
cloud by iteratively reweighted nonlinear least squares, converted to a
covariance matrix, and inverted into best-linear-unbiased mean weights.

The Matérn correlation is evaluated in log space,

    log corr = (1-v) log 2 - log Gamma(v) + v log x + log K_v(x),
    x = sqrt(2 v) d / rho,

with an exponentially scaled Bessel K for moderate shape and a uniform
asymptotic (Debye) expansion for shape > 50, where the scaled Bessel
overflows; fitted shapes above 100 occur in practice and must not
produce NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln, kve

from ._validation import as_float_array
from .embedding import DistanceMatrix
from .errors import DegenerateInputError, NumericalError, ValidationError
from .warp import MonotoneMap

SHAPE_BOUNDS = (0.05, 150.0)

#: Shape above which the scaled Bessel K overflows for small arguments
#: and the uniform asymptotic expansion takes over.
_ASYMPTOTIC_SHAPE = 50.0

#: Debye polynomials u_0..u_5 (ascending coefficients in t = 1/sqrt(1+z^2)).
_DEBYE = (
    np.array([1.0]),
    np.array([0.0, 1 / 8, 0.0, -5 / 24]),
    np.array([0.0, 0.0, 9 / 128, 0.0, -77 / 192, 0.0, 385 / 1152]),
    np.array([0.0, 0.0, 0.0, 75 / 1024, 0.0, -4563 / 5120, 0.0, 17017 / 9216, 0.0, -85085 / 82944]),
    np.array([0.0, 0.0, 0.0, 0.0, 3675 / 32768, 0.0, -96833 / 40960, 0.0, 144001 / 16384, 0.0,
              -7436429 / 663552, 0.0, 37182145 / 7962624]),
    np.array([0.0, 0.0, 0.0, 0.0, 0.0, 59535 / 262144, 0.0, -67608983 / 9175040, 0.0,
              250881631 / 5898240, 0.0, -108313205 / 1179648, 0.0, 5391411025 / 63700992, 0.0,
              -5391411025 / 191102976]),
)


def _log_kv_uniform(order: float, x: np.ndarray) -> np.ndarray:
    """log K_order(x) by the large-order uniform asymptotic expansion."""
    z = x / order
    t = 1.0 / np.sqrt(1.0 + z * z)
    eta = np.sqrt(1.0 + z * z) + np.log(z) - np.log1p(np.sqrt(1.0 + z * z))
    series = np.zeros_like(z)
    for k, coeffs in enumerate(_DEBYE):
        series += (-1.0) ** k * np.polynomial.polynomial.polyval(t, coeffs) / order**k
    return 0.5 * np.log(np.pi / (2.0 * order)) - order * eta - 0.25 * np.log1p(z * z) + np.log(series)


def matern_correlation(d, shape: float, range_: float):
    """Matérn correlation at distances ``d``; finite and within [0, 1]."""
    if not (SHAPE_BOUNDS[0] <= shape <= SHAPE_BOUNDS[1]):
        raise ValidationError(f"shape must lie in {SHAPE_BOUNDS}")
    if range_ <= 0.0:
        raise ValidationError("range must be positive")
    d = np.asarray(d, dtype=float)
    scalar = d.ndim == 0
    x = np.sqrt(2.0 * shape) * np.atleast_1d(d) / range_
    out = np.ones_like(x)
    pos = x > 0.0
    xp = x[pos]
    if shape > _ASYMPTOTIC_SHAPE:
        log_k = _log_kv_uniform(shape, xp)
        log_corr = (1.0 - shape) * np.log(2.0) - gammaln(shape) + shape * np.log(xp) + log_k
        out[pos] = np.exp(np.minimum(log_corr, 0.0))
    else:
        # The scaled Bessel overflows only near x = 0 (the Gamma(v)(2/x)^v
        # pole); there the correlation is 1 up to a correction
        # x^2/(4(shape-1)) < 1e-12 in the affected region.
        log_kve_pred = gammaln(shape) - np.log(2.0) + shape * (np.log(2.0) - np.log(xp))
        safe = log_kve_pred < 690.0
        xs = xp[safe]
        log_k = np.log(kve(shape, xs)) - xs
        log_corr = (1.0 - shape) * np.log(2.0) - gammaln(shape) + shape * np.log(xs) + log_k
        vals = np.ones_like(xp)
        vals[safe] = np.exp(np.minimum(log_corr, 0.0))
        out[pos] = vals
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class MaternParams:
    """Nugget, semisill, shape and range of a Matérn semivariance model."""

    nugget: float
    semisill: float
    shape: float
    range_: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.nugget, self.semisill, self.shape, self.range_])):
            raise ValidationError("parameters must be finite")
        if self.nugget < 0.0:
            raise ValidationError("nugget must be nonnegative")
        if self.semisill <= 0.0:
            raise ValidationError("semisill must be positive")
        if not (SHAPE_BOUNDS[0] <= self.shape <= SHAPE_BOUNDS[1]):
            raise ValidationError(f"shape must lie in {SHAPE_BOUNDS}")
        if self.range_ <= 0.0:
            raise ValidationError("range must be positive")

    @property
    def sill(self) -> float:
        return self.nugget + self.semisill


@dataclass(frozen=True)
class ExponentialParams:
    """Nugget, sill and scale of an exponential covariance model."""

    nugget: float
    sill: float
    scale: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.nugget, self.sill, self.scale])):
            raise ValidationError("parameters must be finite")
        if self.nugget < 0.0:
            raise ValidationError("nugget must be nonnegative")
        if self.sill <= 0.0:
            raise ValidationError("sill must be positive")
        if self.scale <= 0.0:
            raise ValidationError("scale must be positive")


@dataclass(frozen=True)
class VariogramCloud:
    """All-pairs empirical semivariances against distance."""

    distances: np.ndarray
    semivariances: np.ndarray

    def __post_init__(self):
        d = as_float_array(self.distances, "distances")
        sv = as_float_array(self.semivariances, "semivariances")
        if d.ndim != 1 or d.shape != sv.shape:
            raise ValidationError("distances and semivariances must be 1-D of equal length")
        if np.any(d <= 0.0):
            raise ValidationError("cloud distances must be positive")
        if np.any(sv < 0.0):
            raise ValidationError("semivariances must be nonnegative")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "semivariances", sv)

    def __len__(self) -> int:
        return self.distances.size

    def binned(self, n_bins: int = 50) -> "VariogramCloud":
        """Equal-count binning (means per bin) for very large clouds."""
        if len(self) <= n_bins:
            return self
        order = np.argsort(self.distances, kind="stable")
        edges = np.linspace(0, len(self), n_bins + 1).astype(int)
        d, sv = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                sel = order[a:b]
                d.append(self.distances[sel].mean())
                sv.append(self.semivariances[sel].mean())
        return VariogramCloud(np.array(d), np.array(sv))


def semivariance_cloud(maps, d: DistanceMatrix) -> VariogramCloud:
    """Cloud of (distance, 0.5 ||m_i - m_k||_L2^2) over unordered pairs.

    ``maps`` are the local-variation inverses, either a sequence aligned
    with ``d.ids`` or a mapping from id to map.
    """
    if isinstance(maps, Mapping):
        missing = [i for i in d.ids if i not in maps]
        if missing:
            raise ValidationError(f"maps missing for ids: {missing[:10]}")
        seq = [maps[i] for i in d.ids]
    else:
        seq = list(maps)
        if len(seq) != d.n:
            raise ValidationError(
                f"got {len(seq)} maps for {d.n} ids in the distance matrix"
            )
    if d.n < 3:
        raise ValidationError("need at least 3 locations")
    grid = seq[0].grid
    if any(m.grid_size != grid.size for m in seq):
        raise ValidationError("maps must share one grid size")
    values = np.stack([m.values for m in seq])
    w = np.full(grid.size, grid[1] - grid[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    gram = (values * w) @ values.T
    sq = np.diag(gram)
    semiv = 0.5 * np.clip(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0, None)
    iu = np.triu_indices(d.n, k=1)
    return VariogramCloud(d.entries[iu], semiv[iu])


def model_semivariance(d, params, model: str = "matern"):
    """Model semivariance gamma(d); gamma(0) := 0 exactly.

    The nugget appears only as the d -> 0+ limit, which keeps the implied
    covariance matrix positive definite for Euclidean distances.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise ValidationError("distances must be nonnegative")
    scalar = d.ndim == 0
    dv = np.atleast_1d(d)
    gamma = _semivariance_positive(dv, params, model)
    gamma[dv == 0.0] = 0.0
    return float(gamma[0]) if scalar else gamma


def _semivariance_positive(d: np.ndarray, params, model: str) -> np.ndarray:
    """Semivariance treating every distance as the d -> 0+ limit or beyond."""
    if model == "matern":
        corr = matern_correlation(d, params.shape, params.range_)
        return params.nugget + params.semisill * (1.0 - corr)
    if model == "exponential":
        return params.nugget + params.sill * (1.0 - np.exp(-d / params.scale))
    raise ValidationError(f"unknown model {model!r}")


# ---------------------------------------------------------------------------
# Iteratively reweighted nonlinear least squares.


@dataclass(frozen=True)
class VariogramFit:
    """Fitted model parameters plus convergence diagnostics."""

    params: object
    model: str
    converged: bool
    outer_iterations: int
    inner_iterations: int
    weighted_rss: float
    weight_mode: str


def _params_from_log(z: np.ndarray, model: str):
    v = np.exp(z)
    if model == "matern":
        return MaternParams(v[0], v[1], float(np.clip(v[2], *SHAPE_BOUNDS)), v[3])
    return ExponentialParams(v[0], v[1], v[2])


def _log_bounds(model: str):
    lo, hi = np.full(4, -46.0), np.full(4, 46.0)
    if model == "matern":
        lo[2], hi[2] = np.log(SHAPE_BOUNDS[0]), np.log(SHAPE_BOUNDS[1])
        return lo, hi
    return lo[:3], hi[:3]


def _levenberg_marquardt(residual, z0, lo, hi, max_iter, step_tol):
    """Damped least squares over box-clipped parameters (finite-difference J)."""
    z = np.clip(z0, lo, hi)
    r = residual(z)
    cost = float(r @ r)
    mu = 1e-3
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        jac = np.empty((r.size, z.size))
        for j in range(z.size):
            h = 1e-6 * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] = min(z[j] + h, hi[j])
            zm[j] = max(z[j] - h, lo[j])
            jac[:, j] = (residual(zp) - residual(zm)) / (zp[j] - zm[j])
        grad = jac.T @ r
        hess = jac.T @ jac
        diag = np.maximum(np.diag(hess), 1e-12)
        accepted = False
        while mu <= 1e12:
            try:
                step = np.linalg.solve(hess + mu * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            z_new = np.clip(z + step, lo, hi)
            r_new = residual(z_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                rel_step = np.max(np.abs(z_new - z) / (1.0 + np.abs(z)))
                z, r, cost = z_new, r_new, cost_new
                mu = max(mu / 3.0, 1e-12)
                if rel_step < step_tol:
                    converged = True
                break
            mu *= 10.0
        if not accepted or converged:
            break
    return z, cost, converged, n_iter


def fit_irwls(
    cloud: VariogramCloud,
    model: str = "matern",
    *,
    weight_mode: str = "inverse_gamma_sq",
    max_outer: int = 20,
    outer_tol: float = 1e-4,
    max_inner: int = 100,
    inner_tol: float = 1e-6,
) -> VariogramFit:
    """Fit a semivariance model to the cloud by IRWLS.

    The outer loop starts from uniform weights, fits by damped nonlinear
    least squares, then recomputes the weights from the fitted curve:
    ``weight_mode="inverse_gamma_sq"`` uses 1/gamma(d)^2 (Cressie's
    weighting, the default), ``"gamma_sq"`` uses gamma(d)^2, and
    ``"uniform"`` skips reweighting.  Non-convergence is flagged on the
    result rather than raised.
    """
    if model not in ("matern", "exponential"):
        raise ValidationError(f"unknown model {model!r}")
    if weight_mode not in ("inverse_gamma_sq", "gamma_sq", "uniform"):
        raise ValidationError(f"unknown weight_mode {weight_mode!r}")
    d, sv = cloud.distances, cloud.semivariances
    if d.size < 8:
        raise ValidationError("need at least 8 cloud points")
    if np.unique(d).size < 3:
        raise ValidationError("need at least 3 distinct distances in the cloud")
    scale = float(np.max(sv))
    if scale <= 1e-14:
        raise DegenerateInputError("all semivariances are (numerically) zero")

    order = np.argsort(d, kind="stable")
    n_decile = max(1, d.size // 10)
    nugget0 = max(float(np.mean(sv[order[:n_decile]])), 1e-12)
    semisill0 = max(float(np.mean(sv)) - nugget0, 1e-12)
    range0 = float(np.median(d))
    if model == "matern":
        z = np.log(np.array([nugget0, semisill0, 1.0, range0]))
    else:
        z = np.log(np.array([nugget0, semisill0, range0]))
    lo, hi = _log_bounds(model)

    weights = np.ones_like(sv)
    inner_total = 0
    inner_ok = False
    outer_done = 0
    outer_ok = False
    for outer in range(1, max_outer + 1):
        outer_done = outer
        sqrt_w = np.sqrt(weights)

        def residual(zv):
            params = _params_from_log(zv, model)
            return sqrt_w * (_semivariance_positive(d, params, model) - sv)

        prev = np.exp(z)
        z, cost, inner_ok, used = _levenberg_marquardt(
            residual, z, lo, hi, max_inner, inner_tol
        )
        inner_total += used
        theta = np.exp(z)
        if outer > 1:
            change = np.max(np.abs(theta - prev) / (np.abs(prev) + 1e-300))
            if change < outer_tol:
                outer_ok = True
                break
        if weight_mode == "uniform" or outer == max_outer:
            outer_ok = weight_mode == "uniform" or outer_ok
            break
        params = _params_from_log(z, model)
        gamma = _semivariance_positive(d, params, model)
        floor = 1e-10 * max(1.0, scale)
        if weight_mode == "inverse_gamma_sq":
            weights = 1.0 / np.maximum(gamma, floor) ** 2
        else:
            weights = np.maximum(gamma, floor) ** 2
        weights *= weights.size / weights.sum()

    params = _params_from_log(z, model)
    sqrt_w = np.sqrt(weights)
    final_rss = float(np.sum((sqrt_w * (_semivariance_positive(d, params, model) - sv)) ** 2))
    return VariogramFit(
        params=params,
        model=model,
        converged=bool(inner_ok and outer_ok),
        outer_iterations=outer_done,
        inner_iterations=inner_total,
        weighted_rss=final_rss,
        weight_mode=weight_mode,
    )


# ---------------------------------------------------------------------------
# Covariances and optimal mean weights.


def covariance_matrix(params, d: DistanceMatrix, model: str = "matern") -> np.ndarray:
    """C_ik = 2 gamma(inf) - 2 gamma(d_ik); diagonal 2 (semisill + nugget).

    Raises if the result is not positive definite, which signals a
    non-Euclidean distance matrix: embed it first.
    """
    if model == "matern":
        c = 2.0 * params.semisill * matern_correlation(d.entries, params.shape, params.range_)
        np.fill_diagonal(c, 2.0 * (params.semisill + params.nugget))
    elif model == "exponential":
        c = 2.0 * params.sill * np.exp(-d.entries / params.scale)
        np.fill_diagonal(c, 2.0 * (params.sill + params.nugget))
    else:
        raise ValidationError(f"unknown model {model!r}")
    c = 0.5 * (c + c.T)
    eigvals = np.linalg.eigvalsh(c)
    if eigvals[0] <= 1e-12 * max(eigvals[-1], 0.0):
        raise NumericalError(
            "covariance matrix is not positive definite; the distances are "
            "likely non-Euclidean - approximate them by a Euclidean embedding "
            "(metric repair + embed) or use the nonspatial mode"
        )
    return c


def blue_weights(c: np.ndarray) -> np.ndarray:
    """Best-linear-unbiased mean weights C^-1 1 / (1' C^-1 1).

    Solves the linear system rather than inverting; raises with the
    condition estimate if the matrix is too ill-conditioned to trust.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError("covariance matrix must be square")
    eigvals = np.linalg.eigvalsh(0.5 * (c + c.T))
    if eigvals[0] <= 0.0:
        raise NumericalError("covariance matrix is not positive definite")
    cond = float(eigvals[-1] / eigvals[0])
    if cond > 1e12:
        raise NumericalError(
            f"covariance matrix condition estimate {cond:.3g} exceeds 1e12",
            condition_estimate=cond,
        )
    ones = np.ones(c.shape[0])
    sol = np.linalg.solve(0.5 * (c + c.T), ones)
    weights = sol / sol.sum()
    return weights
