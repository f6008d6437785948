"""Monotone time transformations and their functionals.

A :class:`MonotoneMap` is an increasing map of [0, 1] onto itself, stored as
values on a uniform grid and interpolated linearly in between.  The same
representation houses warping functions, their inverses, and cumulative
local-variation distributions, so composition, inversion and (weighted)
averaging all stay inside one closed family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import as_float_array
from .errors import DegenerateInputError, ValidationError

DEFAULT_GRID_SIZE = 1001

#: Blend weight pulling a merely non-decreasing set of values towards the
#: identity, enough to restore strict monotonicity.
STRICTNESS_RIDGE = 1e-9


def uniform_grid(grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    if grid_size < 3:
        raise ValidationError("grid_size must be at least 3")
    return np.linspace(0.0, 1.0, grid_size)


def _pin_endpoints(values: np.ndarray) -> np.ndarray:
    values = values.copy()
    values[0] = 0.0
    values[-1] = 1.0
    return values


def _strictify(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Make non-decreasing values strictly increasing by a tiny identity blend.

    Values are clipped into [0, 1] first: isotonic projections of sums with
    negative weights can leave the unit interval, and pinning the endpoints
    of such a sequence would break monotonicity.
    """
    values = _pin_endpoints(np.clip(values, 0.0, 1.0))
    if np.all(np.diff(values) > 0.0):
        return values
    return _pin_endpoints((1.0 - STRICTNESS_RIDGE) * values + STRICTNESS_RIDGE * grid)


@dataclass(frozen=True)
class MonotoneMap:
    """Strictly increasing map [0, 1] -> [0, 1] on a uniform grid.

    ``values[0] == 0`` and ``values[-1] == 1`` exactly; evaluation between
    grid points is linear interpolation.
    """

    values: np.ndarray
    grid: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        values = as_float_array(self.values, "values")
        grid = self.grid
        if grid is None:
            grid = uniform_grid(values.size)
        else:
            grid = as_float_array(grid, "grid")
        if values.ndim != 1 or values.size != grid.size:
            raise ValidationError("values and grid must be 1-D of equal length")
        if values[0] != 0.0 or values[-1] != 1.0:
            raise ValidationError("endpoints must be pinned to 0 and 1 exactly")
        if not np.all(np.diff(values) > 0.0):
            raise ValidationError("values must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "grid", grid)

    @property
    def grid_size(self) -> int:
        return self.grid.size

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)

    @classmethod
    def identity(cls, grid_size: int = DEFAULT_GRID_SIZE) -> "MonotoneMap":
        g = uniform_grid(grid_size)
        return cls(values=g.copy(), grid=g)

    @classmethod
    def from_values(cls, values, grid_size: int | None = None) -> "MonotoneMap":
        """Build from raw grid values, repairing strictness if needed."""
        values = as_float_array(values, "values")
        if grid_size is not None and values.size != grid_size:
            raise ValidationError("values length does not match grid_size")
        grid = uniform_grid(values.size)
        if np.any(np.diff(values) < 0.0):
            raise ValidationError("values must be non-decreasing")
        return cls(values=_strictify(values, grid), grid=grid)

    @classmethod
    def from_knots(cls, xs, ys, grid_size: int = DEFAULT_GRID_SIZE) -> "MonotoneMap":
        """Piecewise-linear map through knots, resampled onto the uniform grid."""
        xs = as_float_array(xs, "knot abscissae")
        ys = as_float_array(ys, "knot ordinates")
        if xs.size != ys.size or xs.size < 2:
            raise ValidationError("need equally many (>= 2) knot abscissae and ordinates")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise ValidationError("knots must be strictly increasing in both coordinates")
        if xs[0] != 0.0 or xs[-1] != 1.0 or ys[0] != 0.0 or ys[-1] != 1.0:
            raise ValidationError("knots must start at (0, 0) and end at (1, 1)")
        grid = uniform_grid(grid_size)
        return cls(values=_strictify(np.interp(grid, xs, ys), grid), grid=grid)


@dataclass(frozen=True)
class PhaseFunctionals:
    """Scalar summaries of a warp: time displacement and log peak stretch."""

    displacement: float
    stretch: float

    def __post_init__(self):
        if not (-0.5 < self.displacement < 0.5):
            raise ValidationError("displacement must lie in (-1/2, 1/2)")
        if not np.isfinite(self.stretch):
            raise ValidationError("stretch must be finite")


class WeightedMeanResult(NamedTuple):
    map: MonotoneMap
    projected: bool


def local_variation(derivative_curve, grid_size: int = DEFAULT_GRID_SIZE) -> MonotoneMap:
    """Cumulative distribution of |f'| over [0, 1], normalised to total mass 1.

    ``derivative_curve`` is the derivative f' as a :class:`SmoothCurve` (or any
    callable evaluable on [0, 1]).  The result is ridge-blended with the
    identity so it stays strictly increasing even where f' vanishes on
    intervals.
    """
    grid = uniform_grid(grid_size)
    speed = np.abs(np.asarray(derivative_curve(grid), dtype=float))
    if not np.all(np.isfinite(speed)):
        raise ValidationError("derivative evaluates to non-finite values")
    h = grid[1] - grid[0]
    cumulative = np.concatenate(
        ([0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * h))
    )
    total = cumulative[-1]
    if total <= 0.0:
        raise DegenerateInputError("derivative is identically zero")
    values = cumulative / total
    values = (1.0 - STRICTNESS_RIDGE) * values + STRICTNESS_RIDGE * grid
    return MonotoneMap(values=_pin_endpoints(values), grid=grid)


def invert(m: MonotoneMap) -> MonotoneMap:
    """Piecewise-linear inverse, resampled onto the same uniform grid."""
    values = np.interp(m.grid, m.values, m.grid)
    return MonotoneMap(values=_strictify(values, m.grid), grid=m.grid)


def compose(outer: MonotoneMap, inner: MonotoneMap) -> MonotoneMap:
    """Grid evaluation of outer(inner(t)) with re-pinned endpoints."""
    if outer.grid_size != inner.grid_size:
        raise ValidationError("maps must share one grid size")
    values = np.interp(inner.values, outer.grid, outer.values)
    return MonotoneMap(values=_strictify(values, outer.grid), grid=outer.grid)


def weighted_mean(maps: Sequence[MonotoneMap], weights) -> WeightedMeanResult:
    """Pointwise weighted sum of maps.

    Weights must sum to one but may be negative (covariance-optimal weights
    are not sign-constrained), in which case the sum can lose monotonicity;
    it is then projected back by pool-adjacent-violators and the result is
    flagged via ``projected``.
    """
    if len(maps) == 0:
        raise ValidationError("need at least one map")
    weights = as_float_array(weights, "weights")
    if weights.size != len(maps):
        raise ValidationError("one weight per map required")
    if abs(weights.sum() - 1.0) > 1e-10:
        raise ValidationError(f"weights must sum to 1, got {weights.sum()!r}")
    grid_size = maps[0].grid_size
    if any(m.grid_size != grid_size for m in maps):
        raise ValidationError("maps must share one grid size")
    stacked = np.stack([m.values for m in maps])
    values = weights @ stacked
    projected = bool(np.any(np.diff(values) < 0.0))
    if projected:
        values = _isotonic_projection(values)
    grid = maps[0].grid
    return WeightedMeanResult(MonotoneMap(values=_strictify(values, grid), grid=grid), projected)


def _isotonic_projection(values: np.ndarray) -> np.ndarray:
    """Least-squares non-decreasing projection (pool adjacent violators)."""
    level = values.astype(float).copy()
    weight = np.ones_like(level)
    blocks = []  # (value, weight) stack
    for v, w in zip(level, weight):
        blocks.append([v, w])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            v1, w1 = blocks.pop()
            v0, w0 = blocks.pop()
            blocks.append([(v0 * w0 + v1 * w1) / (w0 + w1), w0 + w1])
    out = np.empty_like(level)
    pos = 0
    for v, w in blocks:
        n = int(round(w))
        out[pos : pos + n] = v
        pos += n
    return out


def displacement(h_inv: MonotoneMap) -> float:
    """Mean of the distribution with CDF ``h_inv``, minus the mean 1/2 of id.

    The Stieltjes integral of t dH(t) is computed by parts; the remaining
    Lebesgue integral of the piecewise-linear H is exact on its own grid.
    """
    return 0.5 - float(np.trapezoid(h_inv.values, h_inv.grid))


def stretch(h_inv: MonotoneMap) -> float:
    """Log of 12x the variance of the distribution with CDF ``h_inv``.

    Zero for the identity; negative for mass concentrated around the centre
    (sharp peak), positive for mass spread out (flat peak).
    """
    delta = displacement(h_inv)
    c = delta + 0.5
    t, v = h_inv.grid, h_inv.values
    h = np.diff(t)
    mid = 0.5 * (t[:-1] + t[1:])
    # integral of (t-c) * v(t) dt, exact for piecewise-linear v
    lin = np.sum(h * (mid - c) * 0.5 * (v[:-1] + v[1:]) + np.diff(v) * h**2 / 12.0)
    second_moment = (1.0 - c) ** 2 - 2.0 * lin
    return float(np.log(12.0 * second_moment))
