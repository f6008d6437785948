"""Penalized-spline fitting, REML selection, derivatives, normalisation."""

import numpy as np
import pytest

from spatial_lva.errors import DegenerateInputError, ValidationError
from spatial_lva.smoothing import (
    SampledCurve,
    derivative,
    fit_smoothing_spline,
    l2_norm,
    l2_normalize,
)

GRID = np.linspace(0.0, 1.0, 1001)
T100 = np.linspace(0.0, 1.0, 100)


def curve(values, times=T100):
    return SampledCurve("loc", times, values)


class TestSampledCurve:
    def test_requires_sorted_times(self):
        t = T100.copy()
        t[3], t[4] = t[4], t[3]
        with pytest.raises(ValidationError):
            curve(np.zeros(100), t)

    def test_requires_unit_interval(self):
        with pytest.raises(ValidationError):
            curve(np.zeros(100), np.linspace(0.0, 1.5, 100))

    def test_requires_min_length(self):
        with pytest.raises(ValidationError):
            SampledCurve("x", np.linspace(0, 1, 9), np.zeros(9))

    def test_rejects_non_finite(self):
        values = np.zeros(100)
        values[5] = np.nan
        with pytest.raises(ValidationError):
            curve(values)


class TestPolynomialReproduction:
    def test_line_cubic_any_smoothing(self):
        for smoothing in (None, 1e-8, 1.0, 1e8):
            fit = fit_smoothing_spline(curve(2.0 * T100), 2, smoothing=smoothing)
            assert np.max(np.abs(fit(GRID) - 2.0 * GRID)) < 1e-8

    def test_quadratic_quintic_any_smoothing(self):
        for smoothing in (None, 1e-8, 1.0, 1e8):
            fit = fit_smoothing_spline(curve(T100**2), 3, smoothing=smoothing)
            assert np.max(np.abs(fit(GRID) - GRID**2)) < 1e-8

    def test_degree_below_penalty_generalises(self):
        # constants are in both null spaces
        fit2 = fit_smoothing_spline(curve(np.full(100, 0.7)), 2, smoothing=10.0)
        fit3 = fit_smoothing_spline(curve(np.full(100, 0.7)), 3, smoothing=10.0)
        assert np.max(np.abs(fit2(GRID) - 0.7)) < 1e-8
        assert np.max(np.abs(fit3(GRID) - 0.7)) < 1e-8


class TestFitProperties:
    def test_linearity_at_fixed_smoothing(self):
        rng = np.random.default_rng(5)
        values = np.sin(np.pi * T100) + rng.normal(0, 0.05, 100)
        base = fit_smoothing_spline(curve(values), 2, smoothing=1e-4)
        scaled = fit_smoothing_spline(curve(3.5 * values), 2, smoothing=1e-4)
        assert np.max(np.abs(scaled(GRID) - 3.5 * base(GRID))) < 1e-10

    def test_rss_monotone_in_smoothing(self):
        rng = np.random.default_rng(11)
        values = np.sin(np.pi * T100) + rng.normal(0, 0.05, 100)
        sample = curve(values)
        ladder = np.exp(np.arange(2.0, -19.0, -2.0))
        rss = []
        for smoothing in ladder:
            fit = fit_smoothing_spline(sample, 2, smoothing=float(smoothing))
            rss.append(float(np.sum((fit(T100) - values) ** 2)))
        assert np.all(np.diff(rss) <= 1e-12)
        assert rss[-1] < 0.05 * rss[0]  # heads towards interpolation

    def test_reml_deterministic(self):
        rng = np.random.default_rng(2)
        values = np.sin(np.pi * T100) + rng.normal(0, 0.05, 100)
        a = fit_smoothing_spline(curve(values), 3)
        b = fit_smoothing_spline(curve(values), 3)
        assert a.smoothing == b.smoothing
        assert np.array_equal(a.spline.c, b.spline.c)

    def test_penalty_order_validated(self):
        with pytest.raises(ValidationError):
            fit_smoothing_spline(curve(np.zeros(100)), 4)

    def test_too_few_distinct_points(self):
        t = np.repeat(np.linspace(0, 1, 4), 3)[:10]
        t = np.sort(np.unique(np.concatenate([t, [0.5]])))  # 5 distinct
        values = np.zeros(t.size)
        with pytest.raises((DegenerateInputError, ValidationError)):
            SampledCurve("x", t, values)  # length < 10 is already invalid


class TestMonteCarloAccuracy:
    def test_cubic_fit_rmse(self):
        # noise variance 0.004 (sd ~0.0632)
        hits = 0
        for rep in range(200):
            rng = np.random.default_rng(rep)
            values = np.sin(np.pi * T100) + rng.normal(0, np.sqrt(0.004), 100)
            fit = fit_smoothing_spline(curve(values), 2)
            rmse = np.sqrt(np.mean((fit(GRID) - np.sin(np.pi * GRID)) ** 2))
            hits += rmse < 0.05
        assert hits >= 190  # >= 95% of 200

    def test_quintic_derivative_sup_error(self):
        # noise scale matching the simulation-study generator (sd 0.004)
        mask = (GRID >= 0.05) & (GRID <= 0.95)
        target = np.pi * np.cos(np.pi * GRID[mask])
        hits = 0
        for rep in range(200):
            rng = np.random.default_rng(rep)
            values = np.sin(np.pi * T100) + rng.normal(0, 0.004, 100)
            fit = fit_smoothing_spline(curve(values), 3)
            sup = np.max(np.abs(derivative(fit)(GRID[mask]) - target))
            hits += sup < 0.5
        assert hits >= 180  # >= 90% of 200


class TestDerivative:
    def test_line(self):
        fit = fit_smoothing_spline(curve(2.0 * T100), 2)
        assert np.max(np.abs(derivative(fit)(GRID) - 2.0)) < 1e-6

    def test_quadratic(self):
        fit = fit_smoothing_spline(curve(T100**2), 3)
        assert np.max(np.abs(derivative(fit)(GRID) - 2.0 * GRID)) < 1e-6


class TestL2Normalize:
    def test_constant(self):
        fit = fit_smoothing_spline(curve(np.full(100, 2.0)), 2)
        normalized = l2_normalize(fit)
        assert np.max(np.abs(normalized(GRID) - 1.0)) < 1e-8

    def test_sine(self):
        # || sin(pi t) ||_2^2 = 1/2, so the normalised curve is sqrt(2) sin
        fit = fit_smoothing_spline(curve(np.sin(np.pi * T100)), 2)
        normalized = l2_normalize(fit)
        assert np.max(np.abs(normalized(GRID) - np.sqrt(2) * np.sin(np.pi * GRID))) < 1e-4
        assert l2_norm(normalized) == pytest.approx(1.0, abs=1e-8)

    def test_idempotent(self):
        fit = fit_smoothing_spline(curve(np.sin(np.pi * T100)), 2)
        once = l2_normalize(fit)
        twice = l2_normalize(once)
        assert np.max(np.abs(twice(GRID) - once(GRID))) < 1e-10

    def test_zero_curve_degenerate(self):
        fit = fit_smoothing_spline(curve(np.zeros(100)), 2)
        with pytest.raises(DegenerateInputError):
            l2_normalize(fit)
