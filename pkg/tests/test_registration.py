"""End-to-end registration pipeline behaviour."""

import numpy as np
import pytest

from spatial_lva import registration as R
from spatial_lva import variogram as V
from spatial_lva import warp as W
from spatial_lva.embedding import DistanceMatrix
from spatial_lva.errors import NumericalError, ValidationError
from spatial_lva.registration import (
    LocalVariationRegistration,
    phase_functionals,
    prepare_curves,
    register,
    register_both_modes,
)
from spatial_lva.simulation import (
    SimConfig,
    gen_dataset,
    gen_locations,
    gen_true_warps,
    location_distances,
)
from spatial_lva.smoothing import SampledCurve, l2_norm

T = np.linspace(0.0, 1.0, 80)


def identical_curves(n=6, f=lambda t: np.sin(np.pi * t)):
    return [SampledCurve(f"l{i}", T, f(T)) for i in range(n)]


def line_distances(n=6):
    entries = np.abs(np.subtract.outer(np.arange(n, dtype=float), np.arange(n, dtype=float)))
    return DistanceMatrix(tuple(f"l{i}" for i in range(n)), entries)


def simulated_setup(seed=0, psi=0.3, scheme="B", n=12, m=60, noise_sd=0.004):
    rng = np.random.default_rng(seed)
    locations = gen_locations(scheme, rng, n)
    warps = gen_true_warps(locations, psi, 0.1, rng, 501)
    config = SimConfig(scheme=scheme, psi=psi, replicates=1, seed=seed,
                       n_locations=n, n_times=m, noise_sd=noise_sd, grid_size=501)
    curves = gen_dataset(warps, config, rng)
    return curves, location_distances(locations), warps


class TestIdenticalCurves:
    @pytest.mark.parametrize("mode", ["spatial", "nonspatial"])
    def test_identity_warps(self, mode):
        result = register(identical_curves(), line_distances(), mode, compute_aligned=False)
        for h_inv in result.warps_inv:
            assert np.max(np.abs(h_inv.values - h_inv.grid)) < 1e-3
        if mode == "spatial":
            assert result.diagnostics.degenerate_cloud

    def test_functionals_vanish(self):
        result = register(identical_curves(), None, "nonspatial", compute_aligned=False)
        for f in phase_functionals(result).values():
            assert abs(f.displacement) < 1e-6
            assert abs(f.stretch) < 1e-6


class TestExchangeability:
    def test_equidistant_matches_nonspatial(self):
        curves, _, _ = simulated_setup(seed=3, n=6)
        n = len(curves)
        equal = np.ones((n, n)) - np.eye(n)
        d = DistanceMatrix(tuple(c.location_id for c in curves), equal)
        spatial = register(curves, d, "spatial", compute_aligned=False)
        nonspatial = register(curves, None, "nonspatial", compute_aligned=False)
        assert spatial.diagnostics.exchangeable_distances
        for a, b in zip(spatial.warps_inv, nonspatial.warps_inv):
            assert np.max(np.abs(a.values - b.values)) < 1e-8


class TestPipelineProperties:
    def test_warps_are_group_elements(self):
        # strictly monotone curves keep the warp slopes moderate; peaked
        # curves produce near-vertical warp segments at the profile
        # plateaus, where grid inversion cannot hold a 2/G bound
        rng = np.random.default_rng(1)
        locations = gen_locations("B", rng, 8)
        truth = gen_true_warps(locations, 0.3, 0.1, rng, 501)
        curves = [
            SampledCurve(f"loc{i:03d}", T, h(T) ** 2 + rng.normal(0, 0.002, T.size))
            for i, h in enumerate(truth)
        ]
        d = location_distances(locations)
        result = register(curves, d, "spatial", compute_aligned=False, grid_size=501)
        for h, h_inv in zip(result.warps, result.warps_inv):
            recomposed = W.compose(h, h_inv)
            assert np.max(np.abs(recomposed.values - recomposed.grid)) <= 2.0 / 501
            assert np.all(np.diff(h.values) > 0)
            assert np.all(np.diff(h_inv.values) > 0)

    def test_determinism(self):
        curves, d, _ = simulated_setup(seed=2)
        a = register(curves, d, "spatial", compute_aligned=False, grid_size=501)
        b = register(curves, d, "spatial", compute_aligned=False, grid_size=501)
        assert np.array_equal(a.weights, b.weights)
        for x, y in zip(a.warps_inv, b.warps_inv):
            assert np.array_equal(x.values, y.values)

    def test_weights_sum_to_one(self):
        curves, d, _ = simulated_setup(seed=4)
        result = register(curves, d, "spatial", compute_aligned=False, grid_size=501)
        assert abs(result.weights.sum() - 1.0) < 1e-10
        assert result.diagnostics.variogram is not None

    def test_alignment_reduces_spread(self):
        # average pairwise L2 distance between normalised aligned curves is
        # smaller than between normalised unaligned fits
        grid = np.linspace(0, 1, 501)
        improvements = []
        for rep in range(20):
            curves, d, _ = simulated_setup(seed=100 + rep, psi=0.3, scheme="B")
            result = register(curves, d, "spatial", compute_aligned=True,
                              normalize_aligned=True, grid_size=501)
            from spatial_lva.smoothing import l2_normalize

            unaligned = [l2_normalize(f) for f in result.fitted_curves]

            def avg_pair_dist(funcs):
                vals = np.stack([np.asarray(f(grid)) for f in funcs])
                total, count = 0.0, 0
                for i in range(len(funcs)):
                    for k in range(i + 1, len(funcs)):
                        total += np.sqrt(np.trapezoid((vals[i] - vals[k]) ** 2, grid))
                        count += 1
                return total / count

            improvements.append(avg_pair_dist(unaligned) - avg_pair_dist(result.aligned))
        assert np.mean(improvements) > 0.0
        assert np.mean(np.array(improvements) > 0) >= 0.8

    def test_aligned_normalised(self):
        curves, d, _ = simulated_setup(seed=5)
        result = register(curves, d, "spatial", compute_aligned=True,
                          normalize_aligned=True, grid_size=501)
        for curve in result.aligned:
            assert l2_norm(curve) == pytest.approx(1.0, abs=1e-6)


class TestSharedProfileModes:
    def test_register_both_modes_matches_separate_calls(self):
        curves, d, _ = simulated_setup(seed=6)
        spatial, nonspatial = register_both_modes(curves, d, grid_size=501)
        sep_sp = register(curves, d, "spatial", compute_aligned=False, grid_size=501)
        sep_ns = register(curves, None, "nonspatial", compute_aligned=False, grid_size=501)
        assert np.array_equal(spatial.weights, sep_sp.weights)
        for a, b in zip(nonspatial.warps_inv, sep_ns.warps_inv):
            assert np.array_equal(a.values, b.values)


class TestValidationAndErrors:
    def test_spatial_needs_distances(self):
        with pytest.raises(ValidationError):
            register(identical_curves(), None, "spatial")

    def test_too_few_curves(self):
        with pytest.raises(ValidationError):
            register(identical_curves(2), None, "nonspatial")

    def test_id_mismatch_lists_offenders(self):
        curves = identical_curves(4)
        wrong = DistanceMatrix(("l0", "l1", "l2", "zz"), line_distances(4).entries)
        with pytest.raises(ValidationError, match="l3"):
            register(curves, wrong, "spatial")

    def test_singular_covariance_advises(self, monkeypatch):
        curves, d, _ = simulated_setup(seed=7, n=6)
        tiny = V.MaternParams(1e-18, 1.0, 0.5, 1e12)  # corr == 1 to rounding
        fake = V.VariogramFit(tiny, "matern", True, 1, 1, 0.0, "inverse_gamma_sq")
        monkeypatch.setattr(R, "fit_irwls", lambda *a, **k: fake)
        with pytest.raises(NumericalError, match="nonspatial"):
            register(curves, d, "spatial", compute_aligned=False, grid_size=501)


class TestPrepareCurves:
    def test_rescales_arbitrary_axis(self):
        times = np.linspace(37.0, 158.0, 40)
        raw = [("a", times, np.sin(times / 40.0)), ("b", times, np.cos(times / 40.0))]
        curves, (t_min, t_max) = prepare_curves(raw)
        assert (t_min, t_max) == (37.0, 158.0)
        assert curves[0].times[0] == 0.0
        assert curves[0].times[-1] == 1.0

    def test_unit_axis_unchanged(self):
        raw = [("a", T, np.sin(np.pi * T))]
        curves, _ = prepare_curves(raw)
        assert np.array_equal(curves[0].times, T)

    def test_degenerate_axis(self):
        with pytest.raises(ValidationError):
            prepare_curves([("a", np.full(12, 3.0), np.zeros(12))])


class TestEstimator:
    def test_fit_exposes_attributes(self):
        curves, d, _ = simulated_setup(seed=8)
        est = LocalVariationRegistration(mode="spatial", grid_size=501,
                                         compute_aligned=False)
        est.fit(curves, distances=d)
        assert len(est.warps_inv_) == len(curves)
        assert est.variogram_ is not None
        assert abs(est.weights_.sum() - 1.0) < 1e-10
        functionals = est.phase_functionals()
        assert set(functionals) == {c.location_id for c in curves}

    def test_get_set_params(self):
        est = LocalVariationRegistration(mode="nonspatial", grid_size=201)
        assert est.get_params()["mode"] == "nonspatial"
        est.set_params(mode="spatial")
        assert est.mode == "spatial"

    def test_transform_requires_fit(self):
        with pytest.raises(ValidationError):
            LocalVariationRegistration().transform()

    def test_fit_transform_returns_aligned(self):
        curves, d, _ = simulated_setup(seed=9, n=6)
        est = LocalVariationRegistration(mode="nonspatial", grid_size=501)
        aligned = est.fit_transform(curves)
        assert len(aligned) == len(curves)
