"""Command-line interface: formats, exit codes, determinism, round trips."""

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from spatial_lva.cli import main
from spatial_lva.embedding import DistanceMatrix
from spatial_lva.registration import prepare_curves, register
from spatial_lva.simulation import mse
from spatial_lva.warp import MonotoneMap


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def write_square_distances(path, points, ids=None):
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    ids = ids or [f"p{i}" for i in range(n)]
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    np.fill_diagonal(d, 0.0)
    frame = pd.DataFrame(np.minimum(d, d.T), columns=ids)
    frame.insert(0, "id", ids)
    frame.to_csv(path, index=False, float_format="%.17g")
    return np.minimum(d, d.T), ids


def write_curves(path, ids, times, value_fn):
    rows = [
        {"location_id": i, "time": t, "value": value_fn(idx, t)}
        for idx, i in enumerate(ids)
        for t in times
    ]
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")


class TestEuclideanize:
    def test_help(self, runner):
        result = invoke(runner, "euclideanize", "--help")
        assert result.exit_code == 0
        assert "Repair" in result.output

    def test_round_trip_auto_rss(self, runner, tmp_path):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (20, 5))
        src = tmp_path / "d.csv"
        d, ids = write_square_distances(src, pts)
        out = tmp_path / "embed.csv"
        result = invoke(runner, "euclideanize", src, "--dim", "auto-rss",
                        "--baseline-distances", src, "--out", out)
        assert result.exit_code == 0
        assert "chosen p = 5" in result.output
        frame = pd.read_csv(out, comment="#")
        coords = frame.iloc[:, 1:].to_numpy()
        assert coords.shape == (20, 5)
        diff = coords[:, None, :] - coords[None, :, :]
        rebuilt = np.sqrt((diff**2).sum(-1))
        assert np.max(np.abs(rebuilt - d)) < 1e-8
        assert (tmp_path / "embed.report.csv").exists()

    def test_explicit_dim_one(self, runner, tmp_path):
        rng = np.random.default_rng(1)
        src = tmp_path / "d.csv"
        write_square_distances(src, rng.uniform(0, 1, (8, 2)))
        out = tmp_path / "e.csv"
        result = invoke(runner, "euclideanize", src, "--dim", "1", "--out", out)
        assert result.exit_code == 0
        frame = pd.read_csv(out, comment="#")
        assert list(frame.columns) == ["id", "x1"]

    def test_auto_rss_needs_baseline(self, runner, tmp_path):
        src = tmp_path / "d.csv"
        write_square_distances(src, np.random.default_rng(2).uniform(0, 1, (6, 2)))
        result = invoke(runner, "euclideanize", src, "--dim", "auto-rss",
                        "--out", tmp_path / "e.csv")
        assert result.exit_code == 2

    def test_malformed_csv(self, runner, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_text("id,a,b\na,0,oops\nb,1,0\n")
        result = invoke(runner, "euclideanize", src, "--dim", "1",
                        "--out", tmp_path / "e.csv")
        assert result.exit_code == 2

    def test_long_format(self, runner, tmp_path):
        src = tmp_path / "long.csv"
        rows = []
        for a, b, v in [("x", "y", 2.0), ("y", "x", 4.0), ("x", "z", 1.0),
                        ("z", "x", 1.0), ("y", "z", 2.5), ("z", "y", 2.5)]:
            rows.append({"from_id": a, "to_id": b, "value": v})
        pd.DataFrame(rows).to_csv(src, index=False)
        out = tmp_path / "e.csv"
        result = invoke(runner, "euclideanize", src, "--dim", "1", "--out", out)
        assert result.exit_code == 0

    def test_auto_sill_needs_curves(self, runner, tmp_path):
        src = tmp_path / "d.csv"
        write_square_distances(src, np.random.default_rng(3).uniform(0, 1, (6, 2)))
        result = invoke(runner, "euclideanize", src, "--dim", "auto-sill",
                        "--out", tmp_path / "e.csv")
        assert result.exit_code == 2


class TestRegister:
    def test_identical_curves_zero_functionals(self, runner, tmp_path):
        ids = [f"l{i}" for i in range(5)]
        times = np.linspace(0.0, 1.0, 40)
        curves_csv = tmp_path / "curves.csv"
        write_curves(curves_csv, ids, times, lambda i, t: np.sin(np.pi * t))
        prefix = tmp_path / "out"
        result = invoke(runner, "register", "--curves", curves_csv,
                        "--mode", "nonspatial", "--out-prefix", prefix)
        assert result.exit_code == 0
        functionals = pd.read_csv(f"{prefix}_functionals.csv")
        assert np.max(np.abs(functionals["displacement"])) < 1e-3
        assert np.max(np.abs(functionals["stretch"])) < 1e-3
        weights = pd.read_csv(f"{prefix}_weights.csv")
        assert np.allclose(weights["weight"], 0.2)
        for suffix in ("warps", "aligned", "variogram"):
            assert (tmp_path / f"out_{suffix}.csv").exists()

    def test_nonspatial_needs_no_distances(self, runner, tmp_path):
        ids = [f"l{i}" for i in range(4)]
        times = np.linspace(0.0, 1.0, 30)
        curves_csv = tmp_path / "c.csv"
        write_curves(curves_csv, ids, times,
                     lambda i, t: np.sin(np.pi * t) + 0.01 * i * t)
        result = invoke(runner, "register", "--curves", curves_csv,
                        "--mode", "nonspatial", "--out-prefix", tmp_path / "o")
        assert result.exit_code == 0

    def test_spatial_needs_distance_source(self, runner, tmp_path):
        ids = [f"l{i}" for i in range(4)]
        curves_csv = tmp_path / "c.csv"
        write_curves(curves_csv, ids, np.linspace(0, 1, 30),
                     lambda i, t: np.sin(np.pi * t))
        result = invoke(runner, "register", "--curves", curves_csv,
                        "--mode", "spatial", "--out-prefix", tmp_path / "o")
        assert result.exit_code == 2

    def test_id_mismatch_exit_2(self, runner, tmp_path):
        ids = [f"l{i}" for i in range(4)]
        curves_csv = tmp_path / "c.csv"
        write_curves(curves_csv, ids, np.linspace(0, 1, 30),
                     lambda i, t: np.sin(np.pi * t))
        dist_csv = tmp_path / "d.csv"
        write_square_distances(dist_csv, np.random.default_rng(0).uniform(0, 1, (4, 2)),
                               ids=["l0", "l1", "l2", "other"])
        result = invoke(runner, "register", "--curves", curves_csv,
                        "--distances", dist_csv, "--out-prefix", tmp_path / "o")
        assert result.exit_code == 2
        assert "l3" in result.output or "l3" in str(result.stderr_bytes or b"")


class TestSimulate:
    def test_byte_identical_reruns(self, runner, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            result = invoke(runner, "simulate", "--scheme", "A", "--psi", "0.03",
                            "--reps", 2, "--seed", 7, "--out", out)
            assert result.exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_reps_zero_rejected(self, runner, tmp_path):
        result = invoke(runner, "simulate", "--scheme", "A", "--psi", "0.03",
                        "--reps", 0, "--seed", 1, "--out", tmp_path / "r.csv")
        assert result.exit_code == 2

    def test_output_schema(self, runner, tmp_path):
        out = tmp_path / "r.csv"
        result = invoke(runner, "simulate", "--scheme", "B", "--psi", "0.1",
                        "--reps", 2, "--seed", 3, "--out", out)
        assert result.exit_code == 0
        frame = pd.read_csv(out)
        assert list(frame.columns) == [
            "scheme", "psi", "mode", "replicates", "rejected", "avg_mse",
            "ci95_halfwidth",
        ]
        assert set(frame["mode"]) == {"spatial", "nonspatial"}


class TestEmitDataRoundTrip:
    def test_file_path_matches_library_path(self, runner, tmp_path):
        emit = tmp_path / "emitted"
        result = invoke(runner, "simulate", "--scheme", "C", "--psi", "0.3",
                        "--reps", 1, "--seed", 21, "--emit-data", emit,
                        "--out", tmp_path / "r.csv")
        assert result.exit_code == 0

        prefix = tmp_path / "reg"
        result = invoke(runner, "register",
                        "--curves", emit / "rep0000_curves.csv",
                        "--distances", emit / "rep0000_distances.csv",
                        "--mode", "spatial", "--out-prefix", prefix)
        assert result.exit_code == 0

        truth_frame = pd.read_csv(emit / "rep0000_truth_warps.csv")
        warp_frame = pd.read_csv(f"{prefix}_warps.csv")
        ids = list(dict.fromkeys(truth_frame["location_id"]))
        truth = [
            MonotoneMap.from_values(
                truth_frame[truth_frame["location_id"] == i]["h_inv"].to_numpy()
            )
            for i in ids
        ]
        estimated = [
            MonotoneMap.from_values(
                warp_frame[warp_frame["location_id"] == i]["h_inv"].to_numpy()
            )
            for i in ids
        ]
        cli_mse = mse(estimated, truth)

        # library path on the same CSV inputs
        from spatial_lva.cli import read_curves_csv, read_distances_csv
        from spatial_lva.embedding import symmetrize

        curves, _ = prepare_curves(read_curves_csv(emit / "rep0000_curves.csv"))
        raw, dist_ids = read_distances_csv(emit / "rep0000_distances.csv")
        lib = register(curves, symmetrize(raw, dist_ids), "spatial",
                       compute_aligned=False)
        lib_mse = mse(list(lib.warps_inv), truth)
        assert cli_mse == pytest.approx(lib_mse, abs=1e-12)


class TestFunctionals:
    def test_identity_warps_zero(self, runner, tmp_path):
        grid = np.linspace(0.0, 1.0, 1001)
        rows = [
            {"location_id": i, "t": t, "h_inv": t} for i in ("a", "b") for t in grid
        ]
        src = tmp_path / "warps.csv"
        pd.DataFrame(rows).to_csv(src, index=False, float_format="%.17g")
        out = tmp_path / "f.csv"
        result = invoke(runner, "functionals", "--warps", src, "--out", out)
        assert result.exit_code == 0
        frame = pd.read_csv(out)
        assert np.max(np.abs(frame[["displacement", "stretch"]].to_numpy())) < 1e-6

    def test_square_warp_closed_form(self, runner, tmp_path):
        grid = np.linspace(0.0, 1.0, 1001)
        rows = [{"location_id": "a", "t": t, "h_inv": t * t} for t in grid]
        src = tmp_path / "warps.csv"
        pd.DataFrame(rows).to_csv(src, index=False, float_format="%.17g")
        out = tmp_path / "f.csv"
        result = invoke(runner, "functionals", "--warps", src, "--out", out)
        assert result.exit_code == 0
        frame = pd.read_csv(out)
        assert frame["displacement"][0] == pytest.approx(1 / 6, abs=1e-3)
        assert frame["stretch"][0] == pytest.approx(np.log(2 / 3), abs=1e-3)

    def test_matches_register_output(self, runner, tmp_path):
        ids = [f"l{i}" for i in range(4)]
        times = np.linspace(0.0, 1.0, 40)
        curves_csv = tmp_path / "c.csv"
        rng = np.random.default_rng(5)
        offsets = rng.uniform(-0.05, 0.05, 4)
        write_curves(curves_csv, ids, times,
                     lambda i, t: np.sin(np.pi * min(max(t + offsets[i] * t * (1 - t), 0), 1)))
        prefix = tmp_path / "o"
        assert invoke(runner, "register", "--curves", curves_csv, "--mode",
                      "nonspatial", "--out-prefix", prefix).exit_code == 0
        out = tmp_path / "f.csv"
        assert invoke(runner, "functionals", "--warps", f"{prefix}_warps.csv",
                      "--out", out).exit_code == 0
        recomputed = pd.read_csv(out).set_index("location_id")
        original = pd.read_csv(f"{prefix}_functionals.csv").set_index("location_id")
        for col in ("displacement", "stretch"):
            assert np.max(np.abs(recomputed[col] - original[col])) < 1e-10

    def test_malformed_exit_2(self, runner, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_text("location_id,t\n1,0\n")
        result = invoke(runner, "functionals", "--warps", src, "--out", tmp_path / "f.csv")
        assert result.exit_code == 2
