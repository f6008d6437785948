"""Batch command-line front end.

Four subcommands: ``euclideanize`` (repair + embed a distance matrix),
``register`` (run the registration pipeline on curve CSVs), ``simulate``
(the Monte-Carlo benchmark) and ``functionals`` (recompute displacement
and stretch from stored warps).

Exit codes: 0 success, 2 input/validation failure, 3 numerical failure.
"""

from __future__ import annotations

import sys
from functools import wraps
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import warp as W
from ._io import atomic_write_csv
from .embedding import (
    DistanceMatrix,
    GeoCoords,
    embed,
    embedded_distances,
    geodesic_distances,
    metric_repair,
    positive_rank,
    select_dimension,
    symmetrize,
)
from .errors import NumericalError, SpatialLVAError, ValidationError
from .registration import phase_functionals, prepare_curves, register
from .simulation import SCHEMES, SimConfig, run_experiment
from .variogram import fit_irwls, model_semivariance, semivariance_cloud


def _exit_codes(func):
    """Map package errors to the documented exit codes."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)
        except SpatialLVAError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except pd.errors.ParserError as exc:
            click.echo(f"malformed CSV: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _read_table(path):
    try:
        return pd.read_csv(path, comment="#")
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except pd.errors.EmptyDataError:
        raise ValidationError(f"empty CSV: {path}")


def read_distances_csv(path):
    """Square (id column + id-named columns) or long (from_id,to_id,value) CSV.

    Returns (raw_matrix, ids); the matrix may still be asymmetric.
    """
    frame = _read_table(path)
    cols = [c.strip() for c in frame.columns]
    frame.columns = cols
    if {"from_id", "to_id", "value"}.issubset(cols):
        return _distances_from_long(frame, path)
    ids = [str(v) for v in frame.iloc[:, 0]]
    header_ids = [str(c) for c in cols[1:]]
    if sorted(header_ids) != sorted(ids):
        raise ValidationError(
            f"{path}: square distance CSV needs matching row and column ids"
        )
    body = frame[[c for c in cols[1:]]]
    try:
        raw = body[ids].to_numpy(dtype=float) if header_ids != ids else body.to_numpy(dtype=float)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: non-numeric distance entries ({exc})")
    if not np.all(np.isfinite(raw)):
        bad = int(np.flatnonzero(~np.isfinite(raw).all(axis=1))[0]) + 2
        raise ValidationError(f"{path}: non-finite distance near line {bad}")
    return raw, tuple(ids)


def _distances_from_long(frame, path):
    ids = list(dict.fromkeys([*map(str, frame["from_id"]), *map(str, frame["to_id"])]))
    index = {v: i for i, v in enumerate(ids)}
    n = len(ids)
    raw = np.full((n, n), np.nan)
    np.fill_diagonal(raw, 0.0)
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            value = float(row.value)
        except (TypeError, ValueError):
            raise ValidationError(f"{path}: non-numeric value on line {row_number}")
        raw[index[str(row.from_id)], index[str(row.to_id)]] = value
    missing = np.argwhere(np.isnan(raw))
    if missing.size:
        # a single stored direction stands for both
        for i, k in missing:
            if not np.isnan(raw[k, i]):
                raw[i, k] = raw[k, i]
    still = [(ids[i], ids[k]) for i, k in np.argwhere(np.isnan(raw))]
    if still:
        raise ValidationError(f"{path}: missing pairs {still[:10]}")
    return raw, tuple(ids)


def read_curves_csv(path):
    frame = _read_table(path)
    needed = {"location_id", "time", "value"}
    if not needed.issubset(frame.columns):
        raise ValidationError(f"{path}: curves CSV needs columns {sorted(needed)}")
    raw = []
    for location_id, group in frame.groupby("location_id", sort=False):
        times = group["time"].to_numpy(dtype=float)
        values = group["value"].to_numpy(dtype=float)
        order = np.argsort(times, kind="stable")
        times, values = times[order], values[order]
        dup = np.flatnonzero(np.diff(times) == 0.0)
        if dup.size:
            raise ValidationError(
                f"{path}: duplicate times for location {location_id!r} at t={times[dup[0]]!r}"
            )
        raw.append((str(location_id), times, values))
    if not raw:
        raise ValidationError(f"{path}: no curves found")
    return raw


def read_geocoords_csv(path) -> GeoCoords:
    frame = _read_table(path)
    cols = {c.lower(): c for c in frame.columns}
    id_col = cols.get("id") or cols.get("location_id")
    lat_col = cols.get("lat") or cols.get("latitude")
    lon_col = cols.get("lon") or cols.get("longitude")
    if not (id_col and lat_col and lon_col):
        raise ValidationError(f"{path}: coordinates CSV needs id, lat, lon columns")
    return GeoCoords(
        tuple(str(v) for v in frame[id_col]),
        frame[lat_col].to_numpy(dtype=float),
        frame[lon_col].to_numpy(dtype=float),
    )


def read_embedding_csv(path) -> DistanceMatrix:
    frame = _read_table(path)
    if frame.shape[1] < 2 or frame.columns[0] != "id":
        raise ValidationError(f"{path}: embedding CSV needs an id column plus coordinates")
    ids = tuple(str(v) for v in frame["id"])
    coords = frame.iloc[:, 1:].to_numpy(dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    np.fill_diagonal(dist, 0.0)
    return DistanceMatrix(ids, np.minimum(dist, dist.T))


@click.group()
def main():
    """Spatially aware functional registration toolkit."""


@main.command("euclideanize")
@click.argument("distances_csv", type=click.Path())
@click.option("--geodesic", "geodesic_csv", type=click.Path(), default=None,
              help="Coordinates CSV (id,lat,lon); geodesic distances form the RSS baseline.")
@click.option("--baseline-distances", "baseline_csv", type=click.Path(), default=None,
              help="Baseline distance CSV for the RSS criterion (alternative to --geodesic).")
@click.option("--curves", "curves_csv", type=click.Path(), default=None,
              help="Curves CSV; required for --dim auto-sill.")
@click.option("--dim", "dim_spec", required=True,
              help="'auto-rss', 'auto-sill', or an explicit positive integer.")
@click.option("--max-dim", type=int, default=None,
              help="Cap the candidate dimensions scanned by the auto criteria.")
@click.option("--out", "out_csv", type=click.Path(), required=True)
@_exit_codes
def cmd_euclideanize(distances_csv, geodesic_csv, baseline_csv, curves_csv, dim_spec,
                     max_dim, out_csv):
    """Repair a raw distance CSV into a metric and embed it in Euclidean space."""
    raw, ids = read_distances_csv(distances_csv)
    repaired = metric_repair(symmetrize(raw, ids))
    rank = positive_rank(repaired)
    candidates = range(1, min(rank, max_dim) + 1 if max_dim else rank + 1)
    report_rows = []
    if dim_spec == "auto-rss":
        if geodesic_csv:
            baseline = geodesic_distances(read_geocoords_csv(geodesic_csv)).reorder(ids)
        elif baseline_csv:
            b_raw, b_ids = read_distances_csv(baseline_csv)
            baseline = symmetrize(b_raw, b_ids).reorder(ids)
        else:
            raise ValidationError("--dim auto-rss needs --geodesic or --baseline-distances")
        selection = select_dimension(repaired, "rss", baseline=baseline,
                                     candidates=list(candidates))
        report_rows = [{"p": p, "relative_rss": score} for p, score in selection.table]
        chosen = selection.chosen
    elif dim_spec == "auto-sill":
        if not curves_csv:
            raise ValidationError("--dim auto-sill needs --curves to fit the variogram")
        curves, _ = prepare_curves(read_curves_csv(curves_csv))
        base = register(curves, mode="nonspatial", compute_aligned=False)
        lam_invs = {i: W.invert(lam) for i, lam in zip(base.ids, base.local_variations)}
        full = embed(repaired, rank)

        def scorer(p):
            coords = full.coords[:, :p]
            diff = coords[:, None, :] - coords[None, :, :]
            dist = np.sqrt(np.sum(diff**2, axis=-1))
            np.fill_diagonal(dist, 0.0)
            sub = DistanceMatrix(full.ids, np.minimum(dist, dist.T)).reorder(base.ids)
            fit = fit_irwls(semivariance_cloud(lam_invs, sub))
            return fit.params.semisill / max(fit.params.nugget, 1e-300)

        selection = select_dimension(repaired, "sill_nugget", scorer=scorer,
                                     candidates=list(candidates))
        report_rows = [{"p": p, "sill_to_nugget": score} for p, score in selection.table]
        chosen = selection.chosen
    else:
        try:
            chosen = int(dim_spec)
        except ValueError:
            raise ValidationError(f"--dim must be auto-rss, auto-sill or an integer, got {dim_spec!r}")
        if chosen < 1:
            raise ValidationError("--dim must be a positive integer")
    result = embed(repaired, chosen)
    frame = pd.DataFrame(result.coords, columns=[f"x{j+1}" for j in range(result.dimension)])
    frame.insert(0, "id", list(result.ids))
    atomic_write_csv(frame, out_csv, header_comments=[
        f"chosen_p = {chosen}",
        f"positive_rank = {rank}",
        f"criterion = {dim_spec}",
    ])
    if report_rows:
        atomic_write_csv(pd.DataFrame(report_rows), Path(out_csv).with_suffix(".report.csv"))
    click.echo(f"chosen p = {chosen} (positive rank {rank}); wrote {out_csv}")


@main.command("register")
@click.option("--curves", "curves_csv", type=click.Path(), required=True)
@click.option("--distances", "distances_csv", type=click.Path(), default=None)
@click.option("--embed", "embed_csv", type=click.Path(), default=None,
              help="Embedding coordinates CSV (as written by euclideanize).")
@click.option("--mode", type=click.Choice(["spatial", "nonspatial"]), default="spatial")
@click.option("--model", type=click.Choice(["matern", "exponential"]), default="matern")
@click.option("--weight-mode",
              type=click.Choice(["inverse_gamma_sq", "gamma_sq", "uniform"]),
              default="inverse_gamma_sq")
@click.option("--grid-size", type=int, default=W.DEFAULT_GRID_SIZE)
@click.option("--normalize-aligned", is_flag=True, default=False)
@click.option("--out-prefix", required=True)
@_exit_codes
def cmd_register(curves_csv, distances_csv, embed_csv, mode, model, weight_mode,
                 grid_size, normalize_aligned, out_prefix):
    """Estimate warps and aligned curves from a curves CSV."""
    curves, (t_min, t_max) = prepare_curves(read_curves_csv(curves_csv))
    span = t_max - t_min
    distances = None
    if mode == "spatial":
        if distances_csv:
            raw, ids = read_distances_csv(distances_csv)
            distances = symmetrize(raw, ids)
        elif embed_csv:
            distances = read_embedding_csv(embed_csv)
        else:
            raise ValidationError("spatial mode needs --distances or --embed")
    result = register(curves, distances, mode, model=model, weight_mode=weight_mode,
                      grid_size=grid_size, normalize_aligned=normalize_aligned)

    grid = result.central_map.grid
    warp_rows = []
    for location_id, h_inv in zip(result.ids, result.warps_inv):
        for t, v in zip(grid, h_inv.values):
            warp_rows.append({
                "location_id": location_id, "t": t, "h_inv": v,
                "t_orig": t_min + span * t, "h_inv_orig": t_min + span * v,
            })
    atomic_write_csv(pd.DataFrame(warp_rows), f"{out_prefix}_warps.csv")

    aligned_rows = []
    for location_id, curve in zip(result.ids, result.aligned):
        values = np.asarray(curve(grid), dtype=float)
        for t, v in zip(grid, values):
            aligned_rows.append({
                "location_id": location_id, "t": t, "t_orig": t_min + span * t, "value": v,
            })
    atomic_write_csv(pd.DataFrame(aligned_rows), f"{out_prefix}_aligned.csv")

    functional_rows = [
        {"location_id": i, "displacement": f.displacement, "stretch": f.stretch}
        for i, f in phase_functionals(result).items()
    ]
    atomic_write_csv(pd.DataFrame(functional_rows), f"{out_prefix}_functionals.csv")

    atomic_write_csv(
        pd.DataFrame({"location_id": list(result.ids), "weight": result.weights}),
        f"{out_prefix}_weights.csv",
    )

    _write_variogram_csv(result, distances, f"{out_prefix}_variogram.csv")
    click.echo(f"registered {len(result.ids)} locations; wrote {out_prefix}_*.csv")


def _write_variogram_csv(result, distances, path):
    from dataclasses import asdict

    diag = result.diagnostics
    comments = [f"mode = {diag.mode}"]
    frame = pd.DataFrame(columns=["distance", "semivariance", "fitted"])
    if diag.variogram is not None:
        fit = diag.variogram
        comments.append(f"model = {fit.model}")
        comments += [f"{key} = {value!r}" for key, value in asdict(fit.params).items()]
        comments.append(f"converged = {fit.converged}")
        comments.append(f"weighted_rss = {fit.weighted_rss!r}")
        d = distances.reorder(result.ids) if distances.ids != result.ids else distances
        lam_invs = [W.invert(lam) for lam in result.local_variations]
        cloud = semivariance_cloud(lam_invs, d)
        frame = pd.DataFrame({
            "distance": cloud.distances,
            "semivariance": cloud.semivariances,
            "fitted": model_semivariance(cloud.distances, fit.params, fit.model),
        })
    else:
        if diag.degenerate_cloud:
            comments.append("note = degenerate cloud (identical profiles); uniform weights")
        if diag.exchangeable_distances:
            comments.append("note = equidistant locations; uniform weights")
    atomic_write_csv(frame, path, header_comments=comments)


@main.command("simulate")
@click.option("--scheme", type=click.Choice(list(SCHEMES)), required=True)
@click.option("--psi", type=float, required=True)
@click.option("--reps", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--emit-data", "emit_dir", type=click.Path(), default=None,
              help="Also write per-replicate curves/distances/truth CSVs (serial).")
@click.option("--freeze-locations", is_flag=True, default=False)
@click.option("--out", "out_csv", type=click.Path(), required=True)
@_exit_codes
def cmd_simulate(scheme, psi, reps, seed, emit_dir, freeze_locations, out_csv):
    """Run one benchmark cell and write the aggregated results CSV."""
    if reps < 1:
        raise ValidationError("--reps must be at least 1")
    if not 0 <= seed < 2**64:
        raise ValidationError("--seed must be a 64-bit unsigned integer")
    config = SimConfig(scheme=scheme, psi=psi, replicates=reps, seed=seed,
                       freeze_locations=freeze_locations)
    rows = run_experiment(config, emit_dir=emit_dir)
    frame = pd.DataFrame([
        {
            "scheme": r.scheme, "psi": r.psi, "mode": r.mode,
            "replicates": r.replicates, "rejected": r.rejected,
            "avg_mse": r.avg_mse, "ci95_halfwidth": r.ci95_halfwidth,
        }
        for r in rows
    ])
    atomic_write_csv(frame, out_csv)
    if not all(r.complete for r in rows):
        click.echo(
            f"warning: rejection cap hit; only {rows[0].replicates} of {reps} "
            "replicates completed (result flagged incomplete)",
            err=True,
        )
    click.echo(f"wrote {out_csv}")


@main.command("functionals")
@click.option("--warps", "warps_csv", type=click.Path(), required=True)
@click.option("--out", "out_csv", type=click.Path(), required=True)
@_exit_codes
def cmd_functionals(warps_csv, out_csv):
    """Recompute displacement and stretch from a stored warps CSV."""
    frame = _read_table(warps_csv)
    needed = {"location_id", "t", "h_inv"}
    if not needed.issubset(frame.columns):
        raise ValidationError(f"{warps_csv}: warps CSV needs columns {sorted(needed)}")
    rows = []
    for location_id, group in frame.groupby("location_id", sort=False):
        values = group["h_inv"].to_numpy(dtype=float)
        try:
            h_inv = W.MonotoneMap.from_values(values)
        except SpatialLVAError as exc:
            raise ValidationError(f"{warps_csv}: invalid warp for {location_id!r}: {exc}")
        rows.append({
            "location_id": location_id,
            "displacement": W.displacement(h_inv),
            "stretch": W.stretch(h_inv),
        })
    atomic_write_csv(pd.DataFrame(rows), out_csv)
    click.echo(f"wrote {out_csv}")


if __name__ == "__main__":
    main()
