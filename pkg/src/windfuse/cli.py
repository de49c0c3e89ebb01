"""Command-line frontend.

Subcommands cover the whole loop: ``simulate`` (synthetic panels),
``ingest`` (real station/forecast files to panels), ``fit`` (maximum
likelihood, optionally cross-validated), ``predict`` (scenario files for
one day block), ``score`` (verification of scenario files), ``pipeline``
(the rotated train/test experiment in one shot).

Reproducibility surface: a global ``--seed``, an INI config file whose
values sit between built-in defaults and explicit flags, and a JSON
manifest written next to the first output of every artifact-producing
run (tool version, argv, seed, SHA-256 of config and inputs, output
list).

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure — each non-zero exit prints a one-line diagnostic to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import (BoxCoxSpec, Panel, PanelFormatError, StationMeta,
                   complete_block_indices, read_panel, vectorize,
                   write_panel)
from .estimate import fit_mle, standard_errors
from .ingest import (build_obs_panel, cluster_stations, parse_asos_minute,
                     parse_speed_csv, read_nwp_csv, read_station_csv)
from .model import Geometry, SingularModelError
from .params import ModelStructure, ThetaCodec, read_theta, write_theta
from .pipeline import rolling_thirds, run_pipeline, subset_blocks
from .predict import (conditional_forecast, extend_for_stations,
                      read_scenarios, sample_scenarios, write_scenarios)
from .synth import make_test_geometry, random_theta, simulate_panel
from .transform import transform_panel
from .verify import (ScoreReport, average_periodogram,
                     empirical_st_correlation, energy_score, periodogram,
                     rank_histogram, rmse, variogram_score,
                     write_score_report)

__all__ = ["main"]

_PROG = "windfuse"


# ---------------------------------------------------------------------------
# config and manifest plumbing
# ---------------------------------------------------------------------------

def _load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            cp.read(p)
        except configparser.Error as exc:
            raise PanelFormatError(f"bad config file {path}: {exc}") from exc
    return cp


def _opt(flag_value, cfg: configparser.ConfigParser, section: str, key: str,
         cast, default):
    """Flag > config > default."""
    if flag_value is not None:
        return flag_value
    if cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            return cast(raw)
        except ValueError as exc:
            raise PanelFormatError(
                f"config [{section}] {key}={raw!r}: {exc}") from exc
    return default


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outputs: list[Path], inputs: list[str | Path],
                    args: argparse.Namespace, argv: list[str]) -> Path:
    manifest = {
        "tool": _PROG,
        "version": __version__,
        "command": list(argv),
        "seed": args.seed,
        "config_sha256": _sha256(args.config) if args.config else None,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = Path(str(outputs[0]) + ".manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _say(msg: str) -> None:
    print(f"{_PROG}: {msg}")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _to_model_space(panel: Panel, lam: float | None) -> Panel:
    """Panel in transformed space; exponent from flag/config or profile
    likelihood when the panel arrives raw."""
    if panel.transform is not None:
        return panel
    spec = None if lam is None else BoxCoxSpec(float(lam), 0.0)
    return transform_panel(panel, spec)


def _panel_inputs(path: str | Path) -> list[Path]:
    p = Path(path)
    return [p, p.with_suffix(p.suffix + ".meta.json")]


def _geometry_for(obs_panel: Panel, nwp_panel: Panel) -> Geometry:
    return Geometry.build(list(obs_panel.stations),
                          list(nwp_panel.stations), obs_panel.h)


def _fit_extras(obs_panel: Panel, nwp_panel: Panel, fit) -> dict[str, str]:
    """Header extras for a written parameter file.

    Key names deliberately avoid the parameter-name prefixes so the
    reader keeps treating them as free-form header fields.
    """
    extras: dict[str, str] = {}
    if obs_panel.transform is not None:
        extras["transform_lambda"] = repr(float(obs_panel.transform.lam))
        extras["transform_shift"] = repr(float(obs_panel.transform.shift))
    if nwp_panel.transform is not None:
        extras["transform_forecast_lambda"] = repr(
            float(nwp_panel.transform.lam))
        extras["transform_forecast_shift"] = repr(
            float(nwp_panel.transform.shift))
    extras["fit_loglik"] = repr(float(fit.loglik))
    extras["fit_status"] = fit.status
    extras["fit_iterations"] = str(fit.n_iter)
    if fit.init_flags:
        extras["fit_init_flags"] = ";".join(fit.init_flags)
    return extras


def _spec_from_meta(meta: dict, prefix: str) -> BoxCoxSpec | None:
    lam = meta.get(f"{prefix}lambda")
    if lam is None:
        return None
    shift = meta.get(f"{prefix}shift", "0.0")
    return BoxCoxSpec(float(lam), float(shift))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args: argparse.Namespace, cfg: configparser.ConfigParser,
                  argv: list[str]) -> int:
    h = _opt(args.hours, cfg, "geometry", "hours", int, 24)
    theta_seed = args.theta_seed if args.theta_seed is not None else args.seed
    geom = make_test_geometry(args.stations, args.grid, h=h, seed=theta_seed)
    theta = random_theta(geom, seed=theta_seed)
    transforms = (BoxCoxSpec(0.5, 0.0), BoxCoxSpec(0.5, 0.0)) \
        if args.raw else (None, None)
    obs, nwp = simulate_panel(theta, geom, args.blocks, seed=args.seed,
                              transforms=transforms)
    outputs: list[Path] = []
    outputs += write_panel(obs, args.out_obs)
    outputs += write_panel(nwp, args.out_nwp)
    if args.theta_out:
        codec = ThetaCodec(geom.land_uses, [p.id for p in geom.nwp_points],
                           [s.id for s in geom.stations])
        outputs.append(write_theta(args.theta_out, theta, codec,
                                   h=geom.h, center=geom.center))
    _write_manifest(outputs, [], args, argv)
    _say(f"simulated {args.blocks} blocks x {h} h: "
         f"{args.stations} stations, {args.grid} grid points "
         f"({'raw' if args.raw else 'model'} space)")
    return 0


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def _cmd_ingest(args: argparse.Namespace, cfg: configparser.ConfigParser,
                argv: list[str]) -> int:
    if not args.speeds and not args.asos:
        raise PanelFormatError("no measurement files given "
                               "(--speeds and/or --asos)")
    h = _opt(args.hours, cfg, "geometry", "hours", int, 24)
    start = None
    if args.start:
        start = datetime.fromisoformat(args.start)
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
    stations = read_station_csv(args.stations)
    nwp_panel = read_nwp_csv(args.nwp, h=h, start=start)
    series: dict = {}
    for path in args.speeds or ():
        series.update(parse_speed_csv(path))
    for path in args.asos or ():
        series.update(parse_asos_minute(path))
    obs_panel = build_obs_panel(series, stations, list(nwp_panel.blocks))

    notes = []
    if args.clusters:
        labels = cluster_stations(obs_panel, args.clusters, seed=args.seed)
        tagged = [StationMeta(s.id, s.lat, s.long, s.land_use,
                              int(labels[j]))
                  for j, s in enumerate(obs_panel.stations)]
        keep = list(range(len(tagged)))
        if args.cluster is not None:
            keep = [j for j in keep if labels[j] == args.cluster]
            if not keep:
                raise PanelFormatError(
                    f"cluster {args.cluster} is empty "
                    f"(labels found: {sorted(set(labels.tolist()))})")
            notes.append(f"kept cluster {args.cluster}: "
                         f"{[tagged[j].id for j in keep]}")
        obs_panel = Panel("obs", [tagged[j] for j in keep],
                          list(obs_panel.blocks),
                          obs_panel.values[:, :, keep],
                          obs_panel.mask[:, :, keep])
    elif args.cluster is not None:
        raise PanelFormatError("--cluster requires --clusters")

    outputs: list[Path] = []
    outputs += write_panel(obs_panel, args.out_obs)
    outputs += write_panel(nwp_panel, args.out_nwp)
    inputs = [args.stations, args.nwp, *(args.speeds or ()),
              *(args.asos or ())]
    _write_manifest(outputs, inputs, args, argv)
    avail = float(obs_panel.mask.mean())
    _say(f"ingested {obs_panel.n_stations} stations x "
         f"{obs_panel.n_blocks} blocks ({avail:.0%} available), "
         f"{nwp_panel.n_stations} grid points")
    for n in notes:
        _say(n)
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _run_one_fit(obs_m: Panel, nwp_m: Panel, structure: ModelStructure,
                 theta0, max_iter: int, tol: float, want_se: bool,
                 out_path: Path, trace_path: Path | None) -> list[Path]:
    geom = _geometry_for(obs_m, nwp_m)
    fit = fit_mle(obs_m, nwp_m, geom, structure, theta0=theta0,
                  max_iter=max_iter, tol_scale=tol)
    se = None
    if want_se:
        se = standard_errors(fit, obs_m, nwp_m, geom).natural_se
    outputs = [write_theta(out_path, fit.theta, fit.codec, h=geom.h,
                           center=geom.center, std_errors=se,
                           extra=_fit_extras(obs_m, nwp_m, fit))]
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loglik", "grad_norm"])
            for it, value, gnorm in fit.trace:
                w.writerow([it, repr(float(value)), repr(float(gnorm))])
        outputs.append(trace_path)
    _say(f"fit[{structure.name}] -> {out_path.name}: "
         f"loglik={fit.loglik:.3f} status={fit.status} "
         f"iterations={fit.n_iter}")
    if fit.init_flags:
        _say("init notes: " + "; ".join(fit.init_flags))
    return outputs


def _cmd_fit(args: argparse.Namespace, cfg: configparser.ConfigParser,
             argv: list[str]) -> int:
    max_iter = _opt(args.max_iter, cfg, "optimizer", "max_iter", int, 300)
    tol = _opt(args.tol, cfg, "optimizer", "tol", float, 1e-4)
    lam_obs = _opt(args.lambda_obs, cfg, "transform", "lambda_obs",
                   float, None)
    lam_nwp = _opt(args.lambda_nwp, cfg, "transform", "lambda_nwp",
                   float, None)
    structure = ModelStructure.by_name(args.structure)
    obs_raw = read_panel(args.obs)
    nwp_raw = read_panel(args.nwp)

    theta0 = None
    if args.theta0:
        theta0, codec0, _ = read_theta(args.theta0)
        want_obs = [s.id for s in obs_raw.stations]
        want_nwp = [s.id for s in nwp_raw.stations]
        if codec0.obs_ids != want_obs or codec0.nwp_ids != want_nwp:
            raise PanelFormatError(
                f"{args.theta0}: station/grid ids do not match the panels")

    out = Path(args.out)
    outputs: list[Path] = []
    if args.cv:
        # rolling3: each contiguous third held out once; one parameter
        # file per rotation, exponent selected on that rotation's
        # training blocks only.
        idx = complete_block_indices(obs_raw, nwp_raw)
        plans = rolling_thirds(idx)
        for i, plan in enumerate(plans):
            train = list(plan.train)
            if obs_raw.transform is None:
                spec = BoxCoxSpec(lam_obs, 0.0) if lam_obs is not None \
                    else None
                sub = subset_blocks(obs_raw, train)
                obs_m = transform_panel(
                    obs_raw, spec if spec is not None else
                    transform_panel(sub).transform)
            else:
                obs_m = obs_raw
            if nwp_raw.transform is None:
                spec = BoxCoxSpec(lam_nwp, 0.0) if lam_nwp is not None \
                    else None
                sub = subset_blocks(nwp_raw, train)
                nwp_m = transform_panel(
                    nwp_raw, spec if spec is not None else
                    transform_panel(sub).transform)
            else:
                nwp_m = nwp_raw
            rot_out = out.with_name(f"{out.stem}_rot{i}{out.suffix}")
            trace = None
            if args.loglik_trace:
                tp = Path(args.loglik_trace)
                trace = tp.with_name(f"{tp.stem}_rot{i}{tp.suffix}")
            outputs += _run_one_fit(subset_blocks(obs_m, train),
                                    subset_blocks(nwp_m, train),
                                    structure, theta0, max_iter, tol,
                                    args.se, rot_out, trace)
    else:
        obs_m = _to_model_space(obs_raw, lam_obs)
        nwp_m = _to_model_space(nwp_raw, lam_nwp)
        trace = Path(args.loglik_trace) if args.loglik_trace else None
        outputs += _run_one_fit(obs_m, nwp_m, structure, theta0,
                                max_iter, tol, args.se, out, trace)

    inputs = _panel_inputs(args.obs) + _panel_inputs(args.nwp)
    if args.theta0:
        inputs.append(Path(args.theta0))
    _write_manifest(outputs, inputs, args, argv)
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def _metas_for_prediction(args, codec) -> tuple[list[StationMeta],
                                                list[StationMeta]]:
    """Fitted-station metadata (codec order) + any never-fitted targets."""
    by_id: dict[str, StationMeta] = {}
    if args.obs:
        for s in read_panel(args.obs).stations:
            by_id[s.id] = s
    extra: list[StationMeta] = []
    if args.stations:
        for s in read_station_csv(args.stations):
            if s.id in codec.obs_ids:
                by_id.setdefault(s.id, s)
            else:
                extra.append(s)
    missing = [sid for sid in codec.obs_ids if sid not in by_id]
    if missing:
        raise PanelFormatError(
            "no coordinates for fitted station(s) "
            f"{missing}: pass --obs or --stations covering them")
    return [by_id[sid] for sid in codec.obs_ids], extra


def _cmd_predict(args: argparse.Namespace, cfg: configparser.ConfigParser,
                 argv: list[str]) -> int:
    n_scen = _opt(args.scenarios, cfg, "scoring", "scenarios", int, 50)
    theta, codec, meta = read_theta(args.theta)
    nwp_panel = read_panel(args.nwp)
    if [s.id for s in nwp_panel.stations] != codec.nwp_ids:
        raise PanelFormatError(
            f"{args.nwp}: grid ids do not match the fitted parameter file")
    if nwp_panel.h != meta["h"]:
        raise PanelFormatError(
            f"{args.nwp}: block length {nwp_panel.h} != fitted {meta['h']}")

    nwp_spec = _spec_from_meta(meta, "transform_forecast_")
    if nwp_panel.transform is None:
        if nwp_spec is None:
            raise PanelFormatError(
                "forecast panel is raw but the parameter file records no "
                "forecast transform")
        nwp_panel = transform_panel(nwp_panel, nwp_spec)
    elif nwp_spec is not None and nwp_panel.transform != nwp_spec:
        raise PanelFormatError(
            "forecast panel transform differs from the one fitted with")

    base, extra = _metas_for_prediction(args, codec)
    geom = Geometry.build(base, list(nwp_panel.stations), nwp_panel.h)
    if not np.allclose(geom.center, meta["center"], rtol=0.0, atol=1e-9):
        raise PanelFormatError(
            "rebuilt geometry center differs from the fitted one — "
            "station/grid files do not match the parameter file")
    if extra:
        theta, geom, flags = extend_for_stations(theta, geom, extra)
        _say("unfitted target stations: " + "; ".join(flags))

    block = args.block
    if block is None:
        complete = complete_block_indices(nwp_panel)
        if not complete:
            raise PanelFormatError("no complete forecast block available")
        block = complete[0]
    pos = nwp_panel.block_position(block)
    if not nwp_panel.mask[pos].all():
        raise PanelFormatError(f"forecast block {block} has gaps")

    dist = conditional_forecast(theta, geom, vectorize(
        nwp_panel.values[pos]), structure=meta["structure"],
        method=args.method)
    scn = sample_scenarios(dist, n_scen, seed=args.seed)
    obs_spec = _spec_from_meta(meta, "transform_")
    if obs_spec is not None:
        scn = scn.to_raw(obs_spec)
    out = Path(args.out)
    outputs = list(write_scenarios(scn, out, block))

    summary = Path(args.summary) if args.summary else \
        out.with_name(out.stem + "_summary" + out.suffix)
    vals = scn.values
    q05, q95 = np.quantile(vals, [0.05, 0.95], axis=0)
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "hour", "station_id", "mean", "sd",
                    "q05", "q95"])
        for t in range(vals.shape[1]):
            for j, sid in enumerate(scn.station_ids):
                w.writerow([block, t, sid,
                            repr(float(vals[:, t, j].mean())),
                            repr(float(vals[:, t, j].std(ddof=1))),
                            repr(float(q05[t, j])),
                            repr(float(q95[t, j]))])
    outputs.append(summary)

    inputs = [Path(args.theta)] + _panel_inputs(args.nwp)
    if args.obs:
        inputs += _panel_inputs(args.obs)
    if args.stations:
        inputs.append(Path(args.stations))
    _write_manifest(outputs, inputs, args, argv)
    space = "raw m/s" if scn.transform is None else "model space"
    _say(f"block {block}: {scn.n} scenarios x {len(scn.station_ids)} "
         f"stations ({space}, {scn.n_clamped} draws clamped)")
    return 0


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def _score_one(scn, obs_block: np.ndarray, es_window: str) -> dict[str,
                                                                   float]:
    n, h, J = scn.values.shape
    flat = scn.values.reshape(n, h * J)
    obs_flat = obs_block.reshape(h * J)
    if es_window == "block":
        energy = energy_score(flat, obs_flat)
    else:
        energy = float(np.mean([
            energy_score(scn.values[:, :, j], obs_block[:, j])
            for j in range(J)]))
    return {
        "rmse": rmse(flat.mean(axis=0), obs_flat),
        "energy": energy,
        "variogram": variogram_score(flat, obs_flat),
    }


def _cmd_score(args: argparse.Namespace, cfg: configparser.ConfigParser,
               argv: list[str]) -> int:
    obs_panel = read_panel(args.obs)
    loaded = []
    for path in args.scenarios:
        scn, day = read_scenarios(path)
        loaded.append((day, scn))
    loaded.sort(key=lambda t: t[0])
    days = [d for d, _ in loaded]
    if len(set(days)) != len(days):
        raise PanelFormatError("duplicate day blocks across scenario files")

    report = ScoreReport(args.label)
    col = {s.id: j for j, s in enumerate(obs_panel.stations)}
    obs_blocks = []
    for day, scn in loaded:
        if scn.transform != obs_panel.transform:
            raise PanelFormatError(
                f"day {day}: scenarios and observations live in different "
                "spaces (transform mismatch)")
        try:
            jj = [col[s] for s in scn.station_ids]
        except KeyError as exc:
            raise PanelFormatError(
                f"day {day}: station {exc} not in the observation panel"
            ) from exc
        pos = obs_panel.block_position(day)
        sub_mask = obs_panel.mask[pos][:, jj]
        if not sub_mask.all():
            raise PanelFormatError(
                f"day {day}: observations incomplete at scored stations")
        obs_block = obs_panel.values[pos][:, jj]
        obs_blocks.append(obs_block)
        report.add_day(day, _score_one(scn, obs_block, args.es_window))

    outputs = [write_score_report(args.out, [report])]

    if args.plot_dir:
        plot_dir = Path(args.plot_dir)
        plot_dir.mkdir(parents=True, exist_ok=True)
        outputs += _write_plot_data(plot_dir, loaded, obs_blocks)

    inputs = list(args.scenarios)
    inputs += [str(Path(p).with_name(Path(p).name + ".meta.json"))
               for p in args.scenarios]
    inputs += [str(p) for p in _panel_inputs(args.obs)]
    _write_manifest(outputs, inputs, args, argv)
    agg = report.aggregates
    _say(f"{args.label}: " + " ".join(
        f"{k}={agg[k]:.4f}" for k in sorted(agg)))
    return 0


def _write_plot_data(plot_dir: Path, loaded, obs_blocks) -> list[Path]:
    """Plot-ready CSVs: rank histogram, spectra, space-time correlation."""
    outputs = []
    m_set = {scn.n for _, scn in loaded}
    if len(m_set) != 1:
        raise PanelFormatError(
            "rank histogram needs one member count across scenario files")

    cases = []
    for (_, scn), obs_block in zip(loaded, obs_blocks):
        h, J = obs_block.shape
        for j in range(J):
            for t in range(h):
                cases.append((scn.values[:, t, j], float(obs_block[t, j])))
    hist = rank_histogram(cases, seed=0)
    path = plot_dir / "rank_hist.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "count", "frequency", "band_low", "band_high"])
        for r in range(hist.counts.size):
            w.writerow([r + 1, int(hist.counts[r]),
                        repr(float(hist.frequencies[r])),
                        repr(float(hist.band_low / hist.n_cases)),
                        repr(float(hist.band_high / hist.n_cases))])
    outputs.append(path)

    # Spectra on day-concatenated hourly series, scenario-averaged.
    n = loaded[0][1].n
    J = obs_blocks[0].shape[1]
    scn_series = np.stack([
        np.concatenate([scn.values[i, :, j] for _, scn in loaded])
        for i in range(n) for j in range(J)])
    freqs, scn_power = average_periodogram(scn_series)
    obs_series = np.stack([
        np.concatenate([b[:, j] for b in obs_blocks]) for j in range(J)])
    _, obs_power = average_periodogram(obs_series)
    path = plot_dir / "spectrum.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency", "power_model", "power_obs"])
        for f, pm, po in zip(freqs, scn_power, obs_power):
            w.writerow([repr(float(f)), repr(float(pm)), repr(float(po))])
    outputs.append(path)

    # Correlation over replicates: scenarios of the first day vs blocks.
    scn0 = loaded[0][1]
    corr_model = empirical_st_correlation(scn0.values)
    path = plot_dir / "correlation.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "model"])
        d = corr_model.shape[0]
        for a in range(d):
            for b in range(d):
                w.writerow([a, b, repr(float(corr_model[a, b]))])
    outputs.append(path)
    return outputs


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _cmd_pipeline(args: argparse.Namespace, cfg: configparser.ConfigParser,
                  argv: list[str]) -> int:
    n_scen = _opt(args.scenarios, cfg, "scoring", "scenarios", int, 50)
    max_iter = _opt(args.max_iter, cfg, "optimizer", "max_iter", int, 150)
    structures = tuple(s.strip() for s in args.structures.split(",")
                       if s.strip())
    for name in structures:
        ModelStructure.by_name(name)
    obs_panel = read_panel(args.obs)
    nwp_panel = read_panel(args.nwp)
    result = run_pipeline(obs_panel, nwp_panel, structures=structures,
                          n_scenarios=n_scen, seed=args.seed,
                          max_iter=max_iter, threads=args.threads)
    order = [*structures, *(k for k in result.reports if k not in
                            structures)]
    reports = [result.reports[k] for k in order]
    outputs = [write_score_report(args.out, reports)]
    _write_manifest(outputs, _panel_inputs(args.obs) +
                    _panel_inputs(args.nwp), args, argv)
    for rep in reports:
        agg = rep.aggregates
        _say(f"{rep.system}: " + " ".join(
            f"{k}={agg[k]:.4f}" for k in sorted(agg)))
    for flag in result.flags:
        _say(f"note: {flag}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_globals(p: argparse.ArgumentParser, top: bool) -> None:
    # On subparsers the same flags default to SUPPRESS so a value given
    # after the subcommand overrides, and one given before survives.
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0),
                   help="master seed for anything stochastic (default 0)")
    p.add_argument("--threads", type=int, default=d(1),
                   help="worker cap for parallel sections (default 1)")
    p.add_argument("--config", default=d(None), metavar="INI",
                   help="INI config file (flags override its values)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=_PROG,
        description="Probabilistic wind-speed forecasting on top of "
                    "numerical weather prediction output.")
    parser.add_argument("--version", action="version",
                        version=f"{_PROG} {__version__}")
    _add_globals(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    def new(name: str, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_, description=help_)
        _add_globals(sp, top=False)
        return sp

    sp = new("simulate", "write synthetic aligned panels (and the "
                         "generating parameters)")
    sp.add_argument("--stations", type=int, default=4)
    sp.add_argument("--grid", type=int, default=6)
    sp.add_argument("--hours", type=int, default=None)
    sp.add_argument("--blocks", type=int, default=30)
    sp.add_argument("--theta-seed", type=int, default=None,
                    help="seed for geometry/parameters (default: --seed)")
    sp.add_argument("--raw", action="store_true",
                    help="back-transform to raw m/s panels")
    sp.add_argument("--out-obs", required=True, metavar="CSV")
    sp.add_argument("--out-nwp", required=True, metavar="CSV")
    sp.add_argument("--theta-out", metavar="TXT")
    sp.set_defaults(func=_cmd_simulate)

    sp = new("ingest", "resample station measurements and a forecast "
                       "extraction into aligned panels")
    sp.add_argument("--stations", required=True, metavar="CSV",
                    help="station list: id,lat,long")
    sp.add_argument("--speeds", action="append", metavar="CSV",
                    help="timestamp,station,speed_kn file (repeatable)")
    sp.add_argument("--asos", action="append", metavar="TXT",
                    help="ASOS-style minute file (repeatable)")
    sp.add_argument("--nwp", required=True, metavar="CSV",
                    help="day,hour,grid_lat,grid_long,land_use,speed_ms")
    sp.add_argument("--hours", type=int, default=None)
    sp.add_argument("--start", metavar="ISO",
                    help="block 1 start time (naive = UTC)")
    sp.add_argument("--clusters", type=int, metavar="K",
                    help="label stations with K clusters")
    sp.add_argument("--cluster", type=int, metavar="I",
                    help="keep only cluster I (requires --clusters)")
    sp.add_argument("--out-obs", required=True, metavar="CSV")
    sp.add_argument("--out-nwp", required=True, metavar="CSV")
    sp.set_defaults(func=_cmd_ingest)

    sp = new("fit", "maximum-likelihood parameter estimation")
    sp.add_argument("--obs", required=True, metavar="CSV")
    sp.add_argument("--nwp", required=True, metavar="CSV")
    sp.add_argument("--structure", default="full",
                    choices=["full", "temporal", "bias"])
    sp.add_argument("--theta0", metavar="TXT",
                    help="start from this parameter file")
    sp.add_argument("--out", required=True, metavar="TXT")
    sp.add_argument("--max-iter", type=int, default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--se", action="store_true",
                    help="report standard errors (adds a Hessian pass)")
    sp.add_argument("--loglik-trace", metavar="CSV",
                    help="write per-iteration likelihood values")
    sp.add_argument("--cv", choices=["rolling3"],
                    help="cross-validate: one fit per rotation, files "
                         "named <out>_rotN")
    sp.add_argument("--lambda-obs", type=float, default=None,
                    help="fix the measurement transform exponent")
    sp.add_argument("--lambda-nwp", type=float, default=None,
                    help="fix the forecast transform exponent")
    sp.set_defaults(func=_cmd_fit)

    sp = new("predict", "scenario generation for one forecast block")
    sp.add_argument("--theta", required=True, metavar="TXT")
    sp.add_argument("--nwp", required=True, metavar="CSV")
    sp.add_argument("--obs", metavar="CSV",
                    help="panel providing fitted-station coordinates")
    sp.add_argument("--stations", metavar="CSV",
                    help="extra target stations (id,lat,long); ids not in "
                         "the fit get averaged covariance parameters")
    sp.add_argument("--block", type=int, default=None,
                    help="day block to predict (default: first complete)")
    sp.add_argument("--scenarios", type=int, default=None)
    sp.add_argument("--method", choices=["direct", "krige"],
                    default="direct")
    sp.add_argument("--out", required=True, metavar="CSV")
    sp.add_argument("--summary", metavar="CSV",
                    help="per-target mean/sd/quantiles (default "
                         "<out>_summary)")
    sp.set_defaults(func=_cmd_predict)

    sp = new("score", "verify scenario files against observations")
    sp.add_argument("--scenarios", action="append", required=True,
                    metavar="CSV", help="scenario file (repeatable)")
    sp.add_argument("--obs", required=True, metavar="CSV")
    sp.add_argument("--label", default="model")
    sp.add_argument("--es-window", choices=["station", "block"],
                    default="station",
                    help="energy score over per-station 24 h windows "
                         "(averaged) or one space-time window")
    sp.add_argument("--out", required=True, metavar="CSV")
    sp.add_argument("--plot-dir", metavar="DIR",
                    help="write rank_hist/spectrum/correlation CSVs")
    sp.set_defaults(func=_cmd_score)

    sp = new("pipeline", "rotated train/test experiment: fit, predict, "
                         "score, one merged report")
    sp.add_argument("--obs", required=True, metavar="CSV")
    sp.add_argument("--nwp", required=True, metavar="CSV")
    sp.add_argument("--structures", default="full",
                    help="comma-separated model structures (default full)")
    sp.add_argument("--scenarios", type=int, default=None)
    sp.add_argument("--max-iter", type=int, default=None)
    sp.add_argument("--out", required=True, metavar="CSV")
    sp.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help/--version;
        # fold the former onto this tool's usage code.
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg, argv)
    except (SingularModelError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"{_PROG}: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (PanelFormatError, FileNotFoundError, KeyError,
            ValueError) as exc:
        print(f"{_PROG}: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
