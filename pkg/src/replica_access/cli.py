"""Command-line front end: ``replica-access predict|sweep|simulate|compare``.

Exit codes: 0 success, 2 config/usage error, 3 data-contract error, 4 numerical failure.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, DataContractError, NumericalError
from .metrics import (correlated_detection, correlated_llr_midpoint, isotropic_detection,
                      isotropic_llr_midpoint, roc, write_roc_csv)
from .replica.stationary import phase_diagram
from .sim import ExperimentPlan, map_threshold, predict, run_experiment, stationary_reports

EXIT_CONFIG, EXIT_CONTRACT, EXIT_NUMERICAL = 2, 3, 4
LONG_HEADER = ["axis", "value", "metric", "mean", "stderr", "n", "config_hash"]
DEFAULT_TOLERANCES = {"nmse_db": 1.0, "p_md": 0.05, "p_fa": 0.05}


def _fail(code, msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map package exceptions to exit codes."""
    def wrapper(*args, **kw):
        try:
            return fn(*args, **kw)
        except DataContractError as exc:
            _fail(EXIT_CONTRACT, exc)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, exc)
        except NumericalError as exc:
            _fail(EXIT_NUMERICAL, exc)
        except ValueError as exc:
            _fail(EXIT_CONFIG, exc)
    wrapper.__name__, wrapper.__doc__ = fn.__name__, fn.__doc__
    return wrapper


def parse_range(text):
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        raise ConfigError("empty range")
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise ConfigError(f"range {text!r}: expected start:stop:step")
            start, stop, step = parts
            if step <= 0:
                raise ConfigError(f"range {text!r}: step must be positive")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + i * step, 12) for i in range(max(n, 0))]
        else:
            values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"range {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"range {text!r} is empty")
    return values


def _out_dir(cfg: RunConfig, out):
    d = Path(out or cfg.output.directory)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load(path) -> RunConfig:
    return load_config(path)


@click.group()
@click.version_option(__version__)
def main():
    """Replica predictions and AMP simulations for grant-free access with grouped users."""


# -- predict ----------------------------------------------------------------------------------

def _roc_thresholds(mid, n):
    spread = 2 * max(abs(mid), 5.0)
    return np.linspace(mid - spread, mid + spread, n)


@main.command("predict")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_guard
def cmd_predict(config_path, out):
    """Stationary points, predicted NMSE and ROC curves for every alpha in the config."""
    cfg = _load(config_path)
    tag = cfg.digest()
    out = _out_dir(cfg, out)
    rows, reports = [], []
    for alpha in cfg.scenario.alpha:
        sys_cfg = cfg.scenario_obj(alpha).build()
        mc = cfg.monte_carlo()
        reps = stationary_reports(sys_cfg, cfg.solver.nodes, mc)
        pred = predict(sys_cfg, cfg.solver.threshold, cfg.solver.nodes, mc, reports=reps)
        gap = {True: 1, False: 0, None: ""}[pred.gap]
        for metric, value in (("nmse_db", pred.amp_nmse_db), ("mmse_db", pred.mmse_nmse_db),
                              ("p_md", pred.p_md), ("p_fa", pred.p_fa), ("ce_nmse", pred.ce_nmse),
                              ("n_maxima", pred.n_maxima), ("gap", gap)):
            rows.append(["alpha", alpha, metric, value, "", "", tag])
        reports.append({"alpha": alpha, "config": sys_cfg.describe(), "prediction": asdict(pred),
                        "groups": [_report_json(r) for r in reps]})
        for g in range(sys_cfg.n_groups):
            rep = reps[0] if sys_cfg.is_isotropic else reps[g]
            state = rep.amp.state
            if sys_cfg.activity_prob <= 0 or sys_cfg.activity_prob >= 1:
                continue
            if sys_cfg.is_isotropic:
                mid = isotropic_llr_midpoint(state, g, sys_cfg)
                det = lambda t, g=g: isotropic_detection(state, g, sys_cfg, t)
            else:
                mid = correlated_llr_midpoint(state, g, sys_cfg)
                det = lambda t, g=g: correlated_detection(state, g, sys_cfg, t)
            pts = roc(det, _roc_thresholds(mid, cfg.solver.roc_points))
            write_roc_csv(out / f"roc-{tag}-alpha{alpha:g}-g{g}.csv", pts,
                          {"alpha": alpha, "group": g, "config_hash": tag, "threshold_units": "llr"})
    _write_long(out / f"prediction-{tag}.csv", rows)
    (out / f"stationary-{tag}.json").write_text(json.dumps(
        {"config_hash": tag, "version": __version__, "config": cfg.model_dump(), "alphas": reports},
        indent=2, default=_json_default))
    for r in reports:
        p = r["prediction"]
        click.echo(f"alpha={r['alpha']:g}  maxima={p['n_maxima']}  gap={p['gap']}  "
                   f"amp_nmse={p['amp_nmse_db']:.2f} dB  mmse={p['mmse_nmse_db']:.2f} dB  "
                   f"p_md={p['p_md']:.3g}  p_fa={p['p_fa']:.3g}")
    click.echo(f"wrote {out / f'prediction-{tag}.csv'}")


def _report_json(rep):
    return {"n_maxima": rep.n_maxima, "gap": rep.gap, "amp_point": rep.amp_point,
            "mmse_point": rep.mmse_point, "unachievable": rep.unachievable,
            "points": [{"state": np.asarray(p.state).tolist(), "free_entropy": p.value,
                        "stderr": p.stderr, "mse": p.mse, "nmse_db": p.nmse_db} for p in rep.points]}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def _write_long(path, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LONG_HEADER)
        w.writerows(rows)
    return path


# -- sweep ------------------------------------------------------------------------------------

@main.command("sweep")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--axis", type=click.Choice(["alpha", "pt_dbm", "power_dbm", "n_antennas", "antennas"]),
              default="alpha", show_default=True)
@click.option("--range", "range_", required=True, help="start:stop:step or v1,v2,...")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_guard
def cmd_sweep(config_path, axis, range_, out):
    """Phase diagram over alpha, or over alpha times a second axis."""
    cfg = _load(config_path)
    values = parse_range(range_)
    scen = cfg.scenario_obj()
    kw = dict(nodes=cfg.solver.nodes, mc=cfg.monte_carlo(), n_grid=cfg.solver.n_grid)
    if axis == "alpha":
        diagram = phase_diagram(scen, values, **kw)
    else:
        if axis in ("n_antennas", "antennas") and any(v != int(v) or v < 1 for v in values):
            raise ConfigError("antenna counts must be positive integers")
        diagram = phase_diagram(scen, cfg.scenario.alpha, axis2=axis, values2=values, **kw)
    tag = cfg.digest()
    path = diagram.write(_out_dir(cfg, out) / f"phase-{tag}.csv",
                         {"config_hash": tag, "axis": axis, "range": range_, "version": __version__})
    n_fail = sum(bool(c.error) for c in diagram.cells)
    for v2 in dict.fromkeys(c.axis2 for c in diagram.cells):
        gaps = [c.alpha for c in diagram.cells if c.axis2 == v2 and c.gap]
        label = "" if v2 is None else f"{axis}={v2:g}  "
        click.echo(f"{label}gap cells: {gaps if gaps else 'none'}  "
                   f"transitions: {[(a, b) for a, b, _ in diagram.transitions(axis2=v2)]}")
    click.echo(f"wrote {path} ({len(diagram.cells)} cells, {n_fail} failed)")
    if n_fail == len(diagram.cells):
        raise NumericalError("every cell of the sweep failed")


# -- simulate ---------------------------------------------------------------------------------

@main.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--trials", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--no-predict", is_flag=True, help="skip the replica predictions")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@_guard
def cmd_simulate(config_path, trials, seed, threads, no_predict, out):
    """AMP Monte Carlo along the configured sweep; partial results are flushed per sweep value."""
    cfg = _load(config_path)
    sim = cfg.simulate
    values = sim.sweep_values
    if values is None:
        if sim.sweep_axis != "alpha":
            raise ConfigError(f"simulate.sweep_values is required for sweep_axis={sim.sweep_axis}")
        values = cfg.scenario.alpha
    plan = ExperimentPlan(cfg.scenario_obj(), sim.sweep_axis, tuple(sorted(values)),
                          n_trials=trials or sim.trials, seed=sim.seed if seed is None else seed,
                          amp=cfg.amp_config(), threshold=cfg.solver.threshold, predict=not no_predict,
                          nodes=cfg.solver.nodes, mc=cfg.monte_carlo(), workers=threads)
    out = _out_dir(cfg, out)
    done = []

    def flush(partial):
        partial.metadata["run_config_hash"] = cfg.digest()
        done[:] = [partial.write(out)]
        p = partial.points[-1]
        msg = f"{plan.sweep_axis}={p.value:g}  nmse={10 * np.log10(p.mean['nmse']):.2f} dB" \
            if p.mean["nmse"] > 0 else f"{plan.sweep_axis}={p.value:g}  nmse=0"
        if p.prediction is not None:
            msg += f"  predicted={p.prediction.amp_nmse_db:.2f} dB"
        click.echo(msg + f"  ok={p.n_ok}/{plan.n_trials}")

    try:
        result = run_experiment(plan, on_point=flush)
    except KeyboardInterrupt:
        click.echo(f"interrupted; partial results in {done[0] if done else 'nothing written'}", err=True)
        sys.exit(130)
    if all(p.failed for p in result.points):
        raise NumericalError("AMP diverged in most trials at every sweep value")
    click.echo(f"wrote {done[0]}")


# -- compare ----------------------------------------------------------------------------------

def read_long(path):
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise DataContractError(f"{path}: {exc.strerror}") from exc
    if not rows or not {"axis", "value", "metric", "mean"} <= set(rows[0]):
        raise DataContractError(f"{path}: not a long-format result file")
    table = {}
    for r in rows:
        try:
            mean = float(r["mean"]) if r["mean"] not in ("", None) else float("nan")
            table[(r["axis"], round(float(r["value"]), 9), r["metric"])] = mean
        except ValueError as exc:
            raise DataContractError(f"{path}: bad row {r}") from exc
    return table


def compare_tables(a, b, tolerances=None):
    """Join on (axis, value, metric); returns the joined rows and a per-metric summary."""
    tolerances = DEFAULT_TOLERANCES if tolerances is None else tolerances
    axes_a, axes_b = {k[0] for k in a}, {k[0] for k in b}
    if axes_a != axes_b:
        raise DataContractError(f"sweep axes differ: {sorted(axes_a)} vs {sorted(axes_b)}")
    vals_a, vals_b = {k[:2] for k in a}, {k[:2] for k in b}
    if vals_a != vals_b:
        raise DataContractError(f"sweep grids differ: {sorted(v for _, v in vals_a ^ vals_b)} "
                                "appear in only one file")
    joined, summary = [], {}
    for key in sorted(set(a) & set(b)):
        x, y = a[key], b[key]
        d = y - x if np.isfinite(x) and np.isfinite(y) else float("nan")
        joined.append([*key, x, y, d])
        m = key[2]
        s = summary.setdefault(m, {"max_abs_delta": 0.0, "n": 0, "tolerance": tolerances.get(m)})
        if np.isfinite(d):
            s["max_abs_delta"] = max(s["max_abs_delta"], abs(d))
            s["n"] += 1
    for s in summary.values():
        s["pass"] = None if s["tolerance"] is None or s["n"] == 0 else bool(s["max_abs_delta"] <= s["tolerance"])
    if not joined:
        raise DataContractError("the two files share no metrics")
    return joined, summary


def _tolerance(ctx, param, values):
    tol = dict(DEFAULT_TOLERANCES)
    for item in values:
        name, sep, val = item.partition("=")
        try:
            tol[name.strip()] = float(val)
        except ValueError:
            raise click.BadParameter(f"expected metric=value, got {item!r}")
        if not sep:
            raise click.BadParameter(f"expected metric=value, got {item!r}")
    return tol


@main.command("compare")
@click.argument("predict_csv", type=click.Path(dir_okay=False))
@click.argument("simulate_csv", type=click.Path(dir_okay=False))
@click.option("--tol", multiple=True, callback=_tolerance, help="metric=value, repeatable")
@click.option("--strict", is_flag=True, help="exit 1 when a metric exceeds its tolerance")
@click.option("--out", type=click.Path(file_okay=False), default=".")
@_guard
def cmd_compare(predict_csv, simulate_csv, tol, strict, out):
    """Join two long-format result files and report max |delta| per metric."""
    a, b = read_long(predict_csv), read_long(simulate_csv)
    joined, summary = compare_tables(a, b, tol)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"compare-{Path(predict_csv).stem}-vs-{Path(simulate_csv).stem}"
    with (out / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "metric", "a", "b", "delta"])
        w.writerows(joined)
    (out / f"{stem}.json").write_text(json.dumps(
        {"a": str(predict_csv), "b": str(simulate_csv), "metrics": summary}, indent=2))
    for m, s in sorted(summary.items()):
        verdict = {True: "pass", False: "FAIL", None: "-"}[s["pass"]]
        tol_txt = "" if s["tolerance"] is None else f" (tol {s['tolerance']:g})"
        click.echo(f"{m:>18}: max|delta| = {s['max_abs_delta']:.4g}{tol_txt}  {verdict}")
    if strict and any(s["pass"] is False for s in summary.values()):
        sys.exit(1)


if __name__ == "__main__":
    main()
