"""Experiment commands: each reads an :class:`ExperimentConfig` and writes
CSV/JSON files under ``config.output_dir``."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import detequiv, empirical, rfmodel
from .config import ExperimentConfig
from .detequiv import fmt

log = logging.getLogger(__name__)

SIMPLICITY_HEADER = ("axis_value", "c_sigma", "l_sigma")
SIMPLICITY_EMP_HEADER = ("c_emp_mean", "c_emp_std", "l_emp_mean", "l_emp_std", "n_seeds")
LADDER_HEADER = ("p", "mean_gap", "max_gap", "seed")
RF_COMPARE_HEADER = ("activation", "lambda", "lambda_tilde", "c_rf_mean", "c_rf_se", "c_sigma", "n_seeds")


def _out(config: ExperimentConfig) -> Path:
    out = config.resolve(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, (int, str)) else fmt(v) for v in r])
    return Path(path)


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return Path(path)


def cmd_curves(config: ExperimentConfig) -> dict:
    """Deterministic and empirical curves over the lambda grid plus thresholds."""
    out = _out(config)
    model = config.build_model()
    gt = config.build_ground_truth(model.d)
    n, grid = config.n, config.grid()
    noise = gt.sigma2 if config.subtract_noise else 0.0

    points = detequiv.curve(model, gt, n, grid)
    files = {"deterministic": detequiv.write_curve_csv(points, out / "curves_deterministic.csv")}
    meta = detequiv.curve_metadata(model, gt, n, dict(config.lambda_grid, spacing="geometric"))
    meta["subtract_noise"] = config.subtract_noise
    files["metadata"] = detequiv.write_metadata(meta, out / "curves_deterministic.json")

    seeds = config.seed_values()
    if seeds:
        log.info("running %d x %d empirical trials", len(grid), len(seeds))
        trials = empirical.trial_sweep(model, gt, n, grid, seeds)
        files["trials"] = empirical.write_trials_csv(trials, out / "curves_empirical_trials.csv", subtract_noise=noise)
        files["empirical"] = empirical.write_aggregate_csv(
            empirical.aggregate(trials, subtract_noise=noise), out / "curves_empirical.csv"
        )

    if 2 * model.d < n:
        th = detequiv.thresholds(model, gt, n).as_dict()
    else:
        th = {"error": f"thresholds need 2d < n (2d={2 * model.d}, n={n})"}
    files["thresholds"] = _dump(out / "thresholds.json", th)
    return files


def cmd_simplicity_sweep(config: ExperimentConfig) -> dict:
    """C and L at fixed lambda as the synthetic family's ev_max_yy or beta varies."""
    out = _out(config)
    sweep = config.simplicity
    axis, lam = sweep["axis"], float(sweep.get("lambda", 1.0))
    seeds = config.seed_values()
    rows = []
    for value in sweep["values"]:
        model = config.build_model(**{axis: float(value)})
        gt = config.build_ground_truth(model.d)
        point = detequiv.evaluate(model, gt, config.n, lam)
        noise = gt.sigma2 if config.subtract_noise else 0.0
        row = [float(value), point.c_sigma, point.l_sigma - noise]
        if seeds:
            agg = empirical.aggregate(empirical.trial_sweep(model, gt, config.n, [lam], seeds), subtract_noise=noise)[0]
            row += [agg["c_mean"], agg["c_std"], agg["l_mean"], agg["l_std"], agg["n_seeds"]]
        rows.append(row)
    header = SIMPLICITY_HEADER + (SIMPLICITY_EMP_HEADER if seeds else ())
    return {"simplicity": _write_rows(out / f"simplicity_{axis}.csv", header, rows)}


def rf_trial(model, gt, n, p, activation, lam, seed, *, stats, n_test=100, mc_samples=0):
    """One RF replicate: fresh data, first layer and test points from ``seed``."""
    ds = empirical.sample_dataset(model, gt, n, seed)
    config = rfmodel.RFConfig.draw(p, 2 * model.d, rfmodel.derive_seed(seed, p, 1))
    theta = rfmodel.rf_fit(ds, config, activation, lam)
    test = np.random.default_rng(rfmodel.derive_seed(seed, p, 2)).standard_normal((n_test, 2 * model.d)) @ model.sqrt
    max_gap, mean_gap = rfmodel.equivalence_gap(ds, config, activation, lam, test, stats=stats, theta_rf=theta)
    result = {"max_gap": max_gap, "mean_gap": mean_gap}
    if mc_samples:
        c, se = rfmodel.rf_spurious_cov(
            theta, config, activation, model, gt, stats=stats, m=mc_samples, seed=rfmodel.derive_seed(seed, p, 3)
        )
        result.update(c_rf=c, c_rf_mc_se=se)
    return result


def cmd_rf_equiv(config: ExperimentConfig) -> dict:
    """Equivalence-gap ladder in p and RF spurious covariance vs c_sigma(lambda_tilde)."""
    if config.rf is None:
        from .errors import ConfigError

        raise ConfigError("rf-equiv needs an 'rf' section in the config")
    rf = config.rf
    out = _out(config)
    model = config.build_model()
    gt = config.build_ground_truth(model.d)
    n, d = config.n, model.d
    seeds = list(range(int(config.seeds.get("base", 0)), int(config.seeds.get("base", 0)) + int(rf["seeds"])))
    files, reports, compare = {}, [], []
    for name in rf["activations"]:
        act = rfmodel.Activation.from_name(name)
        stats = rfmodel.hermite_stats(act, int(rf["nodes"]))
        ladder = []
        for p in rf["p_ladder"]:
            for s in seeds:
                r = rf_trial(model, gt, n, int(p), act, 0.0, s, stats=stats, n_test=int(rf["n_test"]))
                ladder.append((int(p), r["mean_gap"], r["max_gap"], s))
                reports.append(
                    {
                        "activation": act.name,
                        "d": d,
                        "n": n,
                        "p": int(p),
                        "lambda": 0.0,
                        "lambda_tilde": rfmodel.effective_lambda(stats, d, n, int(p), 0.0),
                        "max_gap": r["max_gap"],
                        "mean_gap": r["mean_gap"],
                        "seed": s,
                    }
                )
        tag = act.name.replace("(", "_").replace(")", "").replace(",", "_")
        files[f"ladder_{tag}"] = _write_rows(out / f"rf_ladder_{tag}.csv", LADDER_HEADER, ladder)

        p = int(rf["p"])
        for lam in rf["lambda_grid"]:
            lam_t = rfmodel.effective_lambda(stats, d, n, p, float(lam))
            cs = [
                rf_trial(model, gt, n, p, act, float(lam), s, stats=stats, n_test=1, mc_samples=int(rf["mc_samples"]))["c_rf"]
                for s in seeds
            ]
            mean = sum(cs) / len(cs)
            se = float(np.std(cs, ddof=1) / math.sqrt(len(cs))) if len(cs) > 1 else 0.0
            compare.append((act.name, float(lam), lam_t, mean, se, detequiv.c_sigma(model, gt, n, lam_t), len(cs)))
    files["compare"] = _write_rows(out / "rf_spurious_compare.csv", RF_COMPARE_HEADER, compare)
    files["reports"] = _dump(out / "rf_equivalence.json", reports)
    return files


def cmd_tau(config: ExperimentConfig, lam: float) -> dict:
    """Single-point query; returned as a JSON-ready dict."""
    model = config.build_model()
    gt = config.build_ground_truth(model.d)
    point = detequiv.evaluate(model, gt, config.n, lam)
    return {
        "lambda": point.lam,
        "tau": point.tau,
        "c_sigma": point.c_sigma,
        "c_sigma_schur": detequiv.c_sigma_schur(model, gt, config.n, lam, tau=point.tau),
        "l_sigma": point.l_sigma,
        "bounds": list(point.bounds),
        "n": config.n,
        "d": model.d,
    }
