"""Command-line experiment harness: simulate | fit | benchmark | report.

Every command is driven by one JSON configuration document; outputs are
deterministic functions of (config, seed) so repeated invocations produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os

import numpy as np

from . import datagen
from .config import ExperimentConfig, write_schema
from .engine import MMState, StepSchedule, run_stream, stationarity_residual
from .evaluation import (
    empirical_nll,
    estimation_error,
    polyak_path,
    prediction_error,
)
from .gaussian import GaussianDims, GaussianFamily, GaussianObjective, GaussianParams
from .initialization import kmeans_init, perturbed_truth_init, warmup_s0
from .logistic import LogisticDims, LogisticFamily, LogisticParams
from .optimizers import default_config, run_baseline


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def _truth(cfg):
    if cfg.data_source == "lowdim":
        return datagen.lowdim_truth()
    if cfg.data_source == "highdim":
        return datagen.highdim_truth(
            cfg.n_experts,
            cfg.mean_degree,
            cfg.gating_degree,
            cfg.n_covariates,
            cfg.n_targets,
            cfg.truth_seed,
        )
    if cfg.data_source == "logistic_demo":
        return datagen.logistic_demo_truth()
    return None


def _dataset(cfg, seed):
    """Returns (X, Y, labels, truth); Y is integer classes for logistic data."""
    truth = _truth(cfg)
    if cfg.data_source == "csv":
        X, Y, labels = datagen.read_dataset_csv(cfg.csv_path)
        if cfg.model == "logistic" and not np.issubdtype(Y.dtype, np.integer):
            raise ValueError("logistic model needs a y_class column in the CSV")
        return X, Y, labels, None
    if cfg.model == "logistic":
        X, Y, labels = datagen.sample_logistic(truth, cfg.n_samples, seed, cfg.covariate_law)
    else:
        X, Y, labels = datagen.sample_gaussian(truth, cfg.n_samples, seed, cfg.covariate_law)
    return X, Y, labels, truth


def _split(cfg, seed, X, Y):
    rng = np.random.default_rng(seed + 1_000_003)
    order = rng.permutation(len(X))
    n_train = int(round(cfg.split_fraction * len(X)))
    tr, te = order[:n_train], order[n_train:]
    return X[tr], Y[tr], X[te], Y[te]


def _gaussian_dims(cfg, X, Y):
    return GaussianDims(
        cfg.n_experts, X.shape[1], np.asarray(Y).reshape(len(X), -1).shape[1],
        cfg.gating_degree, cfg.mean_degree,
    )


def _logistic_dims(cfg, X, Y):
    n_classes = max(cfg.n_classes, int(np.max(Y)))
    return LogisticDims(cfg.n_experts, X.shape[1], n_classes, cfg.gating_degree, cfg.mean_degree)


def _perturb_logistic(truth, scale, seed):
    rng = np.random.default_rng(seed)
    return LogisticParams(
        truth.dims,
        truth.omega + scale * rng.standard_normal(truth.omega.shape),
        truth.upsilon + scale * rng.standard_normal(truth.upsilon.shape),
    )


def _init_theta(cfg, seed, dims, truth, X_train, Y_train):
    if cfg.model == "logistic":
        if cfg.init == "zero":
            return LogisticParams(
                dims, np.zeros(dims.gating_len), np.zeros((dims.n_experts, dims.per_expert_len))
            )
        if cfg.init == "jitter":
            rng = np.random.default_rng(seed)
            return LogisticParams(
                dims,
                np.zeros(dims.gating_len),
                cfg.init_jitter * rng.standard_normal((dims.n_experts, dims.per_expert_len)),
            )
        if cfg.init == "perturbed":
            if truth is None:
                raise ValueError("perturbed init needs a generator truth")
            return _perturb_logistic(truth, cfg.noise_scale, seed)
        raise ValueError(f"init {cfg.init!r} not available for logistic")
    if cfg.init == "perturbed":
        if truth is None:
            raise ValueError("perturbed init needs a generator truth")
        return perturbed_truth_init(truth, cfg.noise_scale, seed)
    if cfg.init in ("kmeans", "warm_start"):
        return kmeans_init(
            X_train,
            Y_train,
            dims,
            restarts=cfg.kmeans_restarts,
            seed=seed,
            warm_start_gating=cfg.init == "warm_start",
        )
    if cfg.init == "zero":
        return GaussianParams(
            dims,
            np.zeros(dims.gating_len),
            np.zeros((dims.n_experts, dims.n_targets, dims.mean_feature_len)),
            np.ones((dims.n_experts, dims.n_targets)),
        )
    raise ValueError(f"unknown init {cfg.init!r}")


def _family(cfg, dims):
    if cfg.model == "logistic":
        return LogisticFamily(dims, cfg.epsilon_star)
    return GaussianFamily(dims, cfg.epsilon_star)


def _rows(Y):
    Y = np.asarray(Y)
    return list(Y) if Y.ndim > 1 else list(Y.reshape(-1))


def _mm_run(cfg, family, theta0, X_train, Y_train):
    y_rows = _rows(Y_train)
    w = min(cfg.warmup, len(X_train))
    s0 = warmup_s0(family, theta0, list(zip(X_train[:w], y_rows[:w])))
    start = 0 if cfg.replay_warmup else w
    stop = start + cfg.iterations
    stream = list(zip(X_train[start:stop], y_rows[start:stop]))
    schedule = StepSchedule(cfg.gamma0, cfg.alpha)
    # The warm-up average already aggregates w samples, so the step counter
    # resumes at w; restarting it at zero would let the first stream sample
    # overwrite most of the statistic.
    return run_stream(MMState(s=s0, theta=theta0, iteration=w), stream, schedule, family)


def _final_params(cfg, family, report, theta0):
    if report.iterations == 0:
        return theta0, theta0
    raw = report.final_state.theta
    averaged = polyak_path(report.theta_trace, cfg.polyak_start)
    if report.iterations >= cfg.polyak_start:
        return raw, family.vector_to_theta(averaged[-1])
    return raw, raw


def _eval_points(cfg, seed, n_covariates):
    rng = np.random.default_rng(seed * 1_000_003 + 89)
    if cfg.covariate_law == "normal":
        return rng.standard_normal((cfg.eval_points, n_covariates))
    return rng.uniform(-1.0, 1.0, size=(cfg.eval_points, n_covariates))


def _clean(values):
    """NaN -> None so reports stay valid strict JSON."""
    return [None if (isinstance(v, float) and math.isnan(v)) else v for v in values]


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg):
    """Write seeded dataset CSVs plus truth sidecars; returns file paths."""
    if cfg.data_source == "csv":
        raise ValueError("simulate needs a generator data_source")
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_schema(os.path.join(cfg.out_dir, "config_schema.json"))
    paths = []
    for seed in cfg.seeds:
        X, Y, labels, truth = _dataset(cfg, seed)
        data_path = os.path.join(cfg.out_dir, f"dataset_seed{seed}.csv")
        datagen.write_dataset_csv(
            data_path, X, Y, labels=labels, discrete=cfg.model == "logistic"
        )
        sidecar = {
            "config_hash": cfg.content_hash(),
            "seed": seed,
            "data_source": cfg.data_source,
            "true_params": truth.to_json_dict(),
        }
        truth_path = os.path.join(cfg.out_dir, f"truth_seed{seed}.json")
        _write_json(truth_path, sidecar)
        paths.extend([data_path, truth_path])
    return paths


def _nll_curves(cfg, family, report, X_train, Y_train):
    raw, avg = [], []
    averaged = polyak_path(report.theta_trace, cfg.polyak_start)
    for i in range(report.iterations):
        theta = family.vector_to_theta(report.theta_trace[i])
        raw.append(empirical_nll(family, theta, X_train, Y_train))
        if np.all(np.isfinite(averaged[i])):
            avg.append(
                empirical_nll(family, family.vector_to_theta(averaged[i]), X_train, Y_train)
            )
        else:
            avg.append(float("nan"))
    return raw, avg


def _report_metrics(cfg, seed, family, params, truth, X_test, Y_test):
    if cfg.model == "logistic":
        from .logistic import predictive_probs_batch

        proba = predictive_probs_batch(params, X_test)
        acc = float(np.mean(np.argmax(proba, axis=1) + 1 == np.asarray(Y_test)))
        return {"nll": empirical_nll(family, params, X_test, Y_test), "accuracy": acc}
    out = {"prediction": prediction_error(params, X_test, Y_test)}
    if truth is not None:
        out["estimation"] = estimation_error(
            params, truth, _eval_points(cfg, seed, X_test.shape[1])
        )
    return out


def cmd_fit(cfg):
    """Run the streaming estimator per seed and write full fit reports."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_schema(os.path.join(cfg.out_dir, "config_schema.json"))
    paths = []
    for seed in cfg.seeds:
        X, Y, labels, truth = _dataset(cfg, seed)
        X_train, Y_train, X_test, Y_test = _split(cfg, seed, X, Y)
        dims = (
            _logistic_dims(cfg, X, Y)
            if cfg.model == "logistic"
            else _gaussian_dims(cfg, X, Y)
        )
        family = _family(cfg, dims)
        theta0 = _init_theta(cfg, seed, dims, truth, X_train, Y_train)
        report = _mm_run(cfg, family, theta0, X_train, Y_train)
        raw_params, polyak_params = _final_params(cfg, family, report, theta0)
        nll_raw, nll_avg = _nll_curves(cfg, family, report, X_train, Y_train)

        residual = stationarity_residual(
            report.final_state, list(zip(X_test, _rows(Y_test))), family
        )
        stride = max(1, cfg.snapshot_stride)
        kept = list(range(0, report.iterations, stride))
        payload = {
            "config": cfg.to_dict(),
            "config_hash": cfg.content_hash(),
            "seed": seed,
            "method": "mm",
            "iterations": report.iterations,
            "initial_params": theta0.to_json_dict(),
            "final_params": raw_params.to_json_dict(),
            "polyak_params": polyak_params.to_json_dict(),
            "nll": _clean(nll_raw),
            "nll_polyak": _clean(nll_avg),
            "online_loss": _clean(report.online_loss.tolist()),
            "theta_iterations": [i + 1 for i in kept],
            "theta_path": [report.theta_trace[i].tolist() for i in kept],
            "stationarity_residual": residual,
            "metrics": {
                "train": _report_metrics(cfg, seed, family, polyak_params, truth, X_train, Y_train),
                "test": _report_metrics(cfg, seed, family, polyak_params, truth, X_test, Y_test),
            },
        }
        if truth is not None:
            payload["nll_ref"] = empirical_nll(family, truth, X_train, Y_train)
            payload["true_params"] = truth.to_json_dict()
        path = os.path.join(cfg.out_dir, f"fit_{cfg.model}_seed{seed}.json")
        _write_json(path, payload)
        paths.append(path)
    return paths


def _run_method(cfg, method, family, dims, theta0, X_train, Y_train):
    if method == "mm":
        return _mm_run(cfg, family, theta0, X_train, Y_train)
    objective = GaussianObjective(dims)
    lr = cfg.learning_rates.get(method)
    opt_cfg = default_config(method, learning_rate=lr)
    stream = list(zip(X_train[: cfg.iterations + cfg.warmup], _rows(Y_train)[: cfg.iterations + cfg.warmup]))
    return run_baseline(objective, theta0, stream, opt_cfg)


def cmd_benchmark(cfg):
    """Run MM against the baselines on identical seeds and splits."""
    if cfg.model != "gaussian":
        raise ValueError("benchmark compares regression metrics; use model=gaussian")
    if len(cfg.optimizers) < 2:
        raise ValueError("benchmark needs at least two optimizers")
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_schema(os.path.join(cfg.out_dir, "config_schema.json"))
    rows = []
    for seed in cfg.seeds:
        X, Y, labels, truth = _dataset(cfg, seed)
        X_train, Y_train, X_test, Y_test = _split(cfg, seed, X, Y)
        dims = _gaussian_dims(cfg, X, Y)
        family = _family(cfg, dims)
        theta0 = _init_theta(cfg, seed, dims, truth, X_train, Y_train)
        X_eval = _eval_points(cfg, seed, X.shape[1])
        for method in cfg.optimizers:
            report = _run_method(cfg, method, family, dims, theta0, X_train, Y_train)
            _, params = _final_params(cfg, family, report, theta0)
            entry = {"seed": seed, "method": method}
            entry["prediction"] = prediction_error(params, X_test, Y_test)
            if truth is not None:
                entry["estimation"] = estimation_error(params, truth, X_eval)
            rows.append(entry)

    aggregates = []
    protocols = [p for p in ("estimation", "prediction") if any(p in r for r in rows)]
    for method in cfg.optimizers:
        for protocol in protocols:
            values = {
                m: [r[protocol][m] for r in rows if r["method"] == method and protocol in r]
                for m in ("mse", "mape", "nrmse")
            }
            aggregates.append(
                {
                    "method": method,
                    "protocol": protocol,
                    "mean": {m: float(np.mean(v)) for m, v in values.items()},
                    "std": {m: float(np.std(v)) for m, v in values.items()},
                }
            )

    payload = {
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "per_seed": rows,
        "aggregate": aggregates,
    }
    json_path = os.path.join(cfg.out_dir, "benchmark.json")
    _write_json(json_path, payload)

    csv_rows = []
    for r in rows:
        for protocol in protocols:
            if protocol in r:
                m = r[protocol]
                csv_rows.append(
                    [r["method"], protocol, r["seed"], m["mse"], m["mape"], m["nrmse"]]
                )
    for agg in aggregates:
        csv_rows.append(
            [agg["method"], agg["protocol"], "mean"]
            + [agg["mean"][m] for m in ("mse", "mape", "nrmse")]
        )
        csv_rows.append(
            [agg["method"], agg["protocol"], "std"]
            + [agg["std"][m] for m in ("mse", "mape", "nrmse")]
        )
    csv_path = os.path.join(cfg.out_dir, "benchmark.csv")
    _write_csv(csv_path, ["method", "protocol", "seed", "mse", "mape", "nrmse"], csv_rows)
    return [json_path, csv_path]


def _flatten_metrics(run_id, metrics_dict, rows, split):
    for key, value in metrics_dict.items():
        if isinstance(value, dict):
            for m, v in value.items():
                rows.append([run_id, split, f"{key}_{m}", v])
        else:
            rows.append([run_id, split, key, value])


def cmd_report(run_files, out_dir):
    """Convert fit reports into long-format plot-ready CSV bundles."""
    os.makedirs(out_dir, exist_ok=True)
    nll_rows, param_rows, metric_rows, gap_rows = [], [], [], []
    for path in run_files:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path) as fh:
            payload = json.load(fh)
        run_id = os.path.splitext(os.path.basename(path))[0]
        nll = payload.get("nll", [])
        nll_avg = payload.get("nll_polyak", [])
        for i, (a, b) in enumerate(zip(nll, nll_avg)):
            nll_rows.append([run_id, i + 1, a, "" if b is None else b])
        ref = payload.get("nll_ref")
        best = ref if ref is not None else min((v for v in nll if v is not None), default=None)
        if best is not None:
            for i, v in enumerate(nll):
                if v is not None:
                    gap_rows.append([run_id, i + 1, abs(v - best)])
        names = _parameter_names(payload.get("final_params"))
        for it, vector in zip(payload.get("theta_iterations", []), payload.get("theta_path", [])):
            for name, value in zip(names, vector):
                param_rows.append([run_id, it, name, value])
        for split, md in payload.get("metrics", {}).items():
            _flatten_metrics(run_id, md, metric_rows, split)

    out = []
    for fname, header, rows in [
        ("nll_curves.csv", ["run", "iteration", "nll", "nll_polyak"], nll_rows),
        ("parameter_curves.csv", ["run", "iteration", "parameter", "value"], param_rows),
        ("metrics.csv", ["run", "split", "metric", "value"], metric_rows),
        ("nll_distance.csv", ["run", "iteration", "nll_gap"], gap_rows),
    ]:
        path = os.path.join(out_dir, fname)
        _write_csv(path, header, rows)
        out.append(path)
    return out


def _parameter_names(params_dict):
    if params_dict is None:
        return []
    dims = params_dict["dims"]
    names = [f"omega_{i}" for i in range(len(params_dict["omega"]))]
    upsilon = np.asarray(params_dict["upsilon"], dtype=float)
    if upsilon.ndim == 3:
        k_n, q_n, l_n = upsilon.shape
        names += [
            f"upsilon_{k}_{q}_{j}"
            for k in range(k_n)
            for q in range(q_n)
            for j in range(l_n)
        ]
        sigma2 = np.asarray(params_dict["sigma2"], dtype=float)
        names += [
            f"sigma2_{k}_{q}" for k in range(sigma2.shape[0]) for q in range(sigma2.shape[1])
        ]
    else:
        k_n, l_n = upsilon.shape
        names += [f"upsilon_{k}_{j}" for k in range(k_n) for j in range(l_n)]
    return names


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _load_config(args):
    cfg = ExperimentConfig.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    return cfg.validate()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="moestream",
        description="Streaming mixture-of-experts experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "benchmark"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration path")
        p.add_argument("--seed", type=int, default=None, help="override the seed list")
        p.add_argument("--out", default=None, help="override the output directory")
    p = sub.add_parser("report")
    p.add_argument("runs", nargs="+", help="fit report JSON files")
    p.add_argument("--out", default=".", help="output directory for CSV bundles")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        paths = cmd_simulate(_load_config(args))
    elif args.command == "fit":
        paths = cmd_fit(_load_config(args))
    elif args.command == "benchmark":
        paths = cmd_benchmark(_load_config(args))
    elif args.command == "report":
        paths = cmd_report(args.runs, args.out)
    else:  # pragma: no cover
        raise SystemExit(2)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
