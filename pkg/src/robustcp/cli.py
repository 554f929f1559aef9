"""Batch command-line interface.

Commands: ``fit`` (nuisance artifact from a record CSV), ``predict``
(thresholds and prediction sets for test covariates), ``simulate`` (Monte
Carlo coverage experiments), ``check`` (theorem-level identity checks), and
``ingest-validate`` (schema validation only).

Exit codes: 0 ok, 2 input/schema, 3 data insufficiency, 4 regime mismatch,
5 internal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_DATA = 3
EXIT_REGIME = 4
EXIT_INTERNAL = 5


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustcp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "predict", "simulate", "check", "ingest-validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="thread cap for numeric kernels")
    return parser


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(int(n))


def _exit_code_for(exc) -> int:
    from .errors import (
        ConfigError,
        DegenerateSplit,
        EmptyCalibration,
        EmptyInput,
        InsufficientData,
        InvalidPmf,
        OutOfSupport,
        RegimeMismatch,
        SchemaError,
    )

    if isinstance(exc, (SchemaError, ConfigError, InvalidPmf, OutOfSupport)):
        return EXIT_SCHEMA
    if isinstance(exc, (InsufficientData, EmptyInput, EmptyCalibration, DegenerateSplit)):
        return EXIT_DATA
    if isinstance(exc, RegimeMismatch):
        return EXIT_REGIME
    return EXIT_INTERNAL


FIT_KEYS = (
    "data_csv", "sidecar", "regime", "alpha", "score", "learner",
    "n_knots", "n_neighbors", "support", "artifact_name", "seed",
)


def cmd_fit(cfg: dict, out_dir: str) -> int:
    import numpy as np

    from . import io
    from .calibrate import apply_score
    from .errors import ConfigError, RegimeMismatch
    from .nuisance import default_grid, fit_covshift_nuisances, fit_sequential_regressions
    from .scores import fit_score_model

    side = io.load_sidecar(cfg["sidecar"])
    records, table = io.read_records(cfg["data_csv"], side)
    regime_kind = cfg["regime"]
    D = int(side["D"])
    if regime_kind == "covariate_shift":
        if D != 0:
            raise RegimeMismatch("covariate shift requires a sidecar with D=0")
    elif regime_kind == "monotone":
        if not table.is_monotone():
            raise RegimeMismatch("declared pattern table is not monotone")
    elif regime_kind == "nonmonotone":
        raise ConfigError(
            "non-monotone nuisance fitting needs a declared discrete support; "
            "use the library API directly"
        )
    else:
        raise ConfigError(f"unknown regime {regime_kind!r}")
    alpha = float(cfg.get("alpha", 0.1))
    score_kind = cfg.get("score", "absolute_residual")
    complete = [r for r in records if r.level.is_full]
    if not complete:
        from .errors import InsufficientData

        raise InsufficientData("no complete cases to fit the score model")
    X = np.vstack([r.x for r in complete])
    y = np.array([r.y for r in complete], dtype=float)
    support = cfg.get("support")
    n_neighbors = cfg.get("n_neighbors")
    score_model = fit_score_model(
        score_kind, X, y, alpha=alpha, learner=cfg.get("learner", "knn"),
        support=support, n_neighbors=n_neighbors,
    )
    scored = apply_score(records, score_model)
    train_scores = np.array([r.y for r in scored if r.level.is_full], dtype=float)
    grid = np.union1d(default_grid(train_scores, int(cfg.get("n_knots", 201))), train_scores)
    if regime_kind == "covariate_shift":
        nu = fit_covshift_nuisances(scored, grid, n_neighbors=n_neighbors)
    else:
        nu = fit_sequential_regressions(scored, grid, D, n_neighbors=n_neighbors)
    name = cfg.get("artifact_name", "nuisances.pkl")
    path = os.path.join(out_dir, name)
    io.save_artifact(path, nu, score_model, cfg)
    print(f"artifact written to {path} (trims: {nu.diagnostics.get('trimmed')})")
    return EXIT_OK


PREDICT_KEYS = (
    "artifact", "calibration_csv", "sidecar", "test_csv", "alpha",
    "method", "score", "n_knots", "fit_fingerprint", "out_name", "seed",
)


def cmd_predict(cfg: dict, out_dir: str) -> int:
    import csv as csv_mod

    import numpy as np

    from . import io
    from .calibrate import apply_score, solve_crc, solve_rscp_covshift, solve_rscp_monotone, solve_tilde_dr, solve_wcp
    from .errors import ConfigError

    art = io.load_artifact(cfg["artifact"])
    if cfg.get("fit_fingerprint") is not None and cfg["fit_fingerprint"] != art["fingerprint"]:
        raise ConfigError("artifact fingerprint does not match the requested fit")
    if cfg.get("score") is not None and cfg["score"] != art["score_kind"]:
        raise ConfigError(
            f"artifact was fit with score {art['score_kind']!r}, config asks {cfg['score']!r}"
        )
    fit_knots = int(art.get("fit_config", {}).get("n_knots", 201))
    if cfg.get("n_knots") is not None and int(cfg["n_knots"]) != fit_knots:
        raise ConfigError("artifact was fit on a different theta grid")
    nu = art["nuisance"]
    score_model = art["score_model"]
    side = io.load_sidecar(cfg["sidecar"])
    cal, _ = io.read_records(cfg["calibration_csv"], side)
    X_test = _read_covariates(cfg["test_csv"], side["x_dim"])
    alpha = float(cfg.get("alpha", 0.1))
    method = cfg.get("method", "rscp")
    if method == "rscp":
        if nu.regime.kind == "covariate_shift":
            sols = solve_rscp_covshift(cal, nu, X_test, alpha, score_model)
        elif nu.regime.kind == "monotone":
            sols = solve_rscp_monotone(cal, nu, X_test, alpha, score_model)
        else:
            raise ConfigError("non-monotone prediction is library-API only")
        thresholds = [s.r_hat for s in sols]
    elif method == "tilde":
        sol = solve_tilde_dr(cal, nu, alpha, score_model)
        thresholds = [sol.r_hat] * len(X_test)
    elif method == "wcp":
        scored = apply_score(cal, score_model)
        complete = [r for r in scored if r.level.is_full]
        if not complete:
            from .errors import EmptyCalibration

            raise EmptyCalibration("no complete calibration cases for weighting")
        Xc = np.vstack([r.x for r in complete])
        scores = np.array([r.y for r in complete], dtype=float)
        weights = nu.propensity(1).predict(Xc)
        w_tests = nu.propensity(1).predict(X_test)
        thresholds = [solve_wcp(scores, weights, float(w), alpha).r_hat for w in w_tests]
    elif method == "crc":
        base = [r for r in cal if (not r.level.is_full) and r.level.k == 0] or cal
        funcs = [nu.outcome(1).grid_function(r.x) for r in base]
        sol = solve_crc(funcs, alpha)
        thresholds = [sol.r_hat] * len(X_test)
    else:
        raise ConfigError(f"unknown method {method!r}")
    path = os.path.join(out_dir, cfg.get("out_name", "intervals.csv"))
    with open(path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["row", "method", "alpha", "threshold", "set_kind", "lo", "hi", "labels"])
        for i, (x, t) in enumerate(zip(X_test, thresholds)):
            pset = score_model.invert(x, float(t))
            writer.writerow(
                [i, method, alpha, t, pset.kind, pset.lo, pset.hi, ";".join(map(str, pset.labels))]
            )
    print(f"{len(thresholds)} prediction sets written to {path}")
    return EXIT_OK


def _read_covariates(path, x_dim):
    import csv as csv_mod

    import numpy as np

    from .errors import SchemaError

    expected = [f"x_{i + 1}" for i in range(x_dim)]
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}")
    with fh:
        reader = csv_mod.DictReader(fh)
        if reader.fieldnames != expected:
            raise SchemaError(f"test CSV must have columns {expected}, found {reader.fieldnames}")
        for i, row in enumerate(reader, start=1):
            try:
                rows.append([float(row[c]) for c in expected])
            except (TypeError, ValueError):
                raise SchemaError(f"row {i}: non-numeric test covariate")
    if not rows:
        raise SchemaError("empty test covariate file")
    return np.asarray(rows, dtype=float)


SIMULATE_KEYS = (
    "setting", "view", "n_grid", "reps", "alpha", "score", "methods",
    "seed", "train_size", "test_size", "oracle", "learner", "n_knots",
    "n_neighbors",
)


def cmd_simulate(cfg: dict, out_dir: str) -> int:
    from . import io
    from .simulate import SimConfig, run_monte_carlo

    fields = {k: v for k, v in cfg.items() if k != "schema_version"}
    for key in ("n_grid", "methods"):
        if key in fields:
            fields[key] = tuple(fields[key])
    report = run_monte_carlo(SimConfig(**fields))
    io.write_report_json(os.path.join(out_dir, "report.json"), report)
    io.write_report_csv(os.path.join(out_dir, "report.csv"), report)
    for key in sorted(report.summary):
        s = report.summary[key]
        print(
            f"{key}: coverage {s['mean_coverage']:.4f} (sd {s['sd_coverage']:.4f}), "
            f"width {s['mean_width']:.4f}, inf sets {s['inf_sets']}"
        )
    if report.failures:
        print(f"{report.failures} replication(s) failed; see report.json")
    return EXIT_OK


CHECK_KEYS = ("checks", "seed")


def cmd_check(cfg: dict, out_dir: str) -> int:
    from .simulate import EXACT_CHECKS, run_theorem_checks

    results = run_theorem_checks(cfg.get("checks"))
    path = os.path.join(out_dir, "checks.json")
    with open(path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    exact_failed = False
    for name, res in results.items():
        status = "PASS" if res["passed"] else "FAIL"
        print(f"{name}: {status}")
        if not res["passed"] and name in EXACT_CHECKS:
            exact_failed = True
    return EXIT_INTERNAL if exact_failed else EXIT_OK


INGEST_KEYS = ("data_csv", "sidecar")


def cmd_ingest_validate(cfg: dict, out_dir: str) -> int:
    from . import io
    from .core import validate_pattern
    from .errors import SchemaError

    side = io.load_sidecar(cfg["sidecar"])
    records, table = io.read_records(cfg["data_csv"], side)
    for i, r in enumerate(records, start=1):
        if not validate_pattern(r, table):
            raise SchemaError(f"row {i}: observed blocks do not match the level's pattern")
    levels = {}
    for r in records:
        key = "inf" if r.level.is_full else r.level.k
        levels[key] = levels.get(key, 0) + 1
    print(f"{len(records)} records valid; level counts: {levels}")
    return EXIT_OK


_COMMANDS = {
    "fit": (cmd_fit, FIT_KEYS, ("data_csv", "sidecar", "regime")),
    "predict": (cmd_predict, PREDICT_KEYS, ("artifact", "calibration_csv", "sidecar", "test_csv")),
    "simulate": (cmd_simulate, SIMULATE_KEYS, ()),
    "check": (cmd_check, CHECK_KEYS, ()),
    "ingest-validate": (cmd_ingest_validate, INGEST_KEYS, ("data_csv", "sidecar")),
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _set_threads(args.threads)
    from . import io
    from .errors import RobustCpError

    fn, allowed, required = _COMMANDS[args.command]
    try:
        cfg = io.load_config(args.config, allowed, required)
        if args.seed is not None:
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        return fn(cfg, args.out)
    except RobustCpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
