"""Command-line entry point: synthesize, estimate, study, validate-config."""

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema

from . import __version__
from . import diagnostics as diag
from .config import (
    REPORT_SCHEMA,
    build_contrast,
    build_dgp,
    build_nuisance,
    config_hash,
    detect_command,
    load_data,
    load_json,
    validate,
)
from .errors import BridgeExistenceError, ConditioningError, ConfigurationError
from .gace import estimate
from .synthetic import DiscreteDGP, bundled_discrete_dgps, oracle_discrete_J, oracle_linear_sem_J

logger = logging.getLogger("proxbridge")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _meta(cfg, seed):
    return {"config_hash": config_hash(cfg), "seed": seed, "version": __version__}


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in columns})
    return path


def _resolve_jobs(flag):
    env = os.environ.get("PROXBRIDGE_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigurationError(f"PROXBRIDGE_JOBS must be an integer, got {env!r}") from err
    return max(1, int(flag or 1))


def _truth(dgp, contrast):
    if isinstance(dgp, DiscreteDGP):
        return oracle_discrete_J(dgp, contrast)
    if dgp is not None:
        return oracle_linear_sem_J(dgp, contrast)[0]
    return None


# -- commands ---------------------------------------------------------------------


def cmd_synthesize(cfg, args):
    validate(cfg, "synthesize")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = args.out or cfg.get("output")
    if not out:
        raise ConfigurationError("synthesize needs an output CSV path (--out or \"output\")")
    dgp = build_dgp(cfg["dgp"])
    data = diag.generate(dgp, cfg["n"], seed)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    csv_path, sidecar = data.to_csv(out)
    manifest = {
        "dgp": dgp.to_dict(),
        "dgp_hash": dgp.digest(),
        "n": data.n,
        "csv": csv_path.name,
        "sidecar": sidecar.name,
        "meta": _meta(cfg, seed),
    }
    mpath = _write_json(csv_path.with_name(csv_path.stem + ".manifest.json"), manifest)
    return {"csv": str(csv_path), "sidecar": str(sidecar), "manifest": str(mpath), "n": data.n}


def cmd_estimate(cfg, args):
    cfg = dict(cfg)
    if args.data:
        cfg["data"] = {"csv": args.data, **({"dgp": cfg["data"]["dgp"]} if "dgp" in cfg.get("data", {}) else {})}
    if args.estimator:
        cfg["estimator"] = args.estimator
    if args.folds is not None:
        cfg["folds"] = args.folds
    if args.oracle:
        cfg["nuisance"] = {"family": "oracle"}
    validate(cfg, "estimate")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    data, dgp = load_data(cfg["data"], seed)
    contrast = build_contrast(cfg.get("contrast"), dgp)
    nuisance = build_nuisance(cfg["nuisance"], data, dgp)
    report = estimate(data, contrast, nuisance, cfg.get("estimator", "dr-crossfit"), cfg.get("folds", 2),
                      seed, cfg.get("alpha", 0.05), _resolve_jobs(args.jobs))
    out = report.to_dict()
    out["oracle_J"] = _truth(dgp, contrast)
    out["meta"] = _meta(cfg, seed)
    jsonschema.validate(out, REPORT_SCHEMA)
    path = args.out or cfg.get("output")
    if path:
        _write_json(path, out)
    return out


def _study_dgps(cfg):
    if "dgps" in cfg:
        return {getattr(d, "name", str(i)): d for i, d in enumerate(build_dgp(r) for r in cfg["dgps"])}
    if "dgp" in cfg:
        d = build_dgp(cfg["dgp"])
        return {d.name: d}
    return bundled_discrete_dgps()


def _study_rows(cfg, seed, jobs):
    kind = cfg["kind"]
    if kind == "identities":
        rows, ok = [], True
        for name, dgp in _study_dgps(cfg).items():
            rep = diag.check_identification_identities(dgp, cfg.get("trials", 20), seed)
            ok &= rep.passed
            rows += [{"dgp": name, "identity": k, "violation": v, "passed": v <= rep.tol}
                     for k, v in rep.violations.items()]
        return rows, ["dgp", "identity", "violation", "passed"], {"all_passed": bool(ok)}
    if kind == "ill_posedness":
        rows = []
        for name, dgp in _study_dgps(cfg).items():
            for bridge in ("h", "q"):
                feats = dgp.saturated_features(bridge)
                for k in ("tau1", "tau2"):
                    r = diag.ill_posedness_discrete(dgp, feats, k, bridge)
                    rows.append({"dgp": name, **r.to_dict()})
        return rows, ["dgp", "bridge", "kind", "value", "infinite"], {}
    dgp = build_dgp(cfg["dgp"])
    contrast = build_contrast(cfg.get("contrast"), dgp)
    if kind == "projected_mse":
        nuisance = build_nuisance(cfg["nuisance"], None, dgp)
        curve = diag.projected_mse_curve(dgp, nuisance, cfg["sizes"], cfg["reps"], seed, contrast)
        rows = [{"n": n, "h_residual": h, "q_residual": q, "reg_error": r, "ipw_error": i, "dr_error": d}
                for n, h, q, r, i, d in zip(curve.sizes, curve.h_residual, curve.q_residual,
                                            curve.reg_error, curve.ipw_error, curve.dr_error)]
        return rows, list(rows[0]), {"monotone_h": curve.monotone_h, "monotone_q": curve.monotone_q}
    estimators = {
        name: diag.EstimatorSpec(build_nuisance(e["nuisance"], None, dgp), e.get("estimator", "dr-crossfit"),
                                 e.get("folds", 2))
        for name, e in cfg["estimators"].items()
    }
    study = diag.ReplicationStudy(dgp, estimators, tuple(cfg["sizes"]), cfg["reps"], seed, contrast,
                                  cfg.get("alpha", 0.05), jobs, cfg.get("oracle_J"))
    diag.run_study(study)
    summary = {"oracle_J": study.truth()}
    if kind == "rate":
        rows = []
        for name in estimators:
            rep = diag.rate_report(study, name)
            summary[name] = {"slope": rep.slope, "slope_se": rep.slope_se, "undefined": rep.undefined,
                             "inversions": rep.inversions}
            rows += [{"estimator": name, "n": n, "rmse": m, "bias": b, "sd": s, "reps": study.reps}
                     for n, m, b, s in zip(rep.sizes, rep.rmse, rep.bias, rep.sd)]
        return rows, ["estimator", "n", "rmse", "bias", "sd", "reps"], summary
    cov = diag.run_coverage_study(study)
    rows = [{"estimator": r.estimator, "n": r.n, "coverage": r.coverage, "ci_lo": r.ci[0], "ci_hi": r.ci[1],
             "reps": r.replications, "zero_variance": r.zero_variance} for r in cov.values()]
    summary["coverage"] = {f"{r['estimator']}@{r['n']}": r["coverage"] for r in rows}
    return rows, ["estimator", "n", "coverage", "ci_lo", "ci_hi", "reps", "zero_variance"], summary


def cmd_study(cfg, args):
    validate(cfg, "study")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("output") or "study_out")
    t0 = time.perf_counter()
    rows, columns, summary = _study_rows(cfg, seed, _resolve_jobs(args.jobs))
    summary.update({"kind": cfg["kind"], "cells": len(rows), "seconds": round(time.perf_counter() - t0, 3),
                    "meta": _meta(cfg, seed)})
    _write_csv(out / "cells.csv", rows, columns)
    _write_json(out / "summary.json", summary)
    return summary


def cmd_validate(cfg, args):
    command = validate(cfg, args.command_name)
    return {"valid": True, "command": command, "config_hash": config_hash(cfg)}


# -- entry point ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="proxbridge", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log more to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output path (file or directory, per command)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (PROXBRIDGE_JOBS overrides)")
        sp.add_argument("--print-summary", action="store_true", help="print a JSON summary on stdout")

    common(sub.add_parser("synthesize", help="draw a synthetic dataset to CSV"))
    est = sub.add_parser("estimate", help="estimate the GACE")
    common(est)
    est.add_argument("--data", help="CSV file (sidecar <stem>.dims.json next to it)")
    est.add_argument("--estimator", help="ipw, reg, dr or dr-crossfit")
    est.add_argument("--folds", type=int)
    est.add_argument("--oracle", action="store_true", help="use the DGP's true bridges as nuisances")
    common(sub.add_parser("study", help="run a replication / verification study"))
    val = sub.add_parser("validate-config", help="schema-check a config without running it")
    val.add_argument("--config", required=True)
    val.add_argument("--command-name", choices=["synthesize", "estimate", "study"], help="schema to check against")
    val.add_argument("--print-summary", action="store_true")
    return p


COMMANDS = {"synthesize": cmd_synthesize, "estimate": cmd_estimate, "study": cmd_study,
            "validate-config": cmd_validate}


def _fail(kind, message, code):
    json.dump({"error": kind, "message": message}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_json(args.config)
        if not isinstance(cfg, dict):
            raise ConfigurationError("the config must be a JSON object")
        if args.command != "validate-config":
            declared = cfg.get("command")
            if declared is not None and declared != args.command:
                raise ConfigurationError(f"config is for {declared!r}, not {args.command!r}")
        elif args.command_name is None:
            args.command_name = detect_command(cfg)
        result = COMMANDS[args.command](cfg, args)
    except FileNotFoundError as err:
        return _fail("FileNotFoundError", f"{err.strerror}: {err.filename}", EXIT_CONFIG)
    except (ConfigurationError, BridgeExistenceError, jsonschema.ValidationError) as err:
        return _fail(type(err).__name__, str(err), EXIT_CONFIG)
    except (ConditioningError, ValueError, OSError) as err:
        return _fail(type(err).__name__, str(err), EXIT_RUNTIME)
    if args.print_summary:
        json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
