"""``loreg`` command-line interface.

Subcommands: simulate, estimate, infer, evaluate.  Exit codes: 0 success,
1 validation error, 2 numerical failure, 3 I/O error.
"""

import argparse
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CSVParseError, LoregError, SpecError
from .inference import Point, ThresholdSpec, VarianceKind, build_inference, point_bundle, threshold_by_z
from .io import dump_json, read_matrix, sha256_file, to_jsonable, write_matrix
from .metrics import norm_losses, support_metrics
from .nodewise import ColumnEstimate, PrecisionEstimate, TuningSpec, estimate, standardize, symmetrize
from .simulation import SimulationSpec, evaluate_run, run_simulation

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _t_max(text):
    if text == "auto":
        return "auto"
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a nonnegative integer or 'auto'") from None
    if v < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer or 'auto'")
    return v


def _lambdas(text):
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _load_data(path, header=False, center=False):
    X = read_matrix(path, header=header)
    if X.shape[0] < 3:
        raise ValueError(f"{path}: need at least 3 rows, found {X.shape[0]}")
    if X.shape[1] < 2:
        raise ValueError(f"{path}: need at least 2 columns, found {X.shape[1]}")
    if center:
        X = X - X.mean(axis=0)
    return X


def _inventory(out_dir, skip=("manifest.json",)):
    out_dir = Path(out_dir)
    return [{"path": p.name, "sha256": sha256_file(p)} for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name not in skip]


def _manifest(out_dir, command, inputs, started, extra=None):
    m = {
        "software": {"name": "loreg", "version": __version__},
        "command": command,
        "inputs": inputs,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "files": _inventory(out_dir),
    }
    m.update(extra or {})
    dump_json(Path(out_dir) / "manifest.json", m)


def _now():
    return datetime.now(timezone.utc).isoformat()


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    spec = SimulationSpec.load(args.spec)
    report = run_simulation(spec, args.out, parallelism=args.workers)
    print(f"wrote {args.out} ({spec.replications} replications, {len(spec.methods)} methods)")
    for label, entry in report["methods"].items():
        s = entry["summary"]
        print(f"  {label:16s} frobenius {s['frobenius']['mean']:.4f}  max {s['max']['mean']:.4f}  "
              f"mcc {s['mcc']['mean']:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# estimate


def _column_record(col):
    return {
        "j": col.j,
        "active": col.active.tolist(),
        "chosen": col.chosen_t,
        "sigma2": col.sigma2,
        "hbic": col.hbic_value,
        "trace": [[t, v] for t, v in col.trace],
        "iterations": col.iterations,
        "converged": col.converged,
        "flags": col.flags,
    }


def cmd_estimate(args):
    started = _now()
    X = _load_data(args.data, args.header, args.center)
    tuning = TuningSpec(t_max=args.t_max, fixed_t=args.fixed_t, max_iter=args.max_iter)
    if args.lambdas is not None:
        tuning.lambdas = args.lambdas
    est = estimate(X, args.method, tuning, n_jobs=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "omega_us.csv", est.omega_us)
    write_matrix(out / "omega_s.csv", est.omega_s)
    n, p = X.shape
    info = {
        "method": est.method,
        "n": n,
        "p": p,
        "t_max": tuning.resolve_t_max(n, p) if args.method == "loreg" else None,
        "centered": bool(args.center),
        "header": bool(args.header),
        "columns": [_column_record(c) for c in est.columns],
        "diagnostics": [[j, msg] for j, msg in est.diagnostics],
    }
    dump_json(out / "columns.json", to_jsonable(info))
    _manifest(out, "estimate", {"data": str(args.data), "data_sha256": sha256_file(args.data)}, started)
    print(f"wrote {out}: p={p}, n={n}, method={est.method}, "
          f"{int(np.count_nonzero(np.triu(est.omega_s, 1)))} edges in omega_s")
    return EXIT_OK


def load_estimate(est_dir, X):
    """Rebuild a :class:`PrecisionEstimate` from an ``estimate`` output directory."""
    est_dir = Path(est_dir)
    info = json.loads((est_dir / "columns.json").read_text())
    omega_us = read_matrix(est_dir / "omega_us.csv")
    n, p = X.shape
    if omega_us.shape != (p, p) or info["p"] != p:
        raise ValueError(f"estimate is {omega_us.shape[0]}x{omega_us.shape[1]} but data has p={p}")
    if info["n"] != n:
        raise ValueError(f"estimate was fitted on n={info['n']} rows, data has n={n}")
    _, gamma, sigma_hat = standardize(X)
    columns = []
    for rec in info["columns"]:
        j = rec["j"]
        rest = np.delete(np.arange(p), j)
        ojj = omega_us[j, j]
        alpha = -omega_us[rest, j] / ojj
        columns.append(ColumnEstimate(
            j=j, beta=alpha * np.sqrt(gamma[rest]), alpha=alpha,
            active=np.asarray(rec["active"], dtype=np.intp), sigma2=rec["sigma2"], omega_jj=ojj,
            omega_col=omega_us[rest, j], chosen_t=rec["chosen"], hbic_value=rec["hbic"],
            trace=[tuple(t) for t in rec["trace"]], flags=list(rec["flags"]),
            iterations=rec["iterations"], converged=rec["converged"],
        ))
    return PrecisionEstimate(omega_us, symmetrize(omega_us), columns, info["method"], gamma, sigma_hat, n), info


def cmd_infer(args):
    started = _now()
    info = json.loads((Path(args.estimate_dir) / "columns.json").read_text())
    X = _load_data(args.data, info.get("header", False), info.get("centered", False))
    est, info = load_estimate(args.estimate_dir, X)
    gaussian = args.distribution == "gaussian"
    kind = VarianceKind(args.kind) if args.kind else VarianceKind.for_point(args.point, gaussian)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = build_inference(est, X, kind, args.point, args.alpha)
        points, variances = point_bundle(est, X, gaussian=kind.gaussian)
    value, z_src, supp = args.threshold.split("|")
    tspec = ThresholdSpec(value, z_src, supp, args.fdr)
    var = variances[tspec.z_source]
    ok = np.isfinite(var) & (var > 0)
    z = np.where(ok, np.sqrt(est.n) * points[tspec.z_source] / np.sqrt(np.where(ok, var, 1.0)), np.nan)
    thresholded, rejected, undefined = threshold_by_z(points[tspec.value_source], z,
                                                      points[tspec.support_source], tspec.fdr_level)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "t_hat.csv", points["T"])
    write_matrix(out / "variances.csv", res.var_matrix)
    write_matrix(out / "zscores.csv", res.z_scores)
    write_matrix(out / "ci_low.csv", res.ci_low)
    write_matrix(out / "ci_high.csv", res.ci_high)
    write_matrix(out / "thresholded.csv", thresholded)
    flags = list(res.flags) + sorted({str(w.message) for w in caught})
    dump_json(out / "inference.json", to_jsonable({
        "point": res.point_kind.value,
        "variance_kind": res.variance_kind.value,
        "alpha": args.alpha,
        "n": est.n,
        "undefined_variances": res.undefined,
        "floored_variances": res.floored,
        "flags": flags,
        "threshold": {"value": value, "z_source": z_src, "support": supp, "fdr_level": args.fdr,
                      "undefined_tests": undefined, "rejected": [list(rc) for rc in rejected]},
    }))
    _manifest(out, "infer", {"data": str(args.data), "estimate_dir": str(args.estimate_dir)}, started)
    print(f"wrote {out}: {len(rejected)} rejections among tested pairs ({undefined} undefined)")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args):
    out = Path(args.out)
    if not args.estimates and not args.run_dir:
        raise ValueError("give estimate CSVs with --truth, or --run-dir")
    out.mkdir(parents=True, exist_ok=True)
    if args.estimates:
        if args.truth is None:
            raise ValueError("--truth is required with estimate files")
        truth = read_matrix(args.truth)
        losses, support = {}, {}
        for path in args.estimates:
            M = read_matrix(path)
            losses[str(path)] = norm_losses(M, truth).as_dict()
            support[str(path)] = support_metrics(M, truth).as_dict()
        dump_json(out / "losses.json", to_jsonable(losses))
        dump_json(out / "support.json", to_jsonable(support))
    if args.run_dir:
        report = evaluate_run(args.run_dir)
        dump_json(out / "metrics.json", report)
        if "normality" in report:
            dump_json(out / "normality.json", report["normality"])
        ref = Path(args.run_dir) / "metrics.json"
        if ref.exists():
            same = json.loads(ref.read_text()) == report
            print(f"run report reproduced: {same}")
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="loreg", description="Sparse precision matrices by L0 nodewise regression.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON spec")
    p.add_argument("spec", type=Path, help="SimulationSpec JSON file")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: spec, else all CPUs)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate a precision matrix from a data CSV")
    p.add_argument("data", type=Path, help="n x p CSV, rows are observations")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--method", choices=("loreg", "lasso"), default="loreg")
    p.add_argument("--t-max", type=_t_max, default=20, help="largest support size per column, or 'auto'")
    p.add_argument("--fixed-t", type=int, default=None, help="skip HBIC and use this support size")
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--lambdas", type=_lambdas, default=None, help="comma-separated Lasso grid")
    p.add_argument("--center", action="store_true", help="subtract column means first")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--workers", type=int, default=1, help="threads over columns")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("infer", help="variances, Z-scores, CIs and FDR thresholding")
    p.add_argument("estimate_dir", type=Path, help="output directory of 'estimate'")
    p.add_argument("data", type=Path, help="the data CSV the estimate was fitted on")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--point", choices=[x.value for x in Point], default="T")
    p.add_argument("--kind", choices=[k.value for k in VarianceKind], default=None,
                   help="variance estimator (default: matched to --point and --distribution)")
    p.add_argument("--distribution", choices=("gaussian", "subgaussian"), default="gaussian")
    p.add_argument("--alpha", type=float, default=0.05, help="CI level is 1 - alpha")
    p.add_argument("--fdr", type=float, default=0.05)
    p.add_argument("--threshold", default="S|US|S",
                   help="VALUE|ZSOURCE|SUPPORT, each one of US, S, T (default S|US|S)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="losses and support metrics against a truth matrix")
    p.add_argument("estimates", nargs="*", type=Path, help="estimate CSVs")
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--run-dir", type=Path, default=None, help="recompute a simulate run's report")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)
    return ap


def _check_threshold(text):
    parts = text.split("|")
    if len(parts) != 3 or any(x not in {p.value for p in Point} for x in parts):
        raise ValueError(f"--threshold must look like S|US|S, got {text!r}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "infer":
            _check_threshold(args.threshold)
            if not 0 < args.alpha < 1 or not 0 < args.fdr < 1:
                raise ValueError("--alpha and --fdr must lie in (0, 1)")
        return args.func(args)
    except (SpecError, CSVParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (LoregError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
