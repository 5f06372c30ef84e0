"""Monte Carlo harness: declarative specs, replications and run directories.

A run directory holds::

    spec.json            normalised spec (parse -> serialise is the identity)
    omega_true.csv       the fixed population precision matrix
    replications/rep_NNNN/<method>.csv and normality inputs
    metrics.json         aggregated report (deterministic, no timestamps)
    metrics_table.csv    method rows, mean/sd metric columns
    manifest.json        checksums, seeds, timestamps, software version
"""

import hashlib
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import SpecError
from .inference import (
    Point,
    ThresholdSpec,
    point_bundle,
    population_desp_variances,
    population_var_undesp,
    threshold,
)
from .io import dump_json, format_float, read_matrix, sha256_file, to_jsonable, write_matrix
from .metrics import intersect_supports, norm_losses, normality_metrics, support_metrics
from .nodewise import METHODS, TuningSpec, estimate
from .simgen import FAMILIES, PURPOSES, GraphSpec, edge_count, generate_precision, make_rng, sample

SCHEMA_VERSION = 1
DISTRIBUTIONS = ("gaussian", "subgaussian")
LOSS_KEYS = ("l1", "spectral", "frobenius", "max")
SUPPORT_KEYS = ("precision", "sensitivity", "specificity", "mcc")

L0_VARIANTS = ("loreg:S", "loreg:S|US|S", "loreg:S|T|S", "loreg:T|T|S", "loreg:T|T|T", "loreg:T")
L1_VARIANTS = ("lasso:S", "lasso:S|T|S", "lasso:T|T|S", "lasso:T|T|T", "lasso:T")
DEFAULT_METHODS = L0_VARIANTS + L1_VARIANTS


@dataclass(frozen=True)
class MethodSpec:
    """An estimator plus an optional thresholding step.

    ``"loreg:S"`` is the plain symmetric estimate; ``"loreg:S|US|S"`` keeps
    values of ``S`` where the BH test on null Z-scores of ``US`` rejects,
    over the lower-triangular support of ``S``.
    """

    estimator: str
    value: str
    z_source: str | None = None
    support: str | None = None

    @classmethod
    def parse(cls, text):
        m = re.fullmatch(r"(\w+):(\w+)(?:\|(\w+)\|(\w+))?", text.strip())
        if not m:
            raise ValueError(f"bad method {text!r}; expected 'estimator:V' or 'estimator:V|Z|S'")
        est, value, z, supp = m.groups()
        if est not in METHODS:
            raise ValueError(f"unknown estimator {est!r} in {text!r}")
        for name in (value, z, supp):
            if name is not None and name not in {p.value for p in Point}:
                raise ValueError(f"unknown matrix {name!r} in {text!r}; use US, S or T")
        return cls(est, value, z, supp)

    @property
    def thresholded(self):
        return self.z_source is not None

    @property
    def label(self):
        if self.thresholded:
            return f"{self.estimator}:{self.value}|{self.z_source}|{self.support}"
        return f"{self.estimator}:{self.value}"

    @property
    def slug(self):
        return self.label.replace(":", "_").replace("|", "__")


_TOP_FIELDS = {
    "schema_version", "graph", "distribution", "n", "replications", "methods", "tuning",
    "fdr_level", "alpha", "seed", "parallelism", "normality", "save_estimates",
}
_GRAPH_FIELDS = {"family", "p", "seed", "group_size", "edge_prob"}
_TUNING_FIELDS = {"t_max", "fixed_t", "max_iter", "lambdas", "lasso_tol", "lasso_max_sweeps"}


@dataclass
class SimulationSpec:
    graph: GraphSpec
    n: int
    replications: int
    distribution: str = "gaussian"
    methods: tuple = DEFAULT_METHODS
    tuning: TuningSpec = field(default_factory=TuningSpec)
    fdr_level: float = 0.05
    alpha: float = 0.05
    seed: int = 0
    parallelism: int | None = None
    normality: bool = True
    save_estimates: bool = True

    def __post_init__(self):
        if self.n < 3:
            raise SpecError("n must be at least 3", "n")
        if self.replications < 1:
            raise SpecError("replications must be at least 1", "replications")
        if self.distribution not in DISTRIBUTIONS:
            raise SpecError(f"distribution must be one of {DISTRIBUTIONS}", "distribution")
        if not 0.0 < self.fdr_level < 1.0:
            raise SpecError("fdr_level must lie in (0, 1)", "fdr_level")
        if not 0.0 < self.alpha < 1.0:
            raise SpecError("alpha must lie in (0, 1)", "alpha")
        if self.parallelism is not None and self.parallelism < 1:
            raise SpecError("parallelism must be positive", "parallelism")
        if not 0 <= self.seed < 2 ** 64:
            raise SpecError("seed must be a 64-bit unsigned integer", "seed")
        try:
            self.methods = tuple(MethodSpec.parse(m).label for m in self.methods)
        except ValueError as exc:
            raise SpecError(str(exc), "methods") from None
        if not self.methods:
            raise SpecError("at least one method is required", "methods")

    @property
    def method_specs(self):
        return [MethodSpec.parse(m) for m in self.methods]

    @property
    def estimators(self):
        names = {m.estimator for m in self.method_specs}
        if self.normality and self.replications >= 2:
            names.add("loreg")
        return [e for e in METHODS if e in names]

    def to_dict(self):
        g = self.graph
        t = self.tuning
        return {
            "schema_version": SCHEMA_VERSION,
            "graph": {"family": g.family, "p": g.p, "seed": g.seed, "group_size": g.group_size,
                      "edge_prob": g.edge_prob},
            "distribution": self.distribution,
            "n": self.n,
            "replications": self.replications,
            "methods": list(self.methods),
            "tuning": {"t_max": t.t_max, "fixed_t": t.fixed_t, "max_iter": t.max_iter,
                       "lambdas": [float(x) for x in t.lambdas], "lasso_tol": t.lasso_tol,
                       "lasso_max_sweeps": t.lasso_max_sweeps},
            "fdr_level": self.fdr_level,
            "alpha": self.alpha,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "normality": self.normality,
            "save_estimates": self.save_estimates,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d, text=None):
        def fail(msg, name):
            raise SpecError(msg, name, _line_of(text, name.split(".")[-1]))

        if not isinstance(d, dict):
            raise SpecError("spec must be a JSON object", line=1)
        _reject_unknown(d, _TOP_FIELDS, "", text)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            fail(f"schema_version must be {SCHEMA_VERSION}, got {version!r}", "schema_version")
        for req in ("graph", "n", "replications"):
            if req not in d:
                raise SpecError(f"missing required field {req!r}", req)
        g = d["graph"]
        if not isinstance(g, dict):
            fail("graph must be an object", "graph")
        _reject_unknown(g, _GRAPH_FIELDS, "graph.", text)
        for req in ("family", "p"):
            if req not in g:
                raise SpecError(f"missing required field 'graph.{req}'", f"graph.{req}")
        if g["family"] not in FAMILIES:
            fail(f"family must be one of {FAMILIES}", "graph.family")
        try:
            graph = GraphSpec(
                family=g["family"],
                p=_int(g["p"], "graph.p", text),
                seed=_int(g.get("seed", 0), "graph.seed", text),
                group_size=_int(g.get("group_size", 10), "graph.group_size", text),
                edge_prob=g.get("edge_prob"),
            )
        except ValueError as exc:
            fail(str(exc), "graph.p")
        tuning = TuningSpec()
        if "tuning" in d:
            t = d["tuning"]
            if not isinstance(t, dict):
                fail("tuning must be an object", "tuning")
            _reject_unknown(t, _TUNING_FIELDS, "tuning.", text)
            t_max = t.get("t_max", 20)
            if t_max != "auto":
                t_max = _int(t_max, "tuning.t_max", text)
            fixed = t.get("fixed_t")
            try:
                tuning = TuningSpec(
                    t_max=t_max,
                    fixed_t=None if fixed is None else _int(fixed, "tuning.fixed_t", text),
                    max_iter=_int(t.get("max_iter", 50), "tuning.max_iter", text),
                    lambdas=tuple(float(x) for x in t.get("lambdas", tuning.lambdas)),
                    lasso_tol=float(t.get("lasso_tol", tuning.lasso_tol)),
                    lasso_max_sweeps=_int(t.get("lasso_max_sweeps", 10000), "tuning.lasso_max_sweeps", text),
                )
            except (TypeError, ValueError) as exc:
                fail(str(exc), "tuning")
        kwargs = {}
        for name in ("distribution", "methods", "fdr_level", "alpha", "normality", "save_estimates"):
            if name in d:
                kwargs[name] = d[name]
        for name in ("seed", "parallelism"):
            if d.get(name) is not None:
                kwargs[name] = _int(d[name], name, text)
        try:
            return cls(graph=graph, n=_int(d["n"], "n", text),
                       replications=_int(d["replications"], "replications", text),
                       tuning=tuning, **kwargs)
        except SpecError as exc:
            if exc.line is None and text is not None:
                exc.line = _line_of(text, exc.field)
            raise

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        return cls.from_dict(d, text)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def _line_of(text, name):
    if text is None or not name:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(name.split(".")[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _reject_unknown(d, allowed, prefix, text):
    for key in d:
        if key not in allowed:
            raise SpecError(f"unknown field '{prefix}{key}'", prefix + key, _line_of(text, key))


def _int(v, name, text):
    if isinstance(v, bool) or not isinstance(v, int):
        raise SpecError(f"{name} must be an integer, got {v!r}", name, _line_of(text, name))
    return v


# --------------------------------------------------------------------------
# replications


def _fit(X, name, tuning, distribution):
    """Estimate plus the three point matrices and matched variance matrices."""
    est = estimate(X, name, tuning)
    points, variances = point_bundle(est, X, distribution == "gaussian")
    return est, points, variances


def method_matrix(method, points, variances, n, fdr_level):
    if not method.thresholded:
        return points[method.value]
    spec = ThresholdSpec(method.value, method.z_source, method.support, fdr_level)
    return threshold(spec, points, variances, n)


def run_replication(spec, omega, rep, out_dir=None):
    """One replication: sample, fit every estimator, build every method matrix.

    Returns a record ``{"methods": {label: matrix}, "normality": {key: (point, var)}}``.
    When ``out_dir`` is given the matrices are also written there.
    """
    rng = make_rng(spec.seed, rep, "data")
    X = sample(omega, spec.n, rng, spec.distribution)
    fits = {name: _fit(X, name, spec.tuning, spec.distribution) for name in spec.estimators}
    methods = {}
    for m in spec.method_specs:
        _, points, variances = fits[m.estimator]
        methods[m.label] = method_matrix(m, points, variances, spec.n, spec.fdr_level)
    normality = {}
    if spec.normality and spec.replications >= 2:
        _, points, variances = fits["loreg"]
        normality["loreg:US"] = (points["US"], variances["US"])
        for name, (_, points, variances) in fits.items():
            normality[f"{name}:T"] = (points["T"], variances["T"])
    record = {"methods": methods, "normality": normality}
    if out_dir is not None:
        save_replication(record, spec, out_dir)
    return record


def _normality_files(key):
    slug = key.replace(":", "_")
    return f"point_{slug}.csv", f"var_{slug}.csv"


def save_replication(record, spec, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for m in spec.method_specs:
        write_matrix(out_dir / f"{m.slug}.csv", record["methods"][m.label])
    for key, (point, var) in record["normality"].items():
        pf, vf = _normality_files(key)
        write_matrix(out_dir / pf, point)
        write_matrix(out_dir / vf, var)


def load_replication(spec, rep_dir):
    rep_dir = Path(rep_dir)
    methods = {m.label: read_matrix(rep_dir / f"{m.slug}.csv") for m in spec.method_specs}
    normality = {}
    if spec.normality and spec.replications >= 2:
        keys = ["loreg:US"] + [f"{name}:T" for name in spec.estimators]
        for key in keys:
            pf, vf = _normality_files(key)
            normality[key] = (read_matrix(rep_dir / pf), read_matrix(rep_dir / vf, allow_nan=True))
    return {"methods": methods, "normality": normality}


# --------------------------------------------------------------------------
# aggregation


def _mean_sd(values):
    v = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(v)), "sd": float(np.std(v, ddof=1)) if v.size > 1 else None}


def _true_undesp_sd(omega, entries, distribution):
    """Population SD of ``Omega_us[i, j]`` with the selected set ``A_j* U {i, j}``."""
    sigma = np.linalg.inv(omega)
    sigma = 0.5 * (sigma + sigma.T)
    p = omega.shape[0]
    out = np.full((p, p), np.nan)
    for i, j in entries:
        a_plus = np.union1d(np.flatnonzero(omega[:, j]), [i, j])
        out[i, j] = np.sqrt(population_var_undesp(sigma, a_plus, i, j, distribution))
    return out


def summarize(spec, omega, records):
    """Aggregate replication records into the metrics report (a JSON-ready dict)."""
    methods = {}
    for m in spec.method_specs:
        per_rep = []
        for rec in records:
            M = rec["methods"][m.label]
            per_rep.append({"losses": norm_losses(M, omega).as_dict(),
                            "support": support_metrics(M, omega).as_dict()})
        summary = {}
        for k in LOSS_KEYS:
            summary[k] = _mean_sd([r["losses"][k] for r in per_rep])
        for k in SUPPORT_KEYS:
            summary[k] = _mean_sd([r["support"][k] for r in per_rep])
        methods[m.label] = {"per_replication": per_rep, "summary": summary}
    report = {
        "spec_hash": spec.hash(),
        "edge_count": edge_count(omega),
        "methods": methods,
    }
    if spec.normality and len(records) >= 2:
        report["normality"] = _normality_report(spec, omega, records)
    return to_jsonable(report)


def _normality_report(spec, omega, records):
    us_points = [r["normality"]["loreg:US"][0] for r in records]
    s_hat = intersect_supports(us_points)
    s_omega = omega != 0
    entry_sets = {"S_hat": s_hat, "S_omega": s_omega, "S_omega_c": ~s_omega}
    out = {}
    for key in records[0]["normality"]:
        points = [r["normality"][key][0] for r in records]
        variances = [r["normality"][key][1] for r in records]
        if key == "loreg:US":
            sets = {"S_hat": s_hat}
            sigma_true = _true_undesp_sd(omega, np.argwhere(s_hat), spec.distribution)
        else:
            sets = entry_sets
            sigma_true = np.sqrt(population_desp_variances(omega, spec.distribution))
        out[key] = {}
        for name, mask in sets.items():
            if not mask.any():
                out[key][name] = {"entry_set": name, "entries": 0}
                continue
            rep = normality_metrics(points, variances, omega, sigma_true, spec.n, spec.alpha, mask, name)
            out[key][name] = rep.summary()
    return out


def metrics_table_rows(report):
    header = ["method"]
    for k in LOSS_KEYS + SUPPORT_KEYS:
        header += [f"{k}_mean", f"{k}_sd"]
    rows = []
    for label, entry in report["methods"].items():
        row = [label]
        for k in LOSS_KEYS + SUPPORT_KEYS:
            s = entry["summary"][k]
            row += [s["mean"], s["sd"]]
        rows.append(row)
    return header, rows


def _write_table(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        cells = [row[0]] + ["" if v is None else format_float(v) for v in row[1:]]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# orchestration


def _init_worker():
    # one BLAS thread per process so results do not depend on the pool width
    threadpool_limits(1)


def _worker(args):
    spec, omega, rep, out_dir = args
    return run_replication(spec, omega, rep, out_dir)


def rep_dir_name(rep):
    return f"rep_{rep:04d}"


def default_parallelism():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_simulation(spec, run_dir=None, parallelism=None):
    """Run every replication of ``spec`` and return the metrics report.

    The report does not depend on ``parallelism``: every replication draws
    from its own stream and results are merged in replication order.  With
    ``run_dir`` the full run directory is written.
    """
    started = datetime.now(timezone.utc).isoformat()
    omega = generate_precision(spec.graph)
    workers = parallelism or spec.parallelism or default_parallelism()
    workers = max(1, min(workers, spec.replications))
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "spec.json").write_text(spec.to_json())
        write_matrix(run_dir / "omega_true.csv", omega)
    jobs = []
    for rep in range(spec.replications):
        out = None
        if run_dir is not None and spec.save_estimates:
            out = run_dir / "replications" / rep_dir_name(rep)
        jobs.append((spec, omega, rep, out))
    if workers == 1:
        with threadpool_limits(1):
            records = [_worker(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            records = list(pool.map(_worker, jobs))
    report = summarize(spec, omega, records)
    if run_dir is not None:
        dump_json(run_dir / "metrics.json", report)
        _write_table(run_dir / "metrics_table.csv", *metrics_table_rows(report))
        write_manifest(run_dir, spec, omega, started)
    return report


def write_manifest(run_dir, spec, omega, started):
    run_dir = Path(run_dir)
    files = []
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files.append({"path": path.relative_to(run_dir).as_posix(), "sha256": sha256_file(path),
                          "bytes": path.stat().st_size})
    manifest = {
        "software": {"name": "loreg", "version": __version__},
        "spec_hash": spec.hash(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "rng": {"algorithm": "numpy Philox4x64-10", "normal_sampler": "ziggurat",
                "stream_key": "SeedSequence(entropy=seed, spawn_key=(replication, purpose))"},
        "graph": {"family": spec.graph.family, "p": spec.graph.p, "seed": spec.graph.seed,
                  "edge_count": edge_count(omega)},
        "seeds": [{"replication": r, "entropy": spec.seed, "spawn_key": [r, PURPOSES["data"]]}
                  for r in range(spec.replications)],
        "files": files,
    }
    dump_json(run_dir / "manifest.json", manifest)
    return manifest


def evaluate_run(run_dir):
    """Recompute the metrics report of a run directory from its saved artifacts."""
    run_dir = Path(run_dir)
    spec = SimulationSpec.load(run_dir / "spec.json")
    if not spec.save_estimates:
        raise SpecError("run was made with save_estimates=false; nothing to evaluate", "save_estimates")
    omega = read_matrix(run_dir / "omega_true.csv")
    records = [load_replication(spec, run_dir / "replications" / rep_dir_name(r))
               for r in range(spec.replications)]
    return summarize(spec, omega, records)
