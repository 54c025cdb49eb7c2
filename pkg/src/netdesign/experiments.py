"""Scripted evaluation studies over synthetic or loaded networks.

Each study is described by a small YAML mapping (kind plus overrides),
expanded against per-kind defaults, and run to a long-format table: one
row per factor-level combination and replicate, every row carrying the
derived seeds that regenerate it in isolation.  Results serialize to a
CSV with a fixed header plus a JSON metadata sidecar echoing the resolved
spec; nothing in the output depends on the clock, so identical specs give
byte-identical files.

Two scales exist per kind: the default desk scale finishes in minutes,
while full=True restores the larger sizes the desk numbers were shrunk
from.  An explicit key in the spec file always wins over either scale.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import yaml

from .car import (
    HeteroCarParams,
    factor_precision,
    fit_profile_ml,
    network_spectrum,
    sample_noise,
)
from .criterion import evaluate, expected_breakdown, pip, surrogate_gap_diagnostics
from .errors import NetdesignError, StudySpecError
from .graph import (
    CovariateMatrix,
    generate_bernoulli_network,
    generate_pm1_covariates,
    load_covariates,
    load_edge_list,
    repair_isolated,
    subsample_network,
)
from .optimizer import (
    hybrid_problem,
    random_balanced_design,
    random_iid_design,
    solve,
    solve_no_network,
)

__all__ = [
    "DEFAULT_SEED",
    "STUDY_KINDS",
    "StudySpec",
    "StudyResult",
    "study_defaults",
    "study_spec_from_dict",
    "load_study_spec",
    "bundled_study_path",
    "list_bundled_studies",
    "derive_seed",
    "synth_dataset",
    "run_study",
    "run_alpha_sweep",
    "run_rho_robustness",
    "run_network_comparison",
    "run_pseudo_experiment",
    "run_gap_histogram",
]

DEFAULT_SEED = 1729

_DESK = {
    "alpha_sweep": {
        "n": 50,
        "p": 10,
        "density": 0.08,
        "rho0": 0.5,
        "alphas": (0.1, 0.01, 0.001, 0.0001),
        "rho_ts": (0.1, 0.3, 0.5, 0.7, 0.9),
        "replicates": 10,
        "restarts": 16,
        "method": "auto",
    },
    "rho_robustness": {
        "n": 50,
        "p": 5,
        "density": 0.08,
        "rho0": 0.5,
        "alpha": 0.001,
        "rho_ts": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
        "replicates": 10,
        "restarts": 16,
        "method": "auto",
    },
    "network_vs_no_network": {
        "n": 50,
        "p": 10,
        "density": 0.08,
        "rho0": 0.5,
        "alpha": 0.001,
        "rho_ts": (0.1, 0.3, 0.5, 0.7, 0.9),
        "replicates": 10,
        "restarts": 16,
        "method": "auto",
    },
    "size_sweep": {
        "n_grid": (50, 100, 200),
        "p": 10,
        "density": 0.02,
        "rho0": 0.5,
        "alpha": 0.001,
        "rho_ts": (0.1, 0.3, 0.5, 0.7, 0.9),
        "replicates": 10,
        "restarts": 16,
        "method": "auto",
    },
    "pseudo_experiment": {
        "n_base": 400,
        "density": 0.02,
        "p": 5,
        "subsample": 210,
        "replicates": 10,
        "draws": 50,
        "rho0": 0.75,
        "rho_lo": 0.5,
        "rho_hi": 1.0,
        "alpha": 1e-16,
        "restarts": 8,
        "method": "auto",
        "theta": 1.0,
        "sigma2": 1.0,
        "edges_path": None,
        "covariates_path": None,
        "covariates_header": False,
        "keep_first": None,
    },
    "gap_histogram": {
        "n": 50,
        "density": 0.25,
        "covariate_sd": 10.0,
        "designs": 400,
        "rho_draws": 200,
        "alpha_bound": 0.05,
    },
}

_FULL = {
    "alpha_sweep": {"n": 100, "restarts": 32},
    "rho_robustness": {"n": 100, "p": 10, "restarts": 32},
    "network_vs_no_network": {"n": 100, "restarts": 32},
    "size_sweep": {"n_grid": (50, 100, 500, 1000), "restarts": 32},
    "pseudo_experiment": {
        "n_base": 4000,
        "density": 0.002,
        "subsample": 2000,
        "replicates": 25,
        "draws": 100,
        "restarts": 16,
    },
    "gap_histogram": {},
}

STUDY_KINDS = tuple(sorted(_DESK))


@dataclass(frozen=True)
class StudySpec:
    """Resolved study description: kind, master seed and all parameters."""

    kind: str
    seed: int
    name: str
    params: dict
    full: bool = False
    output: str | None = None


def study_defaults(kind: str, full: bool = False) -> dict:
    if kind not in _DESK:
        raise StudySpecError(
            f"unknown study kind {kind!r}; expected one of {', '.join(STUDY_KINDS)}"
        )
    params = dict(_DESK[kind])
    if full:
        params.update(_FULL[kind])
    return params


def _check_number(params, key, lo=None, hi=None, integer=False):
    v = params[key]
    if v is None:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise StudySpecError(f"key '{key}' must be a number, got {v!r}")
    if integer and int(v) != v:
        raise StudySpecError(f"key '{key}' must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise StudySpecError(f"key '{key}' must be >= {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise StudySpecError(f"key '{key}' must be <= {hi}, got {v!r}")


def _check_grid(params, key, lo=None, hi=None):
    v = params[key]
    if not isinstance(v, (list, tuple)) or len(v) == 0:
        raise StudySpecError(f"key '{key}' must be a non-empty list, got {v!r}")
    for item in v:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise StudySpecError(f"key '{key}' contains a non-number: {item!r}")
        if lo is not None and item < lo:
            raise StudySpecError(f"key '{key}' entries must be >= {lo}, got {item!r}")
        if hi is not None and item > hi:
            raise StudySpecError(f"key '{key}' entries must be <= {hi}, got {item!r}")
    params[key] = tuple(float(item) for item in v)


def _validate_params(kind: str, params: dict) -> None:
    if "replicates" in params:
        _check_number(params, "replicates", lo=1, integer=True)
    if "density" in params:
        _check_number(params, "density", lo=0.0, hi=1.0)
    if "rho0" in params:
        _check_number(params, "rho0", lo=0.0)
        if params["rho0"] >= 1.0:
            raise StudySpecError(f"key 'rho0' must be < 1, got {params['rho0']!r}")
    for key in ("n", "p", "n_base", "subsample", "draws", "restarts", "designs",
                "rho_draws", "keep_first"):
        if key in params:
            _check_number(params, key, lo=0, integer=True)
    if "alpha" in params:
        _check_number(params, "alpha", lo=0.0, hi=1.0)
    if "alpha_bound" in params:
        _check_number(params, "alpha_bound", lo=0.0, hi=1.0)
    if "rho_ts" in params:
        _check_grid(params, "rho_ts", lo=0.0)
        if max(params["rho_ts"]) >= 1.0:
            raise StudySpecError("key 'rho_ts' entries must be < 1")
    if "alphas" in params:
        _check_grid(params, "alphas", lo=0.0, hi=1.0)
    if "n_grid" in params:
        _check_grid(params, "n_grid", lo=4)
        params["n_grid"] = tuple(int(v) for v in params["n_grid"])
    if kind == "pseudo_experiment":
        has_edges = params.get("edges_path") is not None
        has_cov = params.get("covariates_path") is not None
        if has_edges != has_cov:
            raise StudySpecError(
                "keys 'edges_path' and 'covariates_path' must be given together"
            )
        _check_number(params, "rho_lo", lo=0.0, hi=1.0)
        _check_number(params, "rho_hi", lo=0.0, hi=1.0)
        if params["rho_lo"] >= params["rho_hi"]:
            raise StudySpecError("key 'rho_lo' must be below 'rho_hi'")


def study_spec_from_dict(raw: dict, full: bool = False) -> StudySpec:
    """Expand a raw mapping against the kind's defaults and validate it."""
    if not isinstance(raw, dict):
        raise StudySpecError(f"study spec must be a mapping, got {type(raw).__name__}")
    if "kind" not in raw:
        raise StudySpecError("missing required key 'kind'")
    kind = raw["kind"]
    full = bool(raw.get("full", full))
    params = study_defaults(kind, full)
    reserved = {"kind", "name", "seed", "output", "full"}
    for key, value in raw.items():
        if key in reserved:
            continue
        if key not in params:
            raise StudySpecError(f"unknown key '{key}' for study kind '{kind}'")
        params[key] = tuple(value) if isinstance(value, list) else value
    _validate_params(kind, params)
    seed = raw.get("seed", DEFAULT_SEED)
    _check_number({"seed": seed}, "seed", lo=0, integer=True)
    name = raw.get("name", kind)
    if not isinstance(name, str):
        raise StudySpecError(f"key 'name' must be a string, got {name!r}")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise StudySpecError(f"key 'output' must be a string, got {output!r}")
    return StudySpec(
        kind=kind, seed=int(seed), name=name, params=params, full=full, output=output
    )


def load_study_spec(path, full: bool = False) -> StudySpec:
    """Read a YAML study spec from disk."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise StudySpecError(f"cannot read study spec {path}: {e}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise StudySpecError(f"{path}: not valid YAML: {e}") from None
    if raw is None:
        raise StudySpecError(f"{path}: empty study spec")
    return study_spec_from_dict(raw, full=full)


def bundled_study_path(name: str) -> Path:
    """Path of a study spec shipped inside the package."""
    base = resources.files("netdesign").joinpath("studies")
    candidate = base.joinpath(f"{name}.yaml")
    if not candidate.is_file():
        known = ", ".join(list_bundled_studies()) or "none"
        raise StudySpecError(f"no bundled study named {name!r}; available: {known}")
    return Path(str(candidate))


def list_bundled_studies() -> list:
    base = resources.files("netdesign").joinpath("studies")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".yaml"))


# ---------------------------------------------------------------------------
# Seeds and shared dataset construction.


def derive_seed(master: int, *indices: int) -> int:
    """Stable child seed for a cell of the study grid.

    The trailing length word keeps index tuples with trailing zeros from
    colliding (SeedSequence pads its entropy with zeros)."""
    words = (int(master),) + tuple(int(i) for i in indices) + (len(indices),)
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])


def synth_dataset(n: int, p: int, density: float, seed: int):
    """One synthetic replicate: Bernoulli network (isolation repaired by
    connecting), iid sign covariates.  Everything derives from one seed so
    a row's dataset_seed regenerates its inputs exactly."""
    net = generate_bernoulli_network(n, density, seed=derive_seed(seed, 1))
    net = repair_isolated(net, "connect", seed=derive_seed(seed, 2)).network
    cov = generate_pm1_covariates(n, p, seed=derive_seed(seed, 3))
    return net, cov


# ---------------------------------------------------------------------------
# Result container.


@dataclass(frozen=True)
class StudyResult:
    """Long-format rows plus the metadata needed to audit them."""

    kind: str
    columns: tuple
    rows: list
    meta: dict

    def write(self, path) -> Path:
        """CSV table at `path`; JSON sidecar at `path` + '.meta.json'."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_format_cell(row.get(c)) for c in self.columns])
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")
        return path


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        # numpy scalars subclass float but repr as np.float64(...)
        return repr(float(v))
    return str(v)


def _meta(spec: StudySpec, columns, rows) -> dict:
    try:
        version = metadata.version("netdesign")
    except metadata.PackageNotFoundError:
        version = "unknown"
    params = {
        k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.params.items()
    }
    return {
        "kind": spec.kind,
        "name": spec.name,
        "master_seed": spec.seed,
        "full_scale": spec.full,
        "params": params,
        "columns": list(columns),
        "row_count": len(rows),
        "version": version,
    }


def _run_cells(fn, cells, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(fn, cells))
    else:
        chunks = [fn(c) for c in cells]
    rows = []
    for chunk in chunks:
        rows.extend(chunk)
    return rows


def run_study(spec: StudySpec, threads: int = 1) -> StudyResult:
    runner = {
        "alpha_sweep": run_alpha_sweep,
        "rho_robustness": run_rho_robustness,
        "network_vs_no_network": run_network_comparison,
        "size_sweep": run_network_comparison,
        "pseudo_experiment": run_pseudo_experiment,
        "gap_histogram": run_gap_histogram,
    }[spec.kind]
    return runner(spec, threads=threads)


# ---------------------------------------------------------------------------
# Alpha sensitivity sweep.

ALPHA_SWEEP_COLUMNS = (
    "replicate", "n", "p", "density", "rho0", "alpha_requested", "alpha_used",
    "relaxations", "rho_t", "pip", "precision", "network_term", "imbalance_term",
    "objective", "constraint_value", "solver_method", "solver_iterations",
    "dataset_seed", "solver_seed", "status",
)


def run_alpha_sweep(spec: StudySpec, threads: int = 1) -> StudyResult:
    """Design at rho0 under each cap level; record criterion and precision
    improvement at every evaluation correlation."""
    P = spec.params

    def cell(rep: int):
        dataset_seed = derive_seed(spec.seed, 0, rep)
        net, cov = synth_dataset(P["n"], P["p"], P["density"], dataset_seed)
        out = []
        for ai, alpha in enumerate(P["alphas"]):
            solver_seed = derive_seed(spec.seed, 1, rep, ai)
            base = {
                "replicate": rep, "n": P["n"], "p": P["p"], "density": P["density"],
                "rho0": P["rho0"], "alpha_requested": alpha,
                "dataset_seed": dataset_seed, "solver_seed": solver_seed,
            }
            try:
                prob = hybrid_problem(net, cov, P["rho0"], alpha)
                report = solve(
                    prob, method=P["method"], seed=solver_seed, restarts=P["restarts"]
                )
            except NetdesignError as e:
                out.extend(
                    {**base, "rho_t": rho_t, "status": type(e).__name__}
                    for rho_t in P["rho_ts"]
                )
                continue
            if not report.feasible:
                out.extend(
                    {**base, "rho_t": rho_t, "status": "infeasible"}
                    for rho_t in P["rho_ts"]
                )
                continue
            x = report.design.x
            solved = {
                **base,
                "alpha_used": report.alpha,
                "relaxations": "|".join(str(a) for a in report.relaxations_applied),
                "objective": report.objective,
                "constraint_value": report.constraint_value,
                "solver_method": report.method,
                "solver_iterations": report.iterations,
            }
            for rho_t in P["rho_ts"]:
                try:
                    br = evaluate(net, cov, x, rho_t)
                    out.append({
                        **solved, "rho_t": rho_t, "pip": pip(net, cov, x, rho_t),
                        "precision": br.precision, "network_term": br.network_term,
                        "imbalance_term": br.imbalance_term, "status": "ok",
                    })
                except NetdesignError as e:
                    out.append({**solved, "rho_t": rho_t, "status": type(e).__name__})
        return out

    rows = _run_cells(cell, range(P["replicates"]), threads)
    return StudyResult(spec.kind, ALPHA_SWEEP_COLUMNS, rows, _meta(spec, ALPHA_SWEEP_COLUMNS, rows))


# ---------------------------------------------------------------------------
# Robustness to the assumed correlation.

RHO_ROBUSTNESS_COLUMNS = (
    "replicate", "n", "p", "density", "alpha", "rho0", "rho_t",
    "pip_local", "pip_true", "pip_difference",
    "dataset_seed", "solver_seed", "status",
)


def run_rho_robustness(spec: StudySpec, threads: int = 1) -> StudyResult:
    """Compare the design solved at rho0 with one solved at each true
    correlation, both scored at the true correlation.  The same solver
    seed is reused across the grid so the rho_t == rho0 cell is an exact
    self-comparison with difference zero."""
    P = spec.params

    def cell(rep: int):
        dataset_seed = derive_seed(spec.seed, 0, rep)
        solver_seed = derive_seed(spec.seed, 1, rep)
        net, cov = synth_dataset(P["n"], P["p"], P["density"], dataset_seed)
        base = {
            "replicate": rep, "n": P["n"], "p": P["p"], "density": P["density"],
            "alpha": P["alpha"], "rho0": P["rho0"],
            "dataset_seed": dataset_seed, "solver_seed": solver_seed,
        }
        out = []
        try:
            prob0 = hybrid_problem(net, cov, P["rho0"], P["alpha"])
            local = solve(
                prob0, method=P["method"], seed=solver_seed, restarts=P["restarts"]
            )
            if not local.feasible:
                raise NetdesignError("reference solve infeasible")
        except NetdesignError as e:
            return [
                {**base, "rho_t": rho_t, "status": type(e).__name__}
                for rho_t in P["rho_ts"]
            ]
        for rho_t in P["rho_ts"]:
            try:
                prob_t = hybrid_problem(net, cov, rho_t, P["alpha"])
                true = solve(
                    prob_t, method=P["method"], seed=solver_seed, restarts=P["restarts"]
                )
                if not true.feasible:
                    out.append({**base, "rho_t": rho_t, "status": "infeasible"})
                    continue
                pip_local = pip(net, cov, local.design.x, rho_t)
                pip_true = pip(net, cov, true.design.x, rho_t)
                out.append({
                    **base, "rho_t": rho_t, "pip_local": pip_local,
                    "pip_true": pip_true, "pip_difference": pip_true - pip_local,
                    "status": "ok",
                })
            except NetdesignError as e:
                out.append({**base, "rho_t": rho_t, "status": type(e).__name__})
        return out

    rows = _run_cells(cell, range(P["replicates"]), threads)
    return StudyResult(
        spec.kind, RHO_ROBUSTNESS_COLUMNS, rows, _meta(spec, RHO_ROBUSTNESS_COLUMNS, rows)
    )


# ---------------------------------------------------------------------------
# With-network versus covariate-only designs (single n or a size grid).

NETWORK_COMPARISON_COLUMNS = (
    "replicate", "n", "p", "density", "rho0", "alpha", "method_kind", "rho_t",
    "pip", "precision", "network_term", "imbalance_term",
    "expected_network_term", "expected_imbalance_term",
    "t1_improvement", "t2_improvement", "solver_iterations",
    "dataset_seed", "solver_seed", "status",
)


def run_network_comparison(spec: StudySpec, threads: int = 1) -> StudyResult:
    """Hybrid design versus the covariate-only design on shared datasets.

    Improvements are measured against the exact random-balanced-design
    expectations of the two criterion terms at the evaluation correlation:
    positive improvement means less precision lost than a random design
    loses on average."""
    P = spec.params
    n_grid = P.get("n_grid") or (P["n"],)
    cells = [(rep, ni) for rep in range(P["replicates"]) for ni in range(len(n_grid))]

    def cell(args):
        rep, ni = args
        n = n_grid[ni]
        dataset_seed = derive_seed(spec.seed, 0, rep, ni)
        net, cov = synth_dataset(n, P["p"], P["density"], dataset_seed)
        out = []
        for kindname, ki in (("network", 0), ("no_network", 1)):
            solver_seed = derive_seed(spec.seed, 1, rep, ni, ki)
            base = {
                "replicate": rep, "n": n, "p": P["p"], "density": P["density"],
                "rho0": P["rho0"], "alpha": P["alpha"], "method_kind": kindname,
                "dataset_seed": dataset_seed, "solver_seed": solver_seed,
            }
            try:
                if kindname == "network":
                    prob = hybrid_problem(net, cov, P["rho0"], P["alpha"])
                    report = solve(
                        prob, method=P["method"], seed=solver_seed,
                        restarts=P["restarts"],
                    )
                else:
                    report = solve_no_network(
                        cov, method=P["method"], seed=solver_seed,
                        restarts=P["restarts"],
                    )
            except NetdesignError as e:
                out.extend(
                    {**base, "rho_t": rho_t, "status": type(e).__name__}
                    for rho_t in P["rho_ts"]
                )
                continue
            if not report.feasible:
                out.extend(
                    {**base, "rho_t": rho_t, "status": "infeasible"}
                    for rho_t in P["rho_ts"]
                )
                continue
            x = report.design.x
            for rho_t in P["rho_ts"]:
                try:
                    br = evaluate(net, cov, x, rho_t)
                    exp = expected_breakdown(net, cov, rho_t)
                    out.append({
                        **base, "rho_t": rho_t, "pip": pip(net, cov, x, rho_t),
                        "precision": br.precision,
                        "network_term": br.network_term,
                        "imbalance_term": br.imbalance_term,
                        "expected_network_term": exp.network_term,
                        "expected_imbalance_term": exp.imbalance_term,
                        "t1_improvement": exp.network_term - br.network_term,
                        "t2_improvement": exp.imbalance_term - br.imbalance_term,
                        "solver_iterations": report.iterations,
                        "status": "ok",
                    })
                except NetdesignError as e:
                    out.append({**base, "rho_t": rho_t, "status": type(e).__name__})
        return out

    rows = _run_cells(cell, cells, threads)
    return StudyResult(
        spec.kind,
        NETWORK_COMPARISON_COLUMNS,
        rows,
        _meta(spec, NETWORK_COMPARISON_COLUMNS, rows),
    )


# ---------------------------------------------------------------------------
# Pseudo experiment: simulate outcomes, fit, rank MSEs.

PSEUDO_EXPERIMENT_COLUMNS = (
    "replicate", "n_kept", "p", "design_kind", "design_index", "mse", "percentile",
    "fit_failures", "draws", "rho0", "alpha",
    "dataset_seed", "solver_seed", "design_seed", "rho_seed", "status",
)


def _covariates_from_rows(values: np.ndarray):
    """Drop constant columns that subsampling can create, then rebuild."""
    keep = [j for j in range(values.shape[1]) if np.ptp(values[:, j]) > 0.0]
    return CovariateMatrix.from_raw(values[:, keep]), values.shape[1] - len(keep)


def _mse_percentile(opt_mse: float, random_mses) -> float:
    below = sum(1 for r in random_mses if r < opt_mse)
    ties = sum(1 for r in random_mses if r == opt_mse)
    return (below + 0.5 * ties) / len(random_mses)


def run_pseudo_experiment(spec: StudySpec, threads: int = 1) -> StudyResult:
    """Outcome-level comparison on subsampled networks.

    Per replicate: subsample the base network, drop isolated nodes, solve
    the hybrid and covariate-only designs, draw ten random balanced
    designs, then simulate outcomes from the heterogeneous-correlation
    model (rho_i uniform, drawn once per replicate) and fit the
    single-correlation model by profile likelihood.  The same noise field
    is shared by all twelve designs within a draw, so MSE differences
    reflect the designs, not the noise.  Each optimal design's MSE is
    ranked inside the ten random-design MSEs."""
    P = spec.params
    if P["edges_path"] is not None:
        base_net = load_edge_list(P["edges_path"])
        base_cov = load_covariates(
            P["covariates_path"],
            keep_first=P["keep_first"],
            header=P["covariates_header"],
        )
        if base_cov.n != base_net.n:
            raise NetdesignError(
                f"covariate rows ({base_cov.n}) do not match nodes ({base_net.n})"
            )
    else:
        base_net = generate_bernoulli_network(
            P["n_base"], P["density"], seed=derive_seed(spec.seed, 0, 0)
        )
        base_cov = generate_pm1_covariates(
            P["n_base"], P["p"], seed=derive_seed(spec.seed, 0, 1)
        )

    n_random = 10

    def cell(rep: int):
        dataset_seed = derive_seed(spec.seed, 1, rep)
        solver_seed = derive_seed(spec.seed, 2, rep)
        rho_seed = derive_seed(spec.seed, 4, rep)
        base = {
            "replicate": rep, "p": P["p"], "draws": P["draws"], "rho0": P["rho0"],
            "alpha": P["alpha"], "dataset_seed": dataset_seed,
            "solver_seed": solver_seed, "rho_seed": rho_seed,
        }
        try:
            sub_net, sub_cov = subsample_network(
                base_net, base_cov, P["subsample"], dataset_seed
            )
            rr = repair_isolated(sub_net, "remove")
            net = rr.network
            cov, _ = _covariates_from_rows(sub_cov.values[rr.kept][:, 1:])
            if net.n < 4 * n_random:
                raise NetdesignError(f"only {net.n} nodes left after repair")
            prob = hybrid_problem(net, cov, P["rho0"], P["alpha"])
            hybrid = solve(
                prob, method=P["method"],
                seed=derive_seed(spec.seed, 2, rep, 0), restarts=P["restarts"],
            )
            nonet = solve_no_network(
                cov, method=P["method"],
                seed=derive_seed(spec.seed, 2, rep, 1), restarts=P["restarts"],
            )
            if not (hybrid.feasible and nonet.feasible):
                raise NetdesignError("design solve infeasible")
        except NetdesignError as e:
            return [{**base, "design_kind": kind, "status": type(e).__name__}
                    for kind in ("hybrid", "no_network")]

        design_seeds = [derive_seed(spec.seed, 3, rep, j) for j in range(n_random)]
        designs = (
            [("hybrid", None, hybrid.design.x, None),
             ("no_network", None, nonet.design.x, None)]
            + [
                ("random", j, random_balanced_design(net.n, design_seeds[j]).x,
                 design_seeds[j])
                for j in range(n_random)
            ]
        )

        rho_vec = np.random.default_rng(rho_seed).uniform(
            P["rho_lo"], P["rho_hi"], net.n
        )
        params = HeteroCarParams(rho=rho_vec, sigma2=P["sigma2"], theta=P["theta"])
        factor = factor_precision(net, params)
        spectrum = network_spectrum(net)

        sq_err = np.zeros(len(designs))
        failures = np.zeros(len(designs), dtype=int)
        for d in range(P["draws"]):
            delta = sample_noise(factor, P["sigma2"], derive_seed(spec.seed, 5, rep, d))
            for k, (_, _, x, _) in enumerate(designs):
                y = P["theta"] * x + delta
                try:
                    fit = fit_profile_ml(net, cov, x, y, spectrum=spectrum)
                    sq_err[k] += (fit.theta_hat - P["theta"]) ** 2
                except NetdesignError:
                    failures[k] += 1
        successes = P["draws"] - failures
        mses = [
            float(sq_err[k] / successes[k]) if successes[k] > 0 else None
            for k in range(len(designs))
        ]
        random_mses = [m for kind_m, m in zip(designs, mses) if kind_m[0] == "random"
                       and m is not None]
        out = []
        for k, (kindname, idx, _, dseed) in enumerate(designs):
            row = {
                **base, "n_kept": net.n, "design_kind": kindname,
                "design_index": idx, "mse": mses[k],
                "fit_failures": int(failures[k]), "design_seed": dseed,
                "status": "ok" if mses[k] is not None else "fit_failed",
            }
            if kindname in ("hybrid", "no_network") and mses[k] is not None and random_mses:
                row["percentile"] = _mse_percentile(mses[k], random_mses)
            out.append(row)
        return out

    rows = _run_cells(cell, range(P["replicates"]), threads)
    return StudyResult(
        spec.kind,
        PSEUDO_EXPERIMENT_COLUMNS,
        rows,
        _meta(spec, PSEUDO_EXPERIMENT_COLUMNS, rows),
    )


# ---------------------------------------------------------------------------
# Surrogate-gap histogram.

GAP_HISTOGRAM_COLUMNS = (
    "design_index", "n", "density", "t_at_rho0", "gap", "second_derivative_term",
    "rho_mean", "rho_var", "bound_a", "bound_b", "alpha_bound",
    "design_seed", "rho_seed", "status",
)


def run_gap_histogram(spec: StudySpec, threads: int = 1) -> StudyResult:
    """Sample completely randomized designs on one dense network and record
    the surrogate criterion, the prior-averaging gap, and its bounds.

    The reference correlation for each design is the mean of its own prior
    draws, which makes the concavity argument exact: every recorded gap is
    nonnegative up to roundoff."""
    P = spec.params
    net = generate_bernoulli_network(
        P["n"], P["density"], seed=derive_seed(spec.seed, 0, 0)
    )
    net = repair_isolated(net, "connect", seed=derive_seed(spec.seed, 0, 1)).network
    z = np.random.default_rng(derive_seed(spec.seed, 0, 2)).normal(
        0.0, P["covariate_sd"], size=(P["n"], 1)
    )
    cov = CovariateMatrix.from_raw(z)

    def cell(li: int):
        design_seed = derive_seed(spec.seed, 1, li)
        rho_seed = derive_seed(spec.seed, 2, li)
        base = {
            "design_index": li, "n": P["n"], "density": P["density"],
            "alpha_bound": P["alpha_bound"],
            "design_seed": design_seed, "rho_seed": rho_seed,
        }
        try:
            x = random_iid_design(P["n"], design_seed).x
            rhos = np.random.default_rng(rho_seed).uniform(0.0, 1.0, P["rho_draws"])
            rho0 = float(rhos.mean())
            diag = surrogate_gap_diagnostics(
                net, cov, x, rho0, rhos, alpha=P["alpha_bound"]
            )
            t0 = evaluate(net, cov, x, rho0).precision
            return [{
                **base, "t_at_rho0": float(t0), "gap": float(diag.gap_estimate),
                "second_derivative_term": float(diag.second_derivative_term),
                "rho_mean": rho0, "rho_var": float(diag.var_rho),
                "bound_a": float(diag.bound_a), "bound_b": float(diag.bound_b),
                "status": "ok",
            }]
        except NetdesignError as e:
            return [{**base, "status": type(e).__name__}]

    rows = _run_cells(cell, range(P["designs"]), threads)
    return StudyResult(
        spec.kind, GAP_HISTOGRAM_COLUMNS, rows, _meta(spec, GAP_HISTOGRAM_COLUMNS, rows)
    )
