"""Command-line entry points.

Thin adapters only: every subcommand parses arguments, calls the library,
and serializes the result.  No numerical logic lives here, which is what
lets the test suite assert that CLI output equals direct library calls.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible,
4 numerical failure.  The default seed is a fixed constant rather than
wall-clock entropy, so bare invocations are reproducible.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .criterion import (
    CriterionEvaluator,
    concavity_probe,
    evaluate,
    k_matrix,
    pip,
    quadform_correlation,
    robustness_scatter,
    surrogate_gap_diagnostics,
)
from .designs import Design
from .errors import (
    DataError,
    DegenerateDesignError,
    EigenSolverError,
    GraphFormatError,
    InfeasibleError,
    NetdesignError,
    NotPositiveDefiniteError,
    RankError,
    StudySpecError,
)
from .experiments import (
    DEFAULT_SEED,
    bundled_study_path,
    derive_seed,
    load_study_spec,
    run_study,
)
from .graph import (
    generate_bernoulli_network,
    generate_pm1_covariates,
    load_covariates,
    load_edge_list,
    write_covariates,
    write_edge_list,
)
from .optimizer import hybrid_problem, random_iid_design, solve

_DATA_ERRORS = (GraphFormatError, DataError, StudySpecError, RankError,
                DegenerateDesignError)
_NUMERICAL_ERRORS = (NotPositiveDefiniteError, EigenSolverError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; remap to the documented 1
    def error(self, message):
        raise _UsageError(message)


def _float_list(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _emit(columns, rows, args) -> None:
    """Rows to --output or stdout, as CSV (canonical) or a JSON document."""
    if args.format == "json":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
        text = buf.getvalue()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "|".join(str(item) for item in v)
    return str(v)


def _load_pair(args):
    net = load_edge_list(args.edges)
    cov = load_covariates(
        args.covariates, keep_first=args.keep_first, header=args.header
    )
    if cov.n != net.n:
        raise DataError(
            f"covariate rows ({cov.n}) do not match network nodes ({net.n})"
        )
    return net, cov


def cmd_generate(args) -> int:
    net = generate_bernoulli_network(args.n, args.density, seed=args.seed)
    cov = generate_pm1_covariates(args.n, args.p, seed=derive_seed(args.seed, 1))
    edges_path = f"{args.out_prefix}_edges.txt"
    cov_path = f"{args.out_prefix}_covariates.csv"
    write_edge_list(net, edges_path)
    write_covariates(cov.values[:, 1:], cov_path)
    print(f"wrote {edges_path} ({net.n} nodes, {len(net.edges)} edges) "
          f"and {cov_path} ({args.p} columns)")
    return 0


def cmd_design(args) -> int:
    net, cov = _load_pair(args)
    problem = hybrid_problem(net, cov, args.rho0, args.alpha)
    kwargs = {"method": args.method, "seed": args.seed, "relax": not args.no_relax}
    if args.restarts is not None:
        kwargs["restarts"] = args.restarts
    report = solve(problem, **kwargs)
    record = report.to_record()
    _emit(tuple(record), [record], args)
    if not report.feasible:
        print("no feasible design under the requested cap", file=sys.stderr)
        return 3
    if args.design_out:
        Path(args.design_out).write_text(report.design.to_lines())
    return 0


EVALUATE_COLUMNS = ("rho_t", "precision", "network_term", "imbalance_term", "pip")


def cmd_evaluate(args) -> int:
    net, cov = _load_pair(args)
    design = Design.from_lines(Path(args.design).read_text())
    if design.n != net.n:
        raise DataError(
            f"design length ({design.n}) does not match network nodes ({net.n})"
        )
    rows = []
    for rho_t in args.rho_t:
        br = evaluate(net, cov, design.x, rho_t)
        rows.append({
            "rho_t": rho_t,
            "precision": br.precision,
            "network_term": br.network_term,
            "imbalance_term": br.imbalance_term,
            "pip": pip(net, cov, design.x, rho_t),
        })
    _emit(EVALUATE_COLUMNS, rows, args)
    return 0


DIAGNOSE_COLUMNS = ("check", "index", "rho", "value", "exact", "bound_a", "bound_b")


def cmd_diagnose(args) -> int:
    net, cov = _load_pair(args)
    rows = []
    k0 = k_matrix(net, cov, args.rho0)
    for rho in args.rho_grid:
        if rho == args.rho0:
            continue
        sc = robustness_scatter(
            net, cov, args.rho0, rho, args.scatter_designs, derive_seed(args.seed, 0)
        )
        rows.append({
            "check": "correlation", "rho": rho,
            "value": float(sc.sample_correlation),
            "exact": float(quadform_correlation(k0, k_matrix(net, cov, rho))),
        })
    grid = np.round(np.arange(0.05, 0.951, 0.01), 10)
    for idx in range(args.designs):
        x = random_iid_design(net.n, derive_seed(args.seed, 1, idx)).x
        rhos = np.random.default_rng(derive_seed(args.seed, 2, idx)).uniform(
            0.0, 1.0, args.prior_draws
        )
        diag = surrogate_gap_diagnostics(net, cov, x, float(rhos.mean()), rhos)
        rows.append({
            "check": "gap", "index": idx, "value": float(diag.gap_estimate),
            "bound_a": float(diag.bound_a), "bound_b": float(diag.bound_b),
        })
        if idx < 5:
            rows.append({
                "check": "concavity", "index": idx,
                "value": float(concavity_probe(net, cov, x, grid).max()),
            })
    _emit(DIAGNOSE_COLUMNS, rows, args)
    return 0


def cmd_study(args) -> int:
    path = Path(args.spec)
    if not path.exists():
        path = bundled_study_path(args.spec)
    spec = load_study_spec(path, full=args.full)
    result = run_study(spec, threads=args.threads)
    out = Path(args.output) if args.output else Path(f"{spec.name}.csv")
    if args.format == "json":
        out = out.with_suffix(".json") if out.suffix == ".csv" else out
        doc = {"meta": result.meta, "rows": result.rows}
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        result.write(out)
    print(f"wrote {len(result.rows)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"master seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for studies")
    common.add_argument("--output", help="write result here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="result serialization (csv is canonical)")

    files = argparse.ArgumentParser(add_help=False)
    files.add_argument("edges", help="edge list file")
    files.add_argument("covariates", help="covariate CSV (no intercept column)")
    files.add_argument("--keep-first", type=int, default=None,
                       help="use only the first k covariate columns")
    files.add_argument("--header", action="store_true",
                       help="covariate file has a header line to skip")

    parser = _Parser(prog="netdesign",
                     description="network-aware treatment assignment")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="write a synthetic edge list and covariate file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--density", type=float, required=True)
    p.add_argument("--out-prefix", default="network")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("design", parents=[common, files],
                       help="solve for a treatment assignment")
    p.add_argument("--rho0", type=float, default=0.5,
                   help="working correlation (default 0.5)")
    p.add_argument("--alpha", type=float, default=0.001,
                   help="cap quantile level (default 0.001)")
    p.add_argument("--method", default="auto",
                   choices=("auto", "exact", "local", "annealing"))
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--no-relax", action="store_true",
                   help="fail instead of walking the cap relaxation ladder")
    p.add_argument("--design-out", help="also write the assignment, one sign per line")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", parents=[common, files],
                       help="criterion breakdown and improvement of a design")
    p.add_argument("design", help="design file, one +1/-1 per line")
    p.add_argument("--rho-t", type=_float_list, default=[0.5],
                   help="comma-separated evaluation correlations")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", parents=[common, files],
                       help="robustness, prior-gap and concavity checks")
    p.add_argument("--rho0", type=float, default=0.5)
    p.add_argument("--rho-grid", type=_float_list,
                   default=[0.1, 0.3, 0.5, 0.7, 0.9])
    p.add_argument("--designs", type=int, default=20,
                   help="random designs for the gap check")
    p.add_argument("--scatter-designs", type=int, default=200)
    p.add_argument("--prior-draws", type=int, default=200)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("study", parents=[common],
                       help="run a scripted study from a YAML spec")
    p.add_argument("spec", help="spec file path or bundled study name")
    p.add_argument("--full", action="store_true",
                   help="restore the large-scale study defaults")
    p.set_defaults(func=cmd_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    try:
        return args.func(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    except NetdesignError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
