"""Command-line interface: fit estimators on CSV data, run simulation
studies, and re-summarize persisted per-replicate estimates.

Exit codes: 0 success, 1 input/usage error, 2 completed with a quality
problem (non-convergence, or more than 5% failed replicates).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import dataset, estimator, simulate

SCHEMA_VERSION = "1"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str | None):
    if not text:
        return None
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# fit

def _build_config(args) -> estimator.EstimatorConfig:
    ps_terms = _csv_list(args.ps)
    if ps_terms is not None and args.interactions:
        ps_terms = ps_terms + tuple(
            f"A:{x}" for x in _csv_list(args.interactions)
        )
    kwargs = dict(
        kind=args.estimator,
        correlation=args.corstr,
        weight_placement=args.placement,
        ps_spec=dataset.ModelSpec(terms=ps_terms) if ps_terms is not None else None,
        om_spec0=dataset.ModelSpec(terms=_csv_list(args.om0)) if args.om0 else None,
        om_spec1=dataset.ModelSpec(terms=_csv_list(args.om1)) if args.om1 else None,
        stepwise_ps=_csv_list(args.stepwise_ps),
        stepwise_om=_csv_list(args.stepwise_om),
        fay_q=args.fay_q,
        pi_floor=args.pi_floor,
        truncation=args.truncate,
    )
    if args.p_treat is not None:
        kwargs["p_treat_override"] = args.p_treat
    try:
        return estimator.EstimatorConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_fit(args) -> int:
    config = _build_config(args)
    data = dataset.load_csv(
        args.data,
        cluster=args.cluster,
        arm=args.arm,
        outcome=args.outcome,
        covariates=list(_csv_list(args.covariates)) if args.covariates else None,
    )
    if args.cluster_means:
        data = dataset.append_cluster_means(data, _csv_list(args.cluster_means))
    fit = estimator.solve(data, config)
    report = {
        "schema_version": SCHEMA_VERSION,
        "error": None,
        "estimator": config.kind,
        "correlation": config.correlation,
        "weight_placement": config.weight_placement,
        "beta": {"intercept": fit.beta[0], "treatment": fit.beta[1]},
        "alpha": fit.alpha,
        "phi": fit.phi,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "variance": {
            m: {
                "se": fit.se[m],
                "p_value": fit.p_value[m],
                "ci95": list(fit.ci95[m]),
            }
            for m in fit.se
        },
        "selected_ps_terms": list(fit.ps_spec_used.terms) if fit.ps_spec_used else None,
        "selected_om0_terms": list(fit.om_spec0_used.terms) if fit.om_spec0_used else None,
        "selected_om1_terms": list(fit.om_spec1_used.terms) if fit.om_spec1_used else None,
        "warnings": fit.warnings,
    }
    _write(json.dumps(report, indent=2) + "\n", args.out)
    return 0 if fit.converged else 2


# ---------------------------------------------------------------------------
# simulate

def _scenario_from_file(path):
    with open(path) as fh:
        spec = json.load(fh)
    kind = spec.pop("type", None)
    classes = {"eq5": simulate.ScenarioEq5, "eq6": simulate.ScenarioEq6}
    if kind not in classes:
        raise UsageError(f"scenario file must set type to one of {sorted(classes)}")
    cls = classes[kind]
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(spec) - names
    if unknown:
        raise UsageError(f"unknown scenario fields: {sorted(unknown)}")
    for key in ("size_menu", "beta_o", "beta_m"):
        if isinstance(spec.get(key), list):
            spec[key] = tuple(spec[key])
    try:
        return cls(**spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad scenario file: {exc}") from None


def _parse_grid(tokens):
    grid = {"om": ["true"], "ps": ["true"]}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"bad grid token {tok!r}; expected axis=value,value")
        axis, vals = tok.split("=", 1)
        if axis not in grid:
            raise UsageError(f"unknown grid axis {axis!r}; expected om or ps")
        grid[axis] = [v.strip() for v in vals.split(",") if v.strip()]
    return grid


def _simulate_setup(args):
    if (args.builtin is None) == (args.scenario is None):
        raise UsageError("exactly one of --builtin or --scenario is required")
    if args.builtin is not None:
        if args.builtin not in simulate.BUILTIN_STUDIES:
            raise UsageError(
                f"unknown builtin {args.builtin!r}; choose from "
                f"{sorted(simulate.BUILTIN_STUDIES)}"
            )
        scenario_fn, configs_fn = simulate.BUILTIN_STUDIES[args.builtin]
        scenario = scenario_fn(small=args.small)
        if args.grid:
            if args.builtin != "table3":
                raise UsageError("--grid applies only to --builtin table3")
            grid = _parse_grid(args.grid)
            configs = []
            for om in grid["om"]:
                for ps in grid["ps"]:
                    try:
                        configs.extend(simulate.configs_table3(om=om, ps=ps))
                    except KeyError:
                        raise UsageError(f"unknown grid cell om={om} ps={ps}") from None
        else:
            configs = configs_fn()
    else:
        scenario = _scenario_from_file(args.scenario)
        configs = (
            simulate.configs_table4()
            if isinstance(scenario, simulate.ScenarioEq5)
            else simulate.configs_table5()
        )
    if args.M is not None:
        scenario = dataclasses.replace(scenario, n_clusters=args.M)
    return scenario, configs


def cmd_simulate(args) -> int:
    scenario, configs = _simulate_setup(args)
    result = simulate.run_mc(
        scenario, configs, replicates=args.replicates, seed=args.seed, jobs=args.jobs
    )
    with open(f"{args.out_prefix}_estimates.csv", "w", newline="") as fh:
        simulate.write_estimates_csv(result.records, fh)
    summary = result.summary(level=args.level)
    ext = {"csv": "csv", "json": "json", "markdown": "md"}[args.format]
    text = simulate.summarize_to_table(summary, args.format)
    with open(f"{args.out_prefix}_summary.{ext}", "w") as fh:
        fh.write(text)
    if not args.quiet:
        sys.stdout.write(text)
    return 2 if summary.excess_failures else 0


def cmd_report(args) -> int:
    with open(args.estimates, newline="") as fh:
        records = simulate.read_estimates_csv(fh)
    if not records:
        raise UsageError(f"{args.estimates}: no replicate records")
    summary = simulate.summarize_records(records, level=args.level)
    _write(simulate.summarize_to_table(summary, args.format), args.out)
    return 2 if summary.excess_failures else 0


# ---------------------------------------------------------------------------
# argument wiring

def build_parser() -> _Parser:
    p = _Parser(prog="crtdr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit one estimator on a CSV dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--cluster", required=True)
    f.add_argument("--arm", required=True)
    f.add_argument("--outcome", required=True)
    f.add_argument("--covariates", help="comma list; default: all other columns")
    f.add_argument("--cluster-means", help="append mean_<name> columns for these covariates")
    f.add_argument("--estimator", required=True, choices=estimator.KINDS)
    f.add_argument("--corstr", default="independence",
                   choices=("independence", "exchangeable"))
    f.add_argument("--placement", default=estimator.PLACEMENT_VINV_W,
                   choices=(estimator.PLACEMENT_VINV_W, estimator.PLACEMENT_WHALF))
    f.add_argument("--ps", help="propensity covariates, comma list (A added automatically)")
    f.add_argument("--interactions", help="covariates to add as A:X terms to the PS")
    f.add_argument("--om0", help="control-arm outcome model covariates")
    f.add_argument("--om1", help="treated-arm outcome model covariates")
    f.add_argument("--stepwise-ps", help="candidate covariates for stepwise PS selection")
    f.add_argument("--stepwise-om", help="candidate covariates for stepwise OM selection")
    f.add_argument("--fay-q", type=float, default=0.75)
    f.add_argument("--pi-floor", type=float, default=1e-6)
    f.add_argument("--truncate", type=float, default=None)
    f.add_argument("--p-treat", type=float, default=None)
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a replicated simulation study")
    s.add_argument("--builtin", default=None)
    s.add_argument("--scenario", default=None, help="JSON scenario file")
    s.add_argument("--grid", nargs="+", default=None,
                   help="table3 cells, e.g. om=true,miss ps=true,miss,none")
    s.add_argument("--replicates", type=int, default=1000)
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--small", action="store_true",
                   help="use the small-sample variant of the builtin scenario")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--format", default="csv", choices=("csv", "json", "markdown"))
    s.add_argument("--out-prefix", default="crtdr_sim")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="re-summarize persisted replicate estimates")
    r.add_argument("--estimates", required=True)
    r.add_argument("--level", type=float, default=0.95)
    r.add_argument("--format", default="csv", choices=("csv", "json", "markdown"))
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ValueError, OSError, json.JSONDecodeError) as exc:
        error = {"schema_version": SCHEMA_VERSION, "error": str(exc)}
        sys.stdout.write(json.dumps(error) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
