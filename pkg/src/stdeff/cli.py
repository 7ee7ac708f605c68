"""Command-line interface.

Two subcommands: ``analyze`` applies the estimators to a CSV dataset,
``simulate`` runs a scenario file through the simulation harness and writes
summary tables. Estimation failures in ``analyze`` exit nonzero with a
machine-readable reason; in ``simulate`` they become replicate exclusions and
only configuration problems exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import ConfigError, EstimationError, NonBinaryColumnError, ParseError
from .estimators import fit_leave_one_out, standardize, unadjusted_diff_means
from .glm import FitConfig, ModelSpec, TrialDataset
from .simulation import (
    load_scenario,
    run_scenario,
    summarize,
    true_ate_for_scenario,
    validate_scenario_truth,
    write_replicates_csv,
    write_summary_csv,
)
from .variance import AteEstimate, Method, bootstrap_variance, if_loo_variance, if_plugin_variance

_ALL_METHODS = [m.value for m in (Method.IF_LOO, Method.IF_PLUGIN, Method.BOOTSTRAP, Method.UNADJUSTED)]


@dataclass
class AnalyzeRequest:
    """Parsed and validated arguments of the analyze subcommand."""

    input_path: str
    outcome: str
    treatment: str
    covariates: list
    pi0: float
    methods: list
    level: float
    n_boot: int
    seed: int
    output_format: str
    interactions: bool

    def __post_init__(self):
        overlap = {self.outcome, self.treatment} & set(self.covariates)
        if overlap:
            raise ConfigError("covariates", f"columns {sorted(overlap)} also used as outcome/treatment")
        if len(set(self.covariates)) != len(self.covariates):
            raise ConfigError("covariates", "covariate list contains duplicates")
        if self.outcome == self.treatment:
            raise ConfigError("treatment", "outcome and treatment must be distinct columns")
        if Method.BOOTSTRAP.value in self.methods and self.n_boot < 2:
            raise ConfigError("boot", "bootstrap needs at least 2 resamples")
        if not (0.0 < self.level < 1.0):
            raise ConfigError("level", "confidence level must lie strictly inside (0, 1)")
        if not (0.0 < self.pi0 < 1.0):
            raise ConfigError("pi0", "randomization probability must lie strictly inside (0, 1)")
        unknown = [m for m in self.methods if m not in _ALL_METHODS]
        if unknown:
            raise ConfigError("methods", f"unknown method(s) {unknown}; choose from {_ALL_METHODS}")


def _parse_binary(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NonBinaryColumnError(f"value {raw!r} is not numeric 0/1", row=row, column=column)
    if value not in (0.0, 1.0):
        raise NonBinaryColumnError(f"value {raw!r} is not 0/1", row=row, column=column)
    return value


def read_trial_csv(path: str, outcome: str, treatment: str, covariates: list,
                   pi0: float) -> TrialDataset:
    """Load a trial dataset from a headed CSV file.

    Missing or non-numeric entries are rejected with the offending row and
    column; outcome and treatment must be coded 0/1.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: a header row is required")
        header = [h.strip() for h in header]
        missing = [c for c in (outcome, treatment, *covariates) if c not in header]
        if missing:
            raise ParseError(f"missing column(s) {missing}; file has {header}")
        idx = {name: header.index(name) for name in (outcome, treatment, *covariates)}

        y, a, x = [], [], []
        for rownum, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(record)}", row=rownum
                )
            y.append(_parse_binary(record[idx[outcome]].strip(), rownum, outcome))
            a.append(_parse_binary(record[idx[treatment]].strip(), rownum, treatment))
            covrow = []
            for name in covariates:
                raw = record[idx[name]].strip()
                if raw == "":
                    raise ParseError("missing value", row=rownum, column=name)
                try:
                    covrow.append(float(raw))
                except ValueError:
                    raise ParseError(f"non-numeric value {raw!r}", row=rownum, column=name)
            x.append(covrow)

    if not y:
        raise ParseError("no data rows found")
    return TrialDataset(
        covariates=np.asarray(x, dtype=float),
        treatment=np.asarray(a, dtype=float),
        outcome=np.asarray(y, dtype=float),
        pi0=pi0,
    )


def _estimate_record(estimate: AteEstimate) -> dict:
    return {
        "method": estimate.method.value,
        "point": estimate.point,
        "se": estimate.se,
        "ci_lower": estimate.ci_lower,
        "ci_upper": estimate.ci_upper,
        "p_value": estimate.p_value,
        "level": estimate.level,
        "diagnostics": dict(estimate.diagnostics),
    }


def run_analysis(req: AnalyzeRequest) -> list:
    """Compute every requested estimate for the dataset; order follows the request."""
    data = read_trial_csv(req.input_path, req.outcome, req.treatment, req.covariates, req.pi0)
    spec = ModelSpec(
        covariate_columns=tuple(range(len(req.covariates))),
        include_treatment_interactions=req.interactions,
    )
    cfg = FitConfig()

    need_model = [m for m in req.methods if m != Method.UNADJUSTED.value]
    result = standardize(data, spec, cfg) if need_model else None

    records = []
    for name in req.methods:
        method = Method(name)
        if method is Method.UNADJUSTED:
            est = unadjusted_diff_means(data, level=req.level)
        elif method is Method.IF_PLUGIN:
            est = if_plugin_variance(data, result, level=req.level)
        elif method is Method.IF_LOO:
            loo = fit_leave_one_out(data, spec, cfg)
            est = if_loo_variance(data, result, loo, level=req.level)
        else:
            est = bootstrap_variance(data, spec, cfg, n_boot=req.n_boot,
                                     seed=req.seed, level=req.level, result=result)
        records.append(_estimate_record(est))
    return records


def _emit_records(records: list, output_format: str, out) -> None:
    if output_format == "json-lines":
        for rec in records:
            out.write(json.dumps(rec, sort_keys=True) + "\n")
        return
    columns = ["method", "point", "se", "ci_lower", "ci_upper", "p_value", "level"]
    if output_format == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(columns + ["diagnostics"])
        for rec in records:
            writer.writerow([rec["method"]] + [repr(rec[c]) for c in columns[1:]]
                            + [json.dumps(rec["diagnostics"], sort_keys=True)])
        return
    # plain table
    out.write(f"{'method':<12}{'point':>12}{'se':>12}{'ci_lower':>12}{'ci_upper':>12}{'p_value':>12}\n")
    for rec in records:
        out.write(
            f"{rec['method']:<12}{rec['point']:>12.6f}{rec['se']:>12.6f}"
            f"{rec['ci_lower']:>12.6f}{rec['ci_upper']:>12.6f}{rec['p_value']:>12.6f}\n"
        )
        notes = {k: v for k, v in rec["diagnostics"].items() if v}
        if notes:
            out.write(f"{'':<12}note: {json.dumps(notes, sort_keys=True)}\n")


def _cmd_analyze(args) -> int:
    req = AnalyzeRequest(
        input_path=args.input,
        outcome=args.outcome,
        treatment=args.treatment,
        covariates=[c for c in args.covariates.split(",") if c] if args.covariates else [],
        pi0=args.pi0,
        methods=[m.strip() for m in args.methods.split(",") if m.strip()],
        level=args.level,
        n_boot=args.boot,
        seed=args.seed,
        output_format=args.format,
        interactions=args.interactions,
    )
    records = run_analysis(req)
    _emit_records(records, req.output_format, sys.stdout)
    return 0


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.replicates is not None:
        if args.replicates < 1:
            raise ConfigError("replicates", "must be positive")
        scenario = _with(scenario, n_replicates=args.replicates)
    if args.boot is not None:
        if args.boot < 0:
            raise ConfigError("boot", "must be non-negative")
        scenario = _with(scenario, n_boot=args.boot)
    if args.seed is not None:
        scenario = _with(scenario, base_seed=args.seed)

    truth = true_ate_for_scenario(scenario, nodes_per_dim=args.quadrature_nodes,
                                  mc_draws=args.mc_draws)
    validate_scenario_truth(scenario, truth)
    print(f"scenario: {scenario.label}  (n={scenario.n}, replicates={scenario.n_replicates}, "
          f"bootstrap={scenario.n_boot}, seed={scenario.base_seed})")
    print(f"true ATE (quadrature, {truth.quadrature_nodes_per_dim} nodes/dim): {truth.value:.6f}; "
          f"control rate {truth.control_rate:.6f}")
    if truth.mc_check is not None:
        mc, se = truth.mc_check
        print(f"Monte Carlo cross-check: {mc:.6f} (se {se:.2e}), "
              f"|diff| = {abs(mc - truth.value):.2e} <= 3 se")

    results = run_scenario(scenario, threads=args.threads)
    rows = summarize(results, truth, alpha=args.alpha)

    with open(args.out, "w", newline="", encoding="utf-8") as f:
        write_summary_csv(f, scenario, truth, rows, alpha=args.alpha)
    if args.per_replicate_out:
        with open(args.per_replicate_out, "w", newline="", encoding="utf-8") as f:
            write_replicates_csv(f, results)

    print(f"\n{'method':<12}{'SE':>10}{'Est. SD':>10}{'coverage':>10}{'reject %':>10}"
          f"{'included':>10}{'excluded':>10}")
    for row in rows:
        print(f"{row.method:<12}{row.se_empirical:>10.4f}{row.est_sd:>10.4f}"
              f"{row.coverage_pct:>10.2f}{row.type1_pct:>10.2f}"
              f"{row.n_included:>10d}{row.n_excluded:>10d}")
    print(f"\nsummary written to {args.out}")
    return 0


def _with(scenario, **kwargs):
    from dataclasses import replace
    return replace(scenario, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stdeff",
        description="Standardized (g-computation) ATE estimation for binary "
                    "outcomes with IF-LOO, IF plug-in, bootstrap and "
                    "unadjusted variance estimators.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="analyze a CSV trial dataset")
    pa.add_argument("--input", required=True, help="CSV file with a header row")
    pa.add_argument("--outcome", required=True, help="name of the 0/1 outcome column")
    pa.add_argument("--treatment", required=True, help="name of the 0/1 treatment column")
    pa.add_argument("--covariates", default="", help="comma-separated covariate column names")
    pa.add_argument("--pi0", required=True, type=float,
                    help="known randomization probability of treatment (required; "
                    "the influence formulas depend on it)")
    pa.add_argument("--methods", default=",".join(_ALL_METHODS),
                    help=f"comma-separated subset of {_ALL_METHODS}")
    pa.add_argument("--level", default=0.95, type=float, help="confidence level (default 0.95)")
    pa.add_argument("--boot", default=1000, type=int, help="bootstrap resamples (default 1000)")
    pa.add_argument("--seed", default=0, type=int, help="bootstrap seed (default 0)")
    pa.add_argument("--format", default="table", choices=("table", "csv", "json-lines"))
    pa.add_argument("--interactions", action="store_true",
                    help="include treatment-by-covariate interaction terms")
    pa.set_defaults(func=_cmd_analyze)

    ps = sub.add_parser("simulate", help="run a simulation scenario file")
    ps.add_argument("--scenario", required=True, help="path to a scenario .cfg file")
    ps.add_argument("--replicates", type=int, default=None, help="override n_replicates")
    ps.add_argument("--boot", type=int, default=None, help="override n_boot")
    ps.add_argument("--seed", type=int, default=None, help="override base_seed")
    ps.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    ps.add_argument("--alpha", type=float, default=0.05, help="test level (default 0.05)")
    ps.add_argument("--out", default="results.csv", help="summary CSV path")
    ps.add_argument("--per-replicate-out", default=None, help="optional per-replicate audit CSV")
    ps.add_argument("--quadrature-nodes", type=int, default=16,
                    help="Gauss-Legendre nodes per continuous dimension (default 16)")
    ps.add_argument("--mc-draws", type=int, default=10**6,
                    help="Monte Carlo draws for the ground-truth cross-check (0 to skip)")
    ps.set_defaults(func=_cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: file not found: {err}", file=sys.stderr)
        return 2
    except (ConfigError, ParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EstimationError as err:
        print(f"error: estimation failed: reason={err.code}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
