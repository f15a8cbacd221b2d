"""Command line interface.

Subcommands: run (training experiment), rates (rate-convergence
experiment), oracle (region-oracle computations), plot (SVG charts from
stored CSVs), verify (the property-check battery).

Exit codes: 0 on success, 2 for configuration or input-validation
problems, 1 for runtime failures (including a rates run that misses its
tolerance and any failed verify check).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import POLICIES, ConfigError, load_config, parse_config
from .plots import emit_plots
from .runner import RoundLogError, oracle_report, run_experiment, run_rate_convergence


def _load_with_overrides(args) -> "ExperimentConfig":
    """Load the JSON config, apply CLI overrides, then validate once."""
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read {args.config}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{args.config} is not valid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a JSON object"])
    if getattr(args, "seed", None) is not None:
        raw["seeds"] = [args.seed]
    if getattr(args, "out", None) is not None:
        raw["out_dir"] = args.out
    if getattr(args, "policy", None) is not None:
        raw["policy"] = args.policy
        if args.policy != "fixed":
            raw.pop("fixed_table", None)
        if args.policy != "poc":
            raw.pop("poc_candidates", None)
    return parse_config(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsel",
        description="Client selection for federated learning under intermittent availability.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, help="override: run this single seed")
        p.add_argument("--out", help="override: output directory")
        return p

    run_p = with_config(sub.add_parser("run", help="run a training experiment"))
    run_p.add_argument(
        "--policy",
        choices=POLICIES,
        help="override the configured policy (policy-specific keys of other policies are dropped)",
    )

    with_config(sub.add_parser("rates", help="rate-convergence experiment vs the region oracle"))
    with_config(sub.add_parser("oracle", help="compute the optimal rate and region diagnostics"))

    plot_p = sub.add_parser("plot", help="render SVG charts from stored round CSVs")
    plot_p.add_argument("csvs", nargs="+", help="round CSV files")
    plot_p.add_argument("--out", required=True, help="directory for the SVG files")

    verify_p = sub.add_parser("verify", help="run the built-in property checks")
    verify_p.add_argument(
        "--fast", action="store_true", help="smoke-sized checks (not the acceptance gate)"
    )
    verify_p.add_argument("--only", action="append", help="run only the named check (repeatable)")
    return parser


def _dump_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args) -> int:
    cfg = _load_with_overrides(args)
    result = run_experiment(cfg)
    summary = result["summary"]
    for run in summary["runs"]:
        final = run["final"]
        if final is None:
            print(f"seed {run['seed']}: no evaluated rounds ({run['csv']})")
            continue
        print(
            f"seed {run['seed']}: per-sample acc {final['per_sample_acc']:.4f}, "
            f"loss {final['per_sample_loss']:.4f} ({run['csv']})"
        )
    mean = summary["final_mean"]
    if mean is not None:
        print(
            f"{summary['policy']} mean over {len(summary['runs'])} seed(s): "
            f"per-sample acc {mean['per_sample_acc']:.4f}, loss {mean['per_sample_loss']:.4f}"
        )
    print(f"summary: {result['summary_path']}")
    print(f"wall clock: {result['wall_clock_s']:.1f}s")
    return 0


def _cmd_rates(args) -> int:
    cfg = _load_with_overrides(args)
    report = run_rate_convergence(cfg)
    path = os.path.join(cfg.out_dir, "rates_report.json")
    _dump_json(path, report)
    print(f"optimal rate: {['%.6g' % v for v in report['optimal_rate']]}")
    print(f"average rate: {['%.6g' % v for v in report['average_rate']]}")
    print(
        f"sup gap {report['sup_gap']:.6g} vs tolerance {report['tolerance']:.6g} "
        f"after {report['rounds']} rounds (burn-in {report['burn_in']})"
    )
    print(f"report: {path}")
    if report["passed"]:
        print("PASS rate tracking")
        return 0
    print("FAIL rate tracking")
    return 1


def _cmd_oracle(args) -> int:
    cfg = _load_with_overrides(args)
    report = oracle_report(cfg)
    path = os.path.join(cfg.out_dir, "oracle_report.json")
    _dump_json(path, report)
    print(f"clients: {report['n_clients']}, outcomes: {report['n_outcomes']}")
    print(f"max rates: {['%.6g' % v for v in report['max_rates']]}")
    print(f"optimal rate: {['%.6g' % v for v in report['optimal_rate']]}")
    print(
        f"H(r*) = {report['h_optimal']:.9g}, duality gap {report['duality_gap']:.3g}, "
        f"{report['iterations']} iterations"
    )
    print(
        f"optimum membership residual {report['optimum_membership_residual']:.3g} "
        f"(inside: {report['optimum_inside']})"
    )
    if report["excluded"]:
        print(f"excluded starved clients: {report['excluded']}")
    print(f"report: {path}")
    return 0


def _cmd_plot(args) -> int:
    written = emit_plots(args.csvs, args.out)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("no metric data found; nothing written")
    return 0


def _cmd_verify(args) -> int:
    from .verification import run_checks

    results = run_checks(fast=args.fast, only=args.only)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.details} [{res.seconds:.1f}s]")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "rates": _cmd_rates,
        "oracle": _cmd_oracle,
        "plot": _cmd_plot,
        "verify": _cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, RoundLogError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
