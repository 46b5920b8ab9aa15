"""Command-line entry point: ``stepdeconv {fit,simulate,rates,coverage,select,diagnose}``.

Exit status is 0 when every requested target passed, 1 when a study ran but
missed its target, and 2 on errors (reported as a JSON record on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiments as exp
from .errors import InferenceError, StepDeconvError
from .estimator import fit_known_k, fit_penalized
from .inference import infer
from .model import read_csv, simulate_dataset, write_csv, write_metadata

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _say(args, line):
    if not args.quiet:
        print(line)


def _plots(args):
    if args.no_plots:
        return None
    from . import plotting
    return plotting


def cmd_fit(args):
    cfg = cfgmod.load_config(args.config)
    kernel = cfgmod.kernel_from(cfg)
    fit_cfg = cfgmod.fit_config_from(cfg, k=args.k)
    data = read_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if fit_cfg.k is not None:
        fit = fit_known_k(data, kernel, fit_cfg.k, fit_cfg)
    else:
        fit = fit_penalized(data, kernel, fit_cfg)
    record = {"kernel": kernel.to_config(), "n": data.n, **fit.to_dict()}
    _dump(record, out / "fit.json")
    _say(args, f"fit: k_hat = {fit.k_hat}, theta_hat = "
               f"[{', '.join(f'{v:.6g}' for v in fit.theta_hat)}]")

    if args.inference == "on" and not kernel.bounded:
        raise InferenceError("inference was requested but the Abel kernel has no "
                             "normal limit law; only the jump rate is available")
    if args.inference != "off" and kernel.bounded:
        report = infer(data, fit, kernel, cfgmod.design_from(cfg).density, args.level)
        _dump(report.to_dict(), out / "inference.json")
        _say(args, f"inference: sigma2_hat = {report.sigma2_hat:.6g}, "
                   f"V min eigenvalue = {report.V_min_eig:.3g}"
                   + (" (degenerate)" if report.degenerate else ""))
    elif not kernel.bounded:
        _say(args, "inference: skipped (no limit law for the Abel kernel)")

    plotting = _plots(args)
    if plotting:
        plotting.plot_fit(data, kernel, fit, out / "fit.png")
    return EXIT_OK


def cmd_simulate(args):
    cfg = cfgmod.load_config(args.config)
    kernel = cfgmod.kernel_from(cfg)
    truth = cfgmod.truth_from(cfg)
    design = cfgmod.design_from(cfg)
    for key in ("n", "sigma", "seed"):
        if key not in cfg and not (key == "seed" and args.seed is not None):
            raise cfgmod.ConfigError(f"simulate needs '{key}' in the config")
    seed = args.seed if args.seed is not None else int(cfg["seed"])
    data = simulate_dataset(kernel, truth, design, int(cfg["n"]), float(cfg["sigma"]), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(data, out / "data.csv")
    write_metadata(data, out / "truth.json")
    _say(args, f"simulate: wrote {data.n} rows to {out / 'data.csv'}")
    plotting = _plots(args)
    if plotting:
        plotting.plot_simulation(data, kernel, truth, out / "data.png")
    return EXIT_OK


def _finish(args, reports, stems, plot=None):
    ok = True
    for report, stem in zip(reports, stems):
        exp.write_report(report, args.out, stem)
        for line in report.summary_lines():
            _say(args, line)
        ok = ok and report.passed
    if plot is not None:
        plot()
    return EXIT_OK if ok else EXIT_FAILED


def cmd_rates(args):
    cfg = cfgmod.load_config(args.config)
    scenario = cfgmod.scenario_from(cfg, seed=args.seed)
    metrics = cfg.get("experiment", {}).get("metrics") or [scenario.metric]
    by_metric = exp.rate_reports_for_metrics(scenario, metrics)
    reports = [by_metric[m] for m in metrics]
    plotting = _plots(args)
    plot = (lambda: plotting.plot_rates(reports, Path(args.out) / "rates.png")) if plotting else None
    return _finish(args, reports, [f"rates_{m}" for m in metrics], plot)


def cmd_coverage(args):
    cfg = cfgmod.load_config(args.config)
    scenario = cfgmod.scenario_from(cfg, seed=args.seed)
    e = cfg.get("experiment", {})
    level = args.level if args.level is not None else float(e.get("level", 0.95))
    report = exp.run_coverage_experiment(scenario, level, n=e.get("n"), band=e.get("band"))
    plotting = _plots(args)
    plot = (lambda: plotting.plot_coverage(report, Path(args.out) / "coverage.png")) if plotting else None
    return _finish(args, [report], ["coverage"], plot)


def cmd_select(args):
    cfg = cfgmod.load_config(args.config)
    scenario = cfgmod.scenario_from(cfg, seed=args.seed)
    e = cfg.get("experiment", {})
    report = exp.run_selection_experiment(scenario, float(e.get("min_recovery", 0.95)))
    plotting = _plots(args)
    plot = (lambda: plotting.plot_selection(report, Path(args.out) / "select.png")) if plotting else None
    return _finish(args, [report], ["select"], plot)


def cmd_diagnose(args):
    cfg = cfgmod.load_config(args.config)
    scenario = cfgmod.scenario_from(cfg, seed=args.seed)
    e = cfg.get("experiment", {})
    report = exp.normality_diagnostics(
        scenario, n=e.get("n"), mean_band=tuple(e.get("mean_band", (-0.15, 0.15))),
        var_band=tuple(e.get("variance_band", (0.8, 1.25))))
    plotting = _plots(args)
    plot = (lambda: plotting.plot_normality(report, Path(args.out) / "diagnose.png")) if plotting else None
    return _finish(args, [report], ["diagnose"], plot)


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "rates": cmd_rates,
            "coverage": cmd_coverage, "select": cmd_select, "diagnose": cmd_diagnose}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML or JSON config file")
    common.add_argument("--out", default="stepdeconv-out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress summary lines")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    parser = argparse.ArgumentParser(
        prog="stepdeconv",
        description="Fit step functions observed through a known convolution kernel.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a step function to x,y data")
    p.add_argument("data", help="CSV file with header x,y")
    p.add_argument("--k", type=int, default=None, help="pin the number of jumps")
    p.add_argument("--level", type=float, default=0.95, help="interval level")
    p.add_argument("--inference", choices=("auto", "on", "off"), default="auto",
                   help="'auto' skips inference for kernels without a limit law")

    sub.add_parser("simulate", parents=[common], help="simulate a dataset from a config")
    sub.add_parser("rates", parents=[common], help="convergence-rate study")
    p = sub.add_parser("coverage", parents=[common], help="interval coverage study")
    p.add_argument("--level", type=float, default=None)
    sub.add_parser("select", parents=[common], help="jump-count recovery study")
    sub.add_parser("diagnose", parents=[common], help="normality of standardized estimates")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (StepDeconvError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
