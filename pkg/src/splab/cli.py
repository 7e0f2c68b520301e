"""Command-line entry point: ``splab {calibrate,run,estimate,verify,export}``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import __version__
from . import analyticity as an
from .experiments import (ConfigError, ScenarioError, calibrate, dump_json, export_plotdata, load_config,
                          load_constants, run_scenario, _clean)
from .integrator import load_trace
from .models import scaling_data
from .norms import heat_flow_kato_norm
from .spectral import set_threads

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.ensemble.seeds = None
        cfg.ensemble.seed_offset = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _cmd_calibrate(args) -> int:
    cfg = _load(args)
    set_threads(cfg.threads)
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        consts = calibrate(cfg)
    path = dump_json({"constants": consts.to_dict()}, out / "constants.json")
    print(f"C_lemma={consts.C_lemma:.6g} c_small={consts.c_small:.6g} -> {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _load(args)
    res = run_scenario(cfg, args.out)
    for name, ok in res.report["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return res.exit_code


def _cmd_estimate(args) -> int:
    tr = load_trace(args.trace)
    opts = an.FitOptions(noise_floor=args.noise_floor, min_shells=args.min_shells, gaussian=args.gaussian)
    idx = range(len(tr)) if args.time is None else [int(min(range(len(tr)), key=lambda i: abs(tr.times[i] - args.time)))]
    for i in idx:
        est = an.estimate_radius(tr.snapshot(i), opts)
        row = {"t": float(tr.times[i]), "status": est.status, "delta_fit": est.delta_fit,
               "alpha_fit": est.alpha_fit, "window": list(est.window), "residual": est.residual,
               "floor_flag": est.floor_flag, "n_shells": est.n_shells}
        print(json.dumps(_clean(row), sort_keys=True))
    return EXIT_OK


def _cmd_verify(args) -> int:
    tr = load_trace(args.trace)
    consts = load_constants(args.constants)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sd = scaling_data(tr.spec)
    s = sd.s_p(consts.p)
    lam = args.lam
    if lam is None:
        start = tr.at(args.t0) if args.t0 else tr.snapshot(0)
        lam = an.lambda_from_heat_norm(heat_flow_kato_norm(start, consts.eps, consts.p, s, args.T),
                                       consts.c_small, consts.eps)
    rep = an.verify_bootstrap(tr, an.GevreyParams(lam, consts.eps, args.T, consts.p), consts, s, t0=args.t0)
    print(json.dumps(_clean(rep.summary()), indent=1, sort_keys=True))
    return EXIT_OK if rep.certified else EXIT_FAILED


def _cmd_export(args) -> int:
    report = json.loads(Path(args.report).read_text())
    for p in export_plotdata(report, args.out):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"splab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_flags(p):
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", help="output directory (default: the config's 'output')")
        p.add_argument("--seed", type=int, help="first ensemble seed (replaces explicit seeds)")
        p.add_argument("--threads", type=int, help="FFT threads and ensemble workers")

    p = sub.add_parser("calibrate", help="calibrate constants and write constants.json")
    scenario_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("run", help="run a scenario and write its report")
    scenario_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("estimate", help="fit strip widths on a saved trace")
    p.add_argument("--trace", required=True, help="trace index JSON")
    p.add_argument("--time", type=float, help="nearest snapshot only")
    p.add_argument("--noise-floor", type=float, default=1e-13)
    p.add_argument("--min-shells", type=int, default=6)
    p.add_argument("--gaussian", action="store_true", help="add a -gamma xi^2 term")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("verify", help="bootstrap check on a saved trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--constants", required=True, help="constants JSON from 'calibrate'")
    p.add_argument("--T", type=float, required=True, help="horizon after t0")
    p.add_argument("--lam", type=float, help="weight strength (default: from the heat-flow norm)")
    p.add_argument("--t0", type=float, default=0.0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("export", help="plot CSVs from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"splab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except an.AdmissibilityError as exc:
        print(f"splab: check failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ScenarioError as exc:
        print(f"splab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"splab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
