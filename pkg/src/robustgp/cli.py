"""Command-line entry point: ``robustgp <command> [options]``.

Every command reads a scenario file (``--config``) for its settings and
works inside one output directory (``--out``), so the single-step
commands can be chained::

    robustgp simulate --config s.json --out run
    robustgp corrupt  --config s.json --out run
    robustgp learn    --config s.json --out run
    robustgp identify --config s.json --out run
    robustgp infer    --config s.json --out run
    robustgp cluster  --config s.json --out run

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import replace

import numpy as np

from .bench import (bundled_scenarios, corruption_plan, exit_code_for, fit_both,
                    identify_meters, inference_settings, prepare_moments, resolve_scenario,
                    run_scenario, scenario_grid, simulation_config)
from .clustering import cluster_generators, infer_aggregate, infer_dimension_reduced
from .corruption import corrupt
from .errors import ConfigError, RobustGPError
from .grid import load_model, save_model
from .identification import MeterWeights
from .inference import predict_stitched
from .kernel import load_learned, save_learned
from .learning import fit_report
from .simulate import simulate
from .timeseries import (TimeSeriesRecord, bandpass_record, read_record, restrict_to_meters,
                         write_record)

logger = logging.getLogger("robustgp")


def _scenario(args):
    if args.config is None:
        raise ConfigError("--config is required")
    sc = resolve_scenario(args.config)
    if args.seed:
        sc = sc.with_seed(args.seed)
    return replace(sc, outputs=args.out) if args.out else sc


def _path(sc, name):
    return os.path.join(sc.outputs, name)


def _input_record(sc, args):
    if args.input:
        return read_record(args.input)
    for name in ("corrupted.csv", "observed.csv"):
        if os.path.exists(_path(sc, name)):
            return read_record(_path(sc, name))
    raise ConfigError(f"no input series: pass --input or run 'simulate' into {sc.outputs}")


def _model(sc, args):
    path = args.model or _path(sc, "model.json")
    if os.path.exists(path):
        return load_model(path)
    model, _, _, _ = scenario_grid(sc)
    return model


def cmd_simulate(args):
    sc = _scenario(args)
    model, Q, meters, _ = scenario_grid(sc)
    truth = simulate(model, simulation_config(sc, Q))
    os.makedirs(sc.outputs, exist_ok=True)
    save_model(model, _path(sc, "model.json"))
    write_record(truth, _path(sc, "truth.csv"))
    write_record(restrict_to_meters(truth, meters), _path(sc, "observed.csv"))
    print(f"simulated {truth.T} ticks of {model.n} generators -> {sc.outputs}")


def cmd_corrupt(args):
    sc = _scenario(args)
    if not sc.corruption:
        raise ConfigError("the scenario has no 'corruption' section")
    record = read_record(args.input or _path(sc, "observed.csv"))
    model, Q, _, _ = scenario_grid(sc)
    plan = corruption_plan(sc, record.meter_set)
    out, labels = corrupt(record, plan, model, simulation_config(sc, Q))
    write_record(out, _path(sc, "corrupted.csv"))
    with open(_path(sc, "labels.json"), "w") as fh:
        json.dump({"corrupted": [int(g) for g in labels]}, fh)
    print(f"corrupted meters {labels.tolist()} ({plan.kind})")


def cmd_learn(args):
    sc = _scenario(args)
    record = _input_record(sc, args)
    model = _model(sc, args)
    observed, moments, kernel, basis = prepare_moments(sc, record, model)
    l1, l2 = fit_both(sc, moments, kernel, basis, model, observed.dt)
    os.makedirs(sc.outputs, exist_ok=True)
    for name, fit in (("l1", l1), ("l2", l2)):
        save_learned(fit, _path(sc, f"learned_{name}.npz"))
        with open(_path(sc, f"fit_{name}.txt"), "w") as fh:
            fh.write(fit_report(fit, moments))
    print(f"fitted {basis.r} modes on {len(moments.meters)} meters, "
          f"{len(moments.lags)} lags -> learned_l1.npz, learned_l2.npz")


def _learned(sc, args, model):
    return load_learned(args.learned or _path(sc, "learned_l1.npz"), model)


def cmd_identify(args):
    sc = _scenario(args)
    model = _model(sc, args)
    learned = _learned(sc, args, model)
    _, moments, _, _ = prepare_moments(sc, _input_record(sc, args), model)
    if not np.array_equal(moments.meters, learned.meters):
        raise ConfigError("the input series and the fitted covariance cover different meters")
    weights = identify_meters(sc, moments, learned)
    with open(_path(sc, "identification.txt"), "w") as fh:
        fh.write(weights.report())
    print(f"flagged meters {weights.flagged.tolist()} at beta={weights.beta:g}")


def _weights(sc, args, meters):
    path = args.weights or _path(sc, "identification.txt")
    if os.path.exists(path):
        with open(path) as fh:
            return MeterWeights.parse(fh.read())
    return MeterWeights.clean(meters)


def _prepared_record(sc, args):
    record = _input_record(sc, args)
    return bandpass_record(record, sc.bandpass) if sc.bandpass else record


def cmd_infer(args):
    sc = _scenario(args)
    model = _model(sc, args)
    _, _, _, targets = scenario_grid(sc)
    learned = _learned(sc, args, model)
    record = _prepared_record(sc, args)
    weights = _weights(sc, args, record.meter_set)
    start, length, window, noise = inference_settings(sc, record)
    span = record.window(start, length)
    mean, std = predict_stitched(learned, span, weights, targets, window, noise,
                                 return_std=True)
    ids = [model.generator_ids[t] for t in targets]
    pred = TimeSeriesRecord(values=mean, reporting_rate=span.reporting_rate,
                            start_time=span.start_time, meter_set=targets,
                            generator_ids=tuple(ids))
    extra = {f"predicted_g{g}_std": std[:, k] for k, g in enumerate(ids)}
    write_record(pred, _path(sc, "predictions.csv"), prefix="predicted_g", extra_columns=extra)
    print(f"predicted {len(targets)} generators over {length} ticks -> predictions.csv")


def cmd_cluster(args):
    sc = _scenario(args)
    model = _model(sc, args)
    _, _, _, targets = scenario_grid(sc)
    learned = _learned(sc, args, model)
    doc = sc.clustering or {}
    assignment = cluster_generators(learned, doc.get("k"), seed=int(doc.get("seed", 0)))
    os.makedirs(sc.outputs, exist_ok=True)
    with open(_path(sc, "clusters.csv"), "w") as fh:
        fh.write(assignment.export(list(model.generator_ids)))
    print(f"{assignment.k} clusters, medoids "
          f"{[model.generator_ids[m] for m in assignment.medoids]}")
    if args.input is None and not any(os.path.exists(_path(sc, n))
                                      for n in ("corrupted.csv", "observed.csv")):
        return
    record = _prepared_record(sc, args)
    weights = _weights(sc, args, record.meter_set)
    start, length, window, noise = inference_settings(sc, record)
    span = record.window(start, min(length, window))
    dr = infer_dimension_reduced(learned, span, weights, targets, assignment, noise=noise)
    agg, clusters = infer_aggregate(learned, span, weights, assignment, targets, noise=noise)
    ids = [model.generator_ids[t] for t in targets]
    write_record(TimeSeriesRecord(values=dr, reporting_rate=span.reporting_rate,
                                  start_time=span.start_time, meter_set=targets,
                                  generator_ids=tuple(ids)),
                 _path(sc, "predictions_dimension_reduced.csv"), prefix="predicted_g")
    header = "time," + ",".join(f"cluster{c}" for c in clusters)
    np.savetxt(_path(sc, "aggregates.csv"), np.column_stack([span.times, agg]),
               delimiter=",", header=header, comments="", fmt="%.17g")


def _summary(name, result, seconds):
    s = result.scores
    ident = s["identification"]
    parts = [f"{name}: {seconds:.1f}s", f"flagged={ident['flagged']}",
             f"truth={ident['truth']}",
             f"nrmse_l1_masked={np.round(s['nrmse_l1_masked'], 4).tolist()}",
             f"nrmse_l2={np.round(s['nrmse_l2'], 4).tolist()}"]
    return "  ".join(parts)


def cmd_bench(args):
    if args.bench_command == "run":
        sc = resolve_scenario(args.scenario)
        if args.seed:
            sc = sc.with_seed(args.seed)
        if args.out:
            sc = replace(sc, outputs=args.out)
        t0 = time.perf_counter()
        result = run_scenario(sc)
        print(_summary(sc.name, result, time.perf_counter() - t0))
        return
    out = args.out or "out"
    summary = {}
    for name, path in bundled_scenarios().items():
        sc = resolve_scenario(path)
        if args.seed:
            sc = sc.with_seed(args.seed)
        sc = replace(sc, outputs=os.path.join(out, name))
        t0 = time.perf_counter()
        result = run_scenario(sc)
        seconds = time.perf_counter() - t0
        print(_summary(name, result, seconds), flush=True)
        summary[name] = {"seconds": seconds, "scores": result.scores}
    with open(os.path.join(out, "suite.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True,
                  default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))


def _common(p):
    p.add_argument("--config", help="scenario file or bundled scenario name")
    p.add_argument("--out", help="output directory (default: the scenario's 'outputs')")
    p.add_argument("--seed", type=int, default=0,
                   help="offset added to every seed in the scenario (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="cap on BLAS/LAPACK threads")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustgp",
        description="Robust Gaussian-process learning of grid transients from PMU series.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": (cmd_simulate, "simulate the grid and write truth and metered series"),
        "corrupt": (cmd_corrupt, "apply the scenario's corruption to the metered series"),
        "learn": (cmd_learn, "fit the covariance parameters (L1 and L2)"),
        "identify": (cmd_identify, "flag corrupted meters"),
        "infer": (cmd_infer, "predict non-metered generators"),
        "cluster": (cmd_cluster, "group generators and run cluster-local inference"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--input", help="speed series CSV (default: corrupted.csv, "
                                       "else observed.csv in the output directory)")
        p.add_argument("--model", help="grid model file (default: model.json in the output "
                                       "directory, else the scenario's model)")
        p.add_argument("--learned", help="fitted covariance (default: learned_l1.npz)")
        p.add_argument("--weights", help="identification report (default: "
                                         "identification.txt)")
        p.set_defaults(func=fn)
    bench = sub.add_parser("bench", help="run whole scenarios")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    run = bench_sub.add_parser("run", help="run one scenario end to end")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    _common(run)
    suite = bench_sub.add_parser("suite", help="run every bundled scenario")
    _common(suite)
    bench.set_defaults(func=cmd_bench)
    return parser


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"robustgp: warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    warnings.showwarning = _show_warning
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except (RobustGPError, OSError, ValueError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"robustgp: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
