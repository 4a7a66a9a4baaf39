"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or input error,
3 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DivergedLoss, EpiPinnError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("epipinn")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def _strategies(arg):
    return ["joint", "split"] if arg == "both" else [arg]


def config_hash(spec, cfg):
    blob = json.dumps({"spec": spec.to_dict(), "config": cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def write_manifest(out, entries, argv):
    manifest = {
        "command": argv,
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "runs": entries,
    }
    (Path(out) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")


def _run_one(spec, out, seed, overrides):
    from .trainer import run_scenario

    cfg = spec.train_config(**overrides, **({"seed": seed} if seed is not None else {}))
    model, report = run_scenario(spec, out, seed=seed, **overrides)
    return model, report, {
        "dir": str(out), "case_id": spec.case_id, "strategy": cfg.strategy, "seed": cfg.seed,
        "data_seed": spec.data_seed, "config_hash": config_hash(spec, cfg),
        "wall_time_s": report.wall_time_s,
    }


def _run_spec_all(spec, args, out, overrides):
    """Run ``spec`` once or ``--runs`` times, writing reports and bands."""
    from .evaluation import band_stats, write_bands_csv
    from .scenarios import build_data
    from .trainer import predict

    entries = []
    base = args.seed if args.seed is not None else spec.train.get("seed", 0)
    if args.runs <= 1:
        _, report, entry = _run_one(spec, out, args.seed, overrides)
        entries.append(entry)
        print(f"{entry['strategy']}: " + json.dumps({**report.errors, **report.windowed, **report.estimates}))
        return entries
    data = build_data(spec)
    preds, reports = [], []
    for i in range(args.runs):
        sub = out / f"run{i:02d}"
        model, report, entry = _run_one(spec, sub, base + i, overrides)
        preds.append(predict(model, data.eval_days))
        reports.append(report)
        entries.append(entry)
    stats = {"mean": {}, "std": {}}
    for q in sorted(preds[0]):
        stats["mean"][q], stats["std"][q] = band_stats([p[q] for p in preds])
    write_bands_csv(out / "bands.csv", data.eval_days, stats)
    summary = {}
    for key in sorted({k for r in reports for k in {**r.errors, **r.windowed, **r.estimates}}):
        vals = [{**r.errors, **r.windowed, **r.estimates}.get(key) for r in reports]
        vals = np.array([v for v in vals if v is not None], dtype=float)
        summary[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1))}
    summary["seeds"] = [base + i for i in range(args.runs)]
    (out / "runs_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    print(f"{spec.variant}_{spec.strategy} over {args.runs} runs: " + json.dumps(
        {k: v for k, v in summary.items() if k != "seeds"}))
    return entries


def cmd_run_case(args):
    from .scenarios import case_spec

    overrides = _overrides(args.set)
    out = Path(args.out)
    entries = []
    for strategy in _strategies(args.strategy):
        spec = case_spec(args.case, strategy, weekly=args.weekly)
        if args.data_seed is not None:
            spec.data_seed = args.data_seed
        sub = out / f"case{args.case}{'_weekly' if args.weekly else ''}_{strategy}"
        entries += _run_spec_all(spec, args, sub, overrides)
    write_manifest(out, entries, sys.argv[1:])
    return EXIT_OK


def cmd_run_spec(args):
    from .scenarios import ScenarioSpec

    spec = ScenarioSpec.from_json(args.spec)
    overrides = _overrides(args.set)
    out = Path(args.out)
    entries = []
    strategies = [spec.strategy] if args.strategy is None else _strategies(args.strategy)
    for strategy in strategies:
        entries += _run_spec_all(spec.with_strategy(strategy), args, out / f"{spec.variant}_{strategy}",
                                 overrides)
    write_manifest(out, entries, sys.argv[1:])
    return EXIT_OK


def cmd_sweep(args):
    from .scenarios import case_spec
    from .trainer import DEFAULT_ARCHITECTURES, run_scenario

    if not args.layers or not args.neurons:
        raise ConfigError("empty architecture grid")
    overrides = _overrides(args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = case_spec(args.case, args.strategy if args.strategy != "both" else "split")
    roles = args.roles or ["S", "I"]
    rows, entries = [], []
    for nl in args.layers:
        for nn in args.neurons:
            arch = {k: list(v) for k, v in DEFAULT_ARCHITECTURES.items()}
            for r in roles:
                arch[r] = [nn] * nl
            sub = out / f"L{nl}_N{nn}"
            model, report = run_scenario(spec, sub, seed=args.seed, architectures=arch, **overrides)
            row = {"layers": nl, "neurons": nn,
                   "n_params": sum(model.networks[r].n_params for r in roles if r in model.networks),
                   "wall_time_s": report.total_wall_time}
            row.update({f"error_{k}": v for k, v in sorted({**report.errors, **report.windowed}.items())})
            rows.append(row)
            entries.append({"dir": str(sub), "layers": nl, "neurons": nn, "seed": model.config.seed,
                            "config_hash": config_hash(spec, model.config)})
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)
    write_manifest(out, entries, sys.argv[1:])
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_forecast(args):
    from .evaluation import relative_l2, sequential_window_protocol, write_forecast_csv
    from .scenarios import ScenarioSpec, build_data, case_spec, surveillance_series

    spec = ScenarioSpec.from_json(args.spec) if args.spec else case_spec(args.case, "split")
    overrides = _overrides(args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(spec)
    results = sequential_window_protocol(spec, args.windows, args.horizon, seed=args.seed,
                                         data=data, **overrides)
    bundles = [b for _, b in results]
    write_forecast_csv(out / "forecast.csv", bundles)
    summary = []
    ref = None
    if not spec.synthetic:
        series = surveillance_series(spec)
        ref = dict(zip(series["t_days"], series.get("ref_Delta_H", series["Delta_H"])))
    elif data.reference.get("Delta_H") is not None:
        ref = dict(zip(data.eval_days, data.reference["Delta_H"]))
    for (model, b), w in zip(results, args.windows):
        entry = {"window": [0, w], "horizon": args.horizon,
                 "wall_time_s": model.wall_time_s, "finite": bool(all(np.all(np.isfinite(v)) for v in b.values.values()))}
        if ref is not None and "Delta_H" in b.values and all(d in ref for d in b.days):
            entry["Delta_H_forecast_error"] = relative_l2(b.values["Delta_H"], [ref[d] for d in b.days])
        summary.append(entry)
        model.save(out / f"window_{w}")
    (out / "forecast_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    write_manifest(out, [{"dir": str(out), "case_id": spec.case_id, "seed": results[0][0].config.seed,
                          "config_hash": config_hash(spec, results[0][0].config)}], sys.argv[1:])
    for e in summary:
        print(json.dumps(e, sort_keys=True))
    return EXIT_OK


def cmd_gen_data(args):
    from .data_pipeline import export_dataset
    from .scenarios import CASE_IDS, SYNTHETIC_CASES, ScenarioSpec, build_data, case_spec

    if args.spec:
        spec = ScenarioSpec.from_json(args.spec)
    else:
        if args.case is None:
            raise ConfigError("give a case id or --spec")
        if args.case not in CASE_IDS:
            raise ConfigError(f"unknown case {args.case}")
        if args.case not in SYNTHETIC_CASES:
            raise ConfigError(f"case {args.case} uses real surveillance data; nothing to generate")
        spec = case_spec(args.case, weekly=args.weekly)
    if not spec.synthetic:
        raise ConfigError("scenario uses real surveillance data; nothing to generate")
    seed = spec.data_seed if args.seed is None else args.seed
    data = build_data(spec, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_dataset(data.observations, out, {"case_id": spec.case_id, "data_seed": seed,
                                            "noise": spec.infection_noise, "spec": spec.to_dict()})
    print(f"wrote {data.observations.n_data} rows to {out}")
    return EXIT_OK


def build_report(run_dir):
    """Recompute the ErrorReport JSON text of a stored run."""
    from .evaluation import evaluate_model
    from .scenarios import ScenarioSpec, build_data
    from .trainer import TrainedModel

    d = Path(run_dir)
    spec = ScenarioSpec.from_json(d / "spec.json")
    model = TrainedModel.load(d / "model")
    report = evaluate_model(model, build_data(spec), spec.case_id, spec.windows)
    return report.to_json()


def cmd_report(args):
    d = Path(args.run_dir)
    if not (d / "spec.json").exists() or not (d / "model").is_dir():
        raise ConfigError(f"{d} is not a run directory")
    text = build_report(d)
    if args.check:
        same = (d / "report.json").read_text(encoding="utf-8") == text
        print("report matches" if same else "report differs")
        return EXIT_OK if same else EXIT_FAIL
    if args.write:
        (d / "report.json").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="epipinn", description="PINN inverse problems for SIR-type epidemic models")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runs=True):
        sp.add_argument("--seed", type=int, default=None, help="training seed")
        sp.add_argument("--out", default="runs", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a training setting (JSON value), repeatable")
        if runs:
            sp.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed+i")

    rc = sub.add_parser("run-case", help="run one of the built-in cases 1-7")
    rc.add_argument("case", type=int)
    rc.add_argument("--strategy", choices=["joint", "split", "both"], default="both")
    rc.add_argument("--weekly", action="store_true", help="weekly observations (case 1)")
    rc.add_argument("--data-seed", type=int, default=None)
    common(rc)
    rc.set_defaults(func=cmd_run_case)

    rs = sub.add_parser("run-spec", help="run a scenario JSON file")
    rs.add_argument("--spec", required=True)
    rs.add_argument("--strategy", choices=["joint", "split", "both"], default=None)
    common(rs)
    rs.set_defaults(func=cmd_run_spec)

    sw = sub.add_parser("sweep", help="architecture grid on one case")
    sw.add_argument("case", type=int)
    sw.add_argument("--layers", type=int, nargs="*", default=[4, 10])
    sw.add_argument("--neurons", type=int, nargs="*", default=[5, 25, 50, 100])
    sw.add_argument("--roles", nargs="*", default=None, help="network roles to resize (default S I)")
    sw.add_argument("--strategy", choices=["joint", "split"], default="split")
    common(sw, runs=False)
    sw.set_defaults(func=cmd_sweep)

    fc = sub.add_parser("forecast", help="sequential-window training and 15-day forecasts")
    fc.add_argument("--case", type=int, default=7)
    fc.add_argument("--spec", default=None)
    fc.add_argument("--windows", type=int, nargs="+", default=[15, 30, 45, 60])
    fc.add_argument("--horizon", type=int, default=15)
    common(fc, runs=False)
    fc.set_defaults(func=cmd_forecast)

    gd = sub.add_parser("gen-data", help="write a synthetic dataset with provenance")
    gd.add_argument("case", type=int, nargs="?", default=None)
    gd.add_argument("--spec", default=None)
    gd.add_argument("--weekly", action="store_true")
    gd.add_argument("--seed", type=int, default=None, help="noise seed")
    gd.add_argument("--out", required=True, help="dataset CSV path")
    gd.set_defaults(func=cmd_gen_data)

    rp = sub.add_parser("report", help="regenerate the error report of a stored run")
    rp.add_argument("run_dir")
    rp.add_argument("--check", action="store_true", help="compare with the stored report.json")
    rp.add_argument("--write", action="store_true", help="overwrite report.json")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "case", None) is not None and args.command != "gen-data":
            from .scenarios import CASE_IDS
            if args.case not in CASE_IDS:
                raise ConfigError(f"unknown case {args.case}")
        if getattr(args, "runs", 1) < 1:
            raise ConfigError("--runs must be at least 1")
        return args.func(args)
    except DivergedLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EpiPinnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
