"""Command-line entry point: ``lgm-emg {synth,fit,compare,analyze,repro,schema}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit error.
Errors are reported on stderr as ``lgm-emg: error code=N type=Name: message``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import warnings
from pathlib import Path

from . import __version__
from .analysis import ParameterTable, analyze_table, fmt_number, trends_to_csv
from .empirical import HistogramConfig
from .errors import ConfigError, DataError, LgmEmgError
from .models import EmConfig, LgmParams, ScaleMixtureParams
from .pipeline import (
    PipelineConfig,
    compare_job,
    fit_job,
    fits_from_payload,
    parse_families,
    relative_name,
    run_jobs,
    summarize,
)
from .recording import PROTOCOL_WEIGHTS, SegmentationConfig, TrialMetadata, write_recording
from .report import REPORT_SCHEMA, dumps, validate_report, write_json
from .synth import TrialProfile, derived_seed, make_trial, protocol_grid, trial_filename

PROG = "lgm-emg"


def _float_list(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _add_pipeline_flags(p):
    g = p.add_argument_group("fitting")
    g.add_argument("--families", default="lgm,sg,sl,sm", help="comma-separated subset of lgm,sg,sl,sm")
    g.add_argument("--zero-mean", action="store_true", help="pin every location parameter at 0")
    g.add_argument("--bins", type=int, default=100, help="histogram bins K for KLD/AD")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--max-iter", type=int, default=500)
    g.add_argument("--restarts", type=int, default=3)
    s = p.add_argument_group("segmentation")
    s.add_argument("--window-ms", type=float, default=100.0)
    s.add_argument("--on-factor", type=float, default=3.0)
    s.add_argument("--off-factor", type=float, default=1.5)
    s.add_argument("--baseline-s", type=float, default=2.0)
    s.add_argument("--manual-start-s", type=float, default=None)
    s.add_argument("--manual-end-s", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (output order is unaffected)")


def _pipeline_config(args):
    families = parse_families(args.families)
    if not families:
        raise ConfigError("no model families requested")
    if args.bins < 1:
        raise ConfigError("--bins must be >= 1 (no empirical grid otherwise)")
    em = EmConfig(tol=args.tol, max_iter=args.max_iter, n_restarts=args.restarts, seed=args.seed, zero_mean=args.zero_mean)
    seg = SegmentationConfig(
        args.window_ms, args.on_factor, args.off_factor, args.baseline_s, args.manual_start_s, args.manual_end_s
    )
    return PipelineConfig(families, em, seg, HistogramConfig(bins=args.bins))


def _config_from_dict(d):
    em = EmConfig(**d["em"])
    seg = SegmentationConfig(**d["segmentation"])
    hist = HistogramConfig(**d["histogram"])
    return PipelineConfig(parse_families(",".join(d["families"])), em, seg, hist)


def _collect_inputs(paths):
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        elif p.exists():
            files.append(p)
        else:
            raise DataError(f"input not found: {raw}")
    if not files:
        raise ConfigError("no input recordings given")
    return sorted(set(files), key=lambda f: f.as_posix())


def _report_errors(errors):
    for err in errors:
        print(
            f"{PROG}: error code={err['exit_code']} type={err['error']} input={err['input']}: {err['message']}",
            file=sys.stderr,
        )


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _manifest(command, config, inputs, outputs, root, seed, extra=None):
    out = {
        "schema_version": 1,
        "tool": PROG,
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": [relative_name(p, root) for p in inputs],
        "outputs": {relative_name(p, root): _sha256(p) for p in sorted(outputs, key=lambda q: Path(q).as_posix())},
    }
    if extra:
        out.update(extra)
    return out


# -- stages -------------------------------------------------------------------


def _synth_trials(items, out_dir):
    paths = []
    for meta, profile in items:
        series = make_trial(profile, meta)
        paths.append(write_recording(series, Path(out_dir) / trial_filename(meta)))
    return paths


def _grid_items(seed, args):
    return list(
        protocol_grid(
            seed=seed,
            subjects_per_group=args.subjects_per_group,
            weights=args.weights,
            activities=args.activities,
            muscles=args.muscles,
            trials=args.trials,
            rate=args.rate,
            durations=(args.rest_s, args.action_s, args.release_s),
        )
    )


def _fit_stage(inputs, cfg, out_dir, root, workers):
    jobs = [(str(p), relative_name(p, root), cfg) for p in inputs]
    results = run_jobs(fit_job, jobs, workers)
    out_dir = Path(out_dir)
    table_path = out_dir / "params.csv"
    table = ParameterTable.from_csv(table_path.read_text(encoding="utf-8")) if table_path.exists() else ParameterTable()
    payloads, errors, written = {}, [], []
    for path, (payload, err) in zip(inputs, results):
        if err is not None:
            errors.append(err)
            continue
        payloads[str(path)] = payload
        meta = TrialMetadata(**payload["metadata"])
        for fit in fits_from_payload(payload).values():
            table.add_fit(meta, fit)
        written.append(write_json(out_dir / "fits" / (Path(path).stem + ".json"), payload))
    if payloads:
        written.append(_write_text(table_path, table.to_csv()))
    return payloads, errors, written, table


def _compare_stage(inputs, cfg, out_dir, root, workers, payloads=None):
    payloads = payloads or {}
    jobs = [(str(p), relative_name(p, root), cfg, payloads.get(str(p))) for p in inputs]
    results = run_jobs(compare_job, jobs, workers)
    entries = [e for e, _ in results if e is not None]
    errors = [err for _, err in results if err is not None]
    if not entries:
        return None, errors, []
    report = summarize(entries, cfg)
    validate_report(report)
    return report, errors, [write_json(Path(out_dir) / "report.json", report)]


def _analyze_stage(table, out_dir):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        trends, f_tests, unpaired = analyze_table(table)
    out_dir = Path(out_dir)
    written = [_write_text(out_dir / "trends" / f"{name}.csv", trends_to_csv(series)) for name, series in trends.items()]
    written.append(write_json(out_dir / "analysis.json", {"f_tests": f_tests, "unpaired": unpaired}))
    for row in unpaired:
        print(
            f"{PROG}: warning: unpaired trial subject={row['subject_id']} weight={fmt_number(row['weight_kg'])} "
            f"trial={row['trial_index']} activity={row['activity']} (has {row['present']})",
            file=sys.stderr,
        )
    return written


# -- subcommands ----------------------------------------------------------------


def cmd_synth(args):
    out_dir = Path(args.out_dir)
    if args.grid:
        items = _grid_items(args.seed, args)
    else:
        if args.model == "lgm":
            model = LgmParams(args.lambda1, 0.0, args.sigma1, 0.0, args.sigma2)
        else:
            model = ScaleMixtureParams(0.0, args.scale, args.nu)
        items = []
        for t in range(1, args.n_trials + 1):
            meta = TrialMetadata(args.subject, args.experience, args.weight, args.activity, args.muscle, t)
            profile = TrialProfile(
                args.rest_s, args.action_s, args.release_s, args.rest_sigma, model, args.rate, derived_seed(args.seed, meta)
            )
            items.append((meta, profile))
    paths = _synth_trials(items, out_dir)
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    write_json(out_dir / "synth_manifest.json", _manifest("synth", config, [], paths, out_dir, args.seed))
    print(f"wrote {len(paths)} trial(s) to {out_dir}")
    return 0


def cmd_fit(args):
    cfg = _pipeline_config(args)
    inputs = _collect_inputs(args.inputs)
    out_dir = Path(args.out_dir)
    payloads, errors, written, _ = _fit_stage(inputs, cfg, out_dir, None, args.jobs)
    _report_errors(errors)
    if not payloads:
        return max(e["exit_code"] for e in errors)
    extra = {"errors": errors}
    write_json(out_dir / "fit_manifest.json", _manifest("fit", cfg.to_dict(), inputs, written, out_dir, args.seed, extra))
    print(f"fitted {len(payloads)} of {len(inputs)} trial(s)")
    return 0


def cmd_compare(args):
    cfg = _pipeline_config(args)
    inputs = _collect_inputs(args.inputs)
    out_dir = Path(args.out_dir)
    payloads = {}
    if args.fits_dir:
        for p in inputs:
            fp = Path(args.fits_dir) / (p.stem + ".json")
            if fp.exists():
                payloads[str(p)] = json.loads(fp.read_text(encoding="utf-8"))
    report, errors, written = _compare_stage(inputs, cfg, out_dir, None, args.jobs, payloads)
    _report_errors(errors)
    if report is None:
        return max(e["exit_code"] for e in errors)
    write_json(out_dir / "compare_manifest.json", _manifest("compare", cfg.to_dict(), inputs, written, out_dir, args.seed))
    for fam, avg in report["averages"]["overall"].items():
        print(f"{fam}: mean KLD {avg['kld']:.5f}  mean AD {avg['ad']:.5f}  ({avg['n_trials']} trials)")
    return 0


def cmd_analyze(args):
    table_path = Path(args.table)
    if not table_path.exists():
        raise DataError(f"parameter table not found: {table_path}")
    table = ParameterTable.from_csv(table_path.read_text(encoding="utf-8"))
    out_dir = Path(args.out_dir)
    written = _analyze_stage(table, out_dir)
    write_json(out_dir / "analyze_manifest.json", _manifest("analyze", {}, [table_path], written, out_dir, None))
    print(f"wrote {len(written)} analysis file(s) to {out_dir}")
    return 0


def _repro_config(args):
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if manifest.get("command") != "repro":
            raise ConfigError(f"{args.manifest} is not a repro manifest")
        conf = manifest["config"]
        grid = argparse.Namespace(**conf["grid"])
        grid.weights, grid.activities, grid.muscles = tuple(grid.weights), tuple(grid.activities), tuple(grid.muscles)
        return manifest["seed"], grid, _config_from_dict(conf["pipeline"])
    grid = argparse.Namespace(
        subjects_per_group=args.subjects_per_group,
        weights=tuple(args.weights),
        activities=tuple(args.activities),
        muscles=tuple(args.muscles),
        trials=args.trials,
        rate=args.rate,
        rest_s=args.rest_s,
        action_s=args.action_s,
        release_s=args.release_s,
    )
    return args.seed, grid, _pipeline_config(args)


def cmd_repro(args):
    seed, grid, cfg = _repro_config(args)
    out_dir = Path(args.out_dir)
    trial_paths = _synth_trials(_grid_items(seed, grid), out_dir / "trials")
    payloads, fit_errors, fit_written, table = _fit_stage(trial_paths, cfg, out_dir, out_dir, args.jobs)
    report, cmp_errors, cmp_written = _compare_stage(trial_paths, cfg, out_dir, out_dir, args.jobs, payloads)
    errors = fit_errors + cmp_errors
    _report_errors(errors)
    if not payloads or report is None:
        return max(e["exit_code"] for e in errors)
    ana_written = _analyze_stage(table, out_dir)
    config = {"grid": dict(sorted(vars(grid).items())), "pipeline": cfg.to_dict()}
    manifest = _manifest(
        "repro", config, trial_paths, fit_written + cmp_written + ana_written, out_dir, seed, {"errors": errors}
    )
    write_json(out_dir / "manifest.json", manifest)
    avg = report["averages"]["overall"]
    order = sorted(avg, key=lambda f: avg[f]["kld"])
    print(f"repro: {len(trial_paths)} trials; families by mean KLD: {' < '.join(order)}")
    return 0


def cmd_schema(args):
    sys.stdout.write(dumps(REPORT_SCHEMA))
    return 0


# -- parser -------------------------------------------------------------------


def _add_grid_flags(p):
    g = p.add_argument_group("synthetic protocol grid")
    g.add_argument("--subjects-per-group", type=int, default=1)
    g.add_argument("--weights", type=_float_list, default=PROTOCOL_WEIGHTS)
    g.add_argument("--activities", type=_str_list, default=("isotonic", "isometric"))
    g.add_argument("--muscles", type=_str_list, default=("BB", "FCU"))
    g.add_argument("--trials", type=int, default=1, help="repetitions per condition")


def _add_profile_flags(p):
    g = p.add_argument_group("trial profile")
    g.add_argument("--rest-s", type=float, default=10.0)
    g.add_argument("--action-s", type=float, default=5.0)
    g.add_argument("--release-s", type=float, default=3.0)
    g.add_argument("--rate", type=float, default=2000.0)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{PROG}: error code={ConfigError.exit_code} type=ConfigError: {message}\n")


def build_parser():
    parser = _Parser(prog=PROG, description="Fit and compare sEMG amplitude models (LGM, SG, SL, SM).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic rest/action/release trials")
    p.add_argument("action", nargs="?", choices=["export"], default="export", help=argparse.SUPPRESS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-trials", type=int, default=1)
    _add_profile_flags(p)
    p.add_argument("--rest-sigma", type=float, default=0.01)
    p.add_argument("--model", choices=["lgm", "sm"], default="lgm")
    p.add_argument("--lambda1", type=float, default=0.7)
    p.add_argument("--sigma1", type=float, default=0.05)
    p.add_argument("--sigma2", type=float, default=0.15)
    p.add_argument("--scale", type=float, default=0.05)
    p.add_argument("--nu", type=float, default=4.0)
    p.add_argument("--subject", type=int, default=1)
    p.add_argument("--experience", choices=["novice", "intermediate", "trained"], default="novice")
    p.add_argument("--weight", type=float, default=0.0)
    p.add_argument("--activity", choices=["isotonic", "isometric"], default="isotonic")
    p.add_argument("--muscle", choices=["BB", "FCU"], default="BB")
    p.add_argument("--grid", action="store_true", help="write the graded multi-subject protocol instead")
    _add_grid_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="segment trials and fit model families")
    p.add_argument("inputs", nargs="+", help="recording files or directories of *.csv")
    p.add_argument("--out-dir", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="KLD/AD/LRT comparison report")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fits-dir", default=None, help="reuse FitResult JSON written by `fit`")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="trend tables and slope F-tests from a parameter table")
    p.add_argument("--table", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("repro", help="synth -> fit -> compare -> analyze on the graded synthetic protocol")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", default=None, help="rerun with the configuration recorded in a repro manifest")
    _add_grid_flags(p)
    _add_profile_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("schema", help="print the comparison-report JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LgmEmgError as exc:
        print(f"{PROG}: error code={exc.exit_code} type={type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # invalid parameter values surfaced by dataclass validation
        print(f"{PROG}: error code={ConfigError.exit_code} type=ConfigError: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
