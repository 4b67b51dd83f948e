"""Command-line front end: ``selfbias <command> [options]``.

Results go to files; logging goes to standard error.  Every run writes a
manifest next to its primary output listing inputs, options and outputs.
Exit codes: 0 success, 1 data or numeric error, 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from . import __version__, synth
from .analyses import agreement as agr
from .analyses import bias, heatmap
from .analyses.report import (BiasReport, atomic_write_text, frame_to_csv_text, read_reports_json,
                              write_reports_csv, write_reports_json)
from .dataset import (DataError, RatingsTable, aggregate_reference, config_to_dict, filter_table, load_config,
                      load_ratings, write_ratings)
from .judge_parser import load_label_maps, parse_judgments, read_judgments

log = logging.getLogger("selfbias")

CONFIG_ENV = "SELFBIAS_CONFIG"
PLOT_COLUMNS = ["slice", "kind", "judge_or_family", "family", "estimate", "lower", "upper", "reject_zero"]


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    input_paths: list[str]
    options: dict
    tool_version: str = __version__
    seed: int | None = None
    output_paths: list[str] = field(default_factory=list)
    wall_time_ms: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("command", "config_path", "input_paths", "options", "tool_version",
                                              "seed", "output_paths", "wall_time_ms")}

    def write(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# plot data


def plotdata_frame(reports: Sequence[BiasReport]) -> pd.DataFrame:
    rows = []
    for rep in reports:
        for kind, group in (("self_bias", rep.self_bias), ("family_bias", rep.family_bias)):
            for key, iv in sorted(group.items()):
                fam = key if kind == "family_bias" else rep.family_of.get(key, "")
                rows.append({"slice": rep.slice_label, "kind": kind, "judge_or_family": key, "family": fam,
                             "estimate": None if iv is None else iv.estimate,
                             "lower": None if iv is None else iv.lower,
                             "upper": None if iv is None else iv.upper,
                             "reject_zero": None if iv is None else iv.reject_zero})
    return pd.DataFrame(rows, columns=PLOT_COLUMNS)


def emit_plotdata(reports: Sequence[BiasReport], path: str | os.PathLike) -> list[str]:
    """Tidy CSV with one row per (slice, judge or family); header only when empty."""
    atomic_write_text(path, frame_to_csv_text(plotdata_frame(reports)))
    return [str(path)]


def _matrix_csv(frame: pd.DataFrame) -> str:
    out = frame.copy()
    out.insert(0, "rater", out.index.astype(str))
    return frame_to_csv_text(out.reset_index(drop=True))


def emit_heatmap(hm: heatmap.Heatmap, path: str | os.PathLike) -> list[str]:
    """Raw mean matrix at ``path`` and its row-normalized companion beside it."""
    path = Path(path)
    companion = path.with_name(f"{path.stem}.row_normalized{path.suffix or '.csv'}")
    atomic_write_text(path, _matrix_csv(hm.raw))
    atomic_write_text(companion, _matrix_csv(hm.row_normalized))
    return [str(path), str(companion)]


# shared plumbing


def _resolve_config(args) -> str:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        raise UsageError(f"missing config: pass --config or set {CONFIG_ENV}")
    return path


def _load_table(args) -> RatingsTable:
    if not args.data:
        raise UsageError("--data is required")
    scales, config = load_config(_resolve_config(args))
    table = load_ratings(args.data, scales, config)
    return aggregate_reference(table)


def _bias_kw(args) -> dict:
    kw = {"level": args.level, "cov_type": args.cov}
    if getattr(args, "cluster_by", None):
        kw["cluster_by"] = args.cluster_by
    if getattr(args, "no_family", False):
        kw["include_family"] = False
    if getattr(args, "coding", None):
        kw["coding"] = args.coding
    return kw


def _write_reports(reports, args) -> list[str]:
    out = Path(args.out)
    write_reports_json(reports, out)
    paths = [str(out)]
    csv = out.with_suffix(".csv") if out.suffix != ".csv" else out.with_name(out.stem + ".flat.csv")
    write_reports_csv(reports, csv)
    paths.append(str(csv))
    if args.plotdata:
        paths += emit_plotdata(reports, args.plotdata)
    return paths


def _write_frame(frame: pd.DataFrame, path) -> list[str]:
    atomic_write_text(path, frame_to_csv_text(frame))
    return [str(path)]


# commands


def cmd_fit(args):
    table = _load_table(args)
    return _write_reports([bias.estimate_bias(table, **_bias_kw(args))], args)


def cmd_slice(args):
    table = _load_table(args)
    return _write_reports(bias.slice_bias(table, by=args.by, **_bias_kw(args)), args)


def cmd_robust(args):
    table = _load_table(args)
    kw = _bias_kw(args)
    check = args.check
    if args.family and check != "lofo":
        raise UsageError("--family only applies to --check lofo")
    if args.models and check != "drop-models":
        raise UsageError("--models only applies to --check drop-models")
    if check == "length":
        kw.pop("cluster_by", None)
        reports = [bias.robustness_length(table, mode=args.length_mode, **kw)]
    elif check == "gam":
        kw.pop("cluster_by", None)
        reports = [bias.robustness_gam(table, num_interior_knots=args.knots, **kw)]
    elif check == "ordinal":
        reports = bias.robustness_ordinal(table, level=args.level)
    elif check == "lofo":
        reports = bias.robustness_lofo(table, families=args.family or None, **kw)
    else:
        models = args.models or list(bias.WEAKEST_MODELS)
        reports = [bias.robustness_drop_models(table, models=models, **kw)]
    return _write_reports(reports, args)


def _load_gold(args, scales, config):
    if not args.gold:
        return None
    gold = load_ratings(args.gold, scales, config).ratings
    return gold[["prompt_id", "dimension", "model", "rater", "level"]]


def cmd_agreement(args):
    scales, config = load_config(_resolve_config(args))
    table = load_ratings(args.data, scales, config)
    rep = agr.agreement_report(table, gold=_load_gold(args, scales, config),
                               metric="interval" if args.metric == "both" else args.metric,
                               both_metrics=args.metric == "both")
    frame = rep.to_frame()
    if args.metric == "both":
        for m in agr.METRICS:
            frame[f"alpha_{m}"] = [rep.extra_alpha.get(d, {}).get(m, np.nan) for d in frame["dimension"][:-1]] + [
                np.nanmean([v[m] for v in rep.extra_alpha.values()]) if rep.extra_alpha else np.nan]
    return _write_frame(frame, args.out)


def cmd_correlate(args):
    table = _load_table(args)
    return _write_frame(agr.judge_reference_correlation(table), args.out)


def cmd_heatmap(args):
    table = _load_table(args)
    hm = heatmap.heatmap_means(table, dimensions=args.dimension or None)
    return emit_heatmap(hm, args.out)


def cmd_parse(args):
    scales, config = load_config(_resolve_config(args))
    maps = load_label_maps(args.label_maps)
    rows, dropped = parse_judgments(read_judgments(args.input), maps, strict=not args.lenient)
    table = RatingsTable.from_rows(rows, scales, config)
    write_ratings(table, args.out)
    outs = [str(args.out)]
    if dropped:
        log.warning("%d responses dropped", len(dropped))
        drop_path = Path(args.out).with_name(Path(args.out).stem + ".dropped.csv")
        outs += _write_frame(pd.DataFrame(dropped, columns=["record", "reason"]), drop_path)
    return outs


def cmd_simulate(args):
    if args.preset == "two-model":
        cfg = synth.two_model_config(args.delta_quality, num_prompts=args.n, seed=args.seed, gamma=args.gamma)
        if args.annotators:
            cfg = dataclasses.replace(cfg, annotators=args.annotators)
    else:
        cfg = synth.nine_model_config(num_prompts=args.n, seed=args.seed, annotators=args.annotators)
    table = synth.simulate(cfg)
    if args.discretize:
        table = synth.discretize(table)
    out = Path(args.out)
    write_ratings(table, out)
    cfg_path = out.with_name(out.stem + ".config.json")
    atomic_write_text(cfg_path, json.dumps(config_to_dict(table.scales, table.config), indent=2) + "\n")
    params_path = out.with_name(out.stem + ".sim.json")
    atomic_write_text(params_path, json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return [str(out), str(cfg_path), str(params_path)]


def cmd_debias(args):
    table = _load_table(args)
    reports = read_reports_json(args.report)
    rep = next((r for r in reports if r.slice_label == args.slice), None)
    if rep is None:
        raise DataError(f"no report with slice {args.slice!r} in {args.report}")
    return _write_frame(bias.debias_scores(table, rep), args.out)


# replication


AGREEMENT_TARGETS = {"krippendorff_alpha": 0.28, "observed_agreement": 0.81, "gold_accuracy": 0.91}
# (sign, must reject zero)
SIGN_PATTERN = {"self_bias": {"gpt-4o": (1, True), "claude-3.5-sonnet": (1, True), "llama3-8b": (-1, True)},
                "family_bias": {"GPT": (1, False), "Claude": (1, False)}}


def dataset_checks(headline: BiasReport, agreement: agr.AgreementReport, tol: float = 0.01) -> list[tuple[str, bool, str]]:
    """Table-3 averages within ``tol`` and the headline sign/significance pattern."""
    checks = []
    avg = agreement.averages
    for name, target in AGREEMENT_TARGETS.items():
        got = avg.get(name, float("nan"))
        checks.append((f"agreement:{name}", bool(abs(got - target) <= tol), f"{got:.4f} vs {target}"))
    for kind, pattern in SIGN_PATTERN.items():
        group = getattr(headline, kind)
        for key, (sign, significant) in pattern.items():
            iv = group.get(key)
            ok = iv is not None and np.sign(iv.estimate) == sign and (iv.reject_zero or not significant)
            desc = "missing" if iv is None else f"{iv.estimate:+.4f} [{iv.lower:+.4f}, {iv.upper:+.4f}]"
            checks.append((f"signs:{kind}:{key}", bool(ok), desc))
    return checks


def _replicate_pipeline(table: RatingsTable, outdir: Path, kw: dict, gold=None) -> tuple[list[str], BiasReport, agr.AgreementReport]:
    outs = []
    headline = bias.estimate_bias(table, **kw)
    slices = bias.slice_bias(table, "dimension", **kw)
    if table.config.task_of:
        slices += bias.slice_bias(table, "task", **kw)
    robust = [bias.robustness_length(table, **kw), bias.robustness_gam(table, **kw)]
    robust += bias.robustness_lofo(table, **kw)
    drop_sets = [bias.WEAKEST_MODELS, bias.WEAKEST_MODELS_WITH_CLAUDE_V2]
    for models in drop_sets:
        if set(models) <= set(table.config.models):
            robust.append(bias.robustness_drop_models(table, models=models, **kw))
    if table.judge_ratings()["level"].notna().all():
        robust += bias.robustness_ordinal(table, level=kw.get("level", bias.LEVEL))
    groups = {"headline": [headline], "slices": slices, "robustness": robust}
    for name, reps in groups.items():
        write_reports_json(reps, outdir / f"{name}.json")
        write_reports_csv(reps, outdir / f"{name}.csv")
        outs += emit_plotdata(reps, outdir / f"{name}.plot.csv")
        outs += [str(outdir / f"{name}.json"), str(outdir / f"{name}.csv")]
    agreement = agr.agreement_report(table, gold=gold, both_metrics=True)
    outs += _write_frame(agreement.to_frame(), outdir / "agreement.csv")
    if table.reference is not None:
        outs += _write_frame(agr.judge_reference_correlation(table), outdir / "correlation.csv")
        outs += emit_heatmap(heatmap.heatmap_means(table), outdir / "heatmap.csv")
    return outs, headline, agreement


def synthetic_checks(seed: int) -> list[tuple[str, bool, str]]:
    """Self-bias recovery on the three quality-shift panels."""
    checks = []
    for name, table in synth.simulate_quality_shift_suite(2000, seed).items():
        iv = bias.estimate_bias(table).self_bias["judge"]
        checks.append((f"synthetic:quality-shift:{name}", bool(abs(iv.estimate - 0.25) <= 0.02 and iv.reject_zero),
                       f"{iv.estimate:.4f} [{iv.lower:.4f}, {iv.upper:.4f}]"))
    return checks


def cmd_replicate(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    kw = _bias_kw(args)
    if args.dataset:
        ds = Path(args.dataset)
        scales, config = load_config(args.config or ds / "config.json")
        table = aggregate_reference(load_ratings(ds / "ratings.csv", scales, config))
        gold = None
        if (ds / "gold.csv").exists():
            gold = load_ratings(ds / "gold.csv", scales, config).ratings
        outs, headline, agreement = _replicate_pipeline(table, outdir, kw, gold)
        checks = dataset_checks(headline, agreement)
        skipped = []
    else:
        cfg = synth.nine_model_config(num_prompts=args.n, seed=args.seed, annotators=3)
        table = synth.discretize(synth.simulate(cfg))
        outs, _, _ = _replicate_pipeline(table, outdir, kw)
        checks = []
        skipped = ["agreement-targets", "sign-pattern"]
    checks += synthetic_checks(args.seed)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {desc}" for name, ok, desc in checks]
    lines += [f"SKIP {name}: released dataset not supplied" for name in skipped]
    summary = outdir / "checks.txt"
    atomic_write_text(summary, "\n".join(lines) + "\n")
    for line in lines:
        print(line)
    outs.append(str(summary))
    return outs


# argument parsing


def _add_data(p, config=True):
    p.add_argument("--data", help="ratings file (CSV, TSV or JSON lines)")
    if config:
        p.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")


def _add_fit_opts(p):
    p.add_argument("--level", type=float, default=bias.LEVEL, help="interval level (default 0.90)")
    p.add_argument("--cov", choices=["HC0", "HC1"], default="HC1", help="robust covariance flavor")
    p.add_argument("--cluster-by", choices=["prompt", "completion", "judgment"], help="cluster-robust covariance")
    p.add_argument("--coding", choices=["reference", "sum"], default=None, help="fixed-effect coding")
    p.add_argument("--no-family", action="store_true", help="omit family-bias terms")
    p.add_argument("--plotdata", help="also write tidy plot data CSV here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfbias", description="Self- and family-bias of LLM judges.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="headline bias fit")
    _add_data(p)
    _add_fit_opts(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("slice", help="one fit per dimension or task type")
    _add_data(p)
    _add_fit_opts(p)
    p.add_argument("--by", choices=["dimension", "task"], required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("robust", help="robustness checks")
    _add_data(p)
    _add_fit_opts(p)
    p.add_argument("--check", choices=["length", "ordinal", "gam", "lofo", "drop-models"], required=True)
    p.add_argument("--family", action="append", help="family to leave out (repeatable; default all)")
    p.add_argument("--models", nargs="+", help="models to drop (default: the two weakest)")
    p.add_argument("--knots", type=int, default=4, help="interior spline knots")
    p.add_argument("--length-mode", choices=["prompt", "global"], default="prompt")
    p.add_argument("--out", required=True)

    p = sub.add_parser("agreement", help="human inter-annotator agreement per dimension")
    _add_data(p)
    p.add_argument("--gold", help="expert gold passes (same format as ratings)")
    p.add_argument("--metric", choices=["interval", "ordinal", "both"], default="interval")
    p.add_argument("--out", required=True)

    p = sub.add_parser("correlate", help="judge-vs-reference Spearman per dimension")
    _add_data(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("heatmap", help="judge x model mean scores")
    _add_data(p)
    p.add_argument("--dimension", action="append", help="restrict to dimension (repeatable)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("parse-judgments", help="turn raw judge responses into rating rows")
    p.add_argument("--input", required=True, help="JSON lines with prompt_id, dimension, model, judge, response_text")
    p.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
    p.add_argument("--label-maps", help="label map JSON (default: bundled)")
    p.add_argument("--lenient", action="store_true", help="accept close label matches")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic ratings table")
    p.add_argument("--preset", choices=["two-model", "nine-model"], default="two-model")
    p.add_argument("--n", type=int, default=2000, help="number of prompts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta-quality", type=float, default=0.0, help="two-model: judge quality shift")
    p.add_argument("--gamma", type=float, default=0.25, help="two-model: self-bias")
    p.add_argument("--annotators", type=int, default=0, help="simulated human annotators per cell")
    p.add_argument("--discretize", action="store_true", help="round judge scores to Likert levels")
    p.add_argument("--out", required=True)

    p = sub.add_parser("debias", help="subtract estimated bias from judge scores")
    _add_data(p)
    p.add_argument("--report", required=True, help="report JSON from fit")
    p.add_argument("--slice", default="all")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replicate", help="full analysis pipeline")
    p.add_argument("--dataset", help="directory with ratings.csv, config.json and optional gold.csv")
    p.add_argument("--config")
    _add_fit_opts(p)
    p.add_argument("--n", type=int, default=596, help="synthetic prompts when no dataset is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    return parser


COMMANDS = {"fit": cmd_fit, "slice": cmd_slice, "robust": cmd_robust, "agreement": cmd_agreement,
            "correlate": cmd_correlate, "heatmap": cmd_heatmap, "parse-judgments": cmd_parse,
            "simulate": cmd_simulate, "debias": cmd_debias, "replicate": cmd_replicate}


def _module_of(exc: BaseException) -> str:
    for frame in reversed(list(_walk_tb(exc.__traceback__))):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("selfbias.") and mod != __name__:
            return mod.split(".")[-1]
    return type(exc).__module__.split(".")[-1]


def _walk_tb(tb):
    while tb is not None:
        yield tb.tb_frame
        tb = tb.tb_next


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 1), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "verbose")}
    start = time.perf_counter()
    try:
        outputs = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"selfbias {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, KeyError, OSError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"selfbias {args.command}: error in {_module_of(exc)}: {exc}", file=sys.stderr)
        return 1
    inputs = [str(v) for k in ("data", "input", "gold", "report", "dataset") if (v := getattr(args, k, None))]
    config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    manifest = RunManifest(args.command, config_path, inputs, options, seed=getattr(args, "seed", None),
                           output_paths=list(outputs), wall_time_ms=int(1000 * (time.perf_counter() - start)))
    out = Path(args.out)
    manifest.write(out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json"))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    return run(argv)
