"""Command-line entry point: ``replisim <subcommand>``.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path

from ._version import __version__
from .analysis import AnalysisReport, analyze_study
from .assess import (
    AssessedFinding,
    SignificancePolicy,
    aggregate_outcomes,
    assess_study,
    benchmark_report,
    bin_by_effect_size,
    bin_by_original_p,
)
from .gateway import GatewayError, ProviderConfig
from .orchestrator import AnalysisDataset, StoreError
from .pipeline import FIXTURE_NAME, RunManifest, StudyInvalid, data_path, resolve_study_path, run_study
from .reporting import series_csv, series_from_bins, series_svg
from .stats import StatsError
from .study import StudyError, load_findings_table, load_study, validate_study_spec

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("replisim")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_validate(args: argparse.Namespace) -> int:
    path = resolve_study_path(args.study)
    try:
        study = load_study(path, strict=False)
    except StudyError as e:
        print(f"invalid: {e}")
        return EXIT_INVALID
    violations = validate_study_spec(study, path.parent)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)")
        return EXIT_INVALID
    print(f"ok: {study.study_id} ({len(study.conditions)} conditions, {len(study.measures)} measures, n={study.n})")
    return EXIT_OK


def _default_model(args: argparse.Namespace) -> str | None:
    if args.sim_model:
        return args.sim_model
    if args.study == FIXTURE_NAME:
        return str(data_path("packaging_study1a_model.json"))
    return None


def cmd_run(args: argparse.Namespace) -> int:
    if args.manifest:
        m = RunManifest.load(args.manifest)
        config = m.provider_config()
        if args.max_parallel is not None:
            config = dataclasses.replace(config, max_parallel=args.max_parallel)
        study_path, model_path = Path(m.study_file), m.sim_model_file
        seeds = (m.seed_personas, m.seed_assign, m.seed_provider)
        run_id, exclusion = m.run_id, m.exclusion
        out = Path(args.out or m.out_dir)
    else:
        if not args.study:
            print("error: a study file (or --manifest) is required", file=sys.stderr)
            return EXIT_RUNTIME
        config = ProviderConfig(
            provider_kind=args.provider,
            model_name=args.model_name,
            temperature=args.temperature,
            max_parallel=args.max_parallel or 8,
            api_style=args.api_style,
        )
        study_path, model_path = resolve_study_path(args.study), _default_model(args)
        seeds = (args.seed_personas, args.seed_assign, args.seed_provider)
        run_id, exclusion = args.run_id, args.exclusion
        out = Path(args.out or "replisim_run")
    try:
        result = run_study(
            study_path, out, config=config, seed_personas=seeds[0], seed_assign=seeds[1], seed_provider=seeds[2],
            sim_model_path=model_path, run_id=run_id, exclusion=exclusion, resume=args.resume,
        )
    except StudyInvalid as e:
        for v in e.violations:
            print(v)
        return EXIT_INVALID
    except StudyError as e:
        print(f"invalid: {e}")
        return EXIT_INVALID
    except (GatewayError, StoreError, StatsError, FileExistsError, OSError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    ledger = result.ledger
    print(f"run {run_id}: {len(ledger.done())} done, {len(ledger.failed())} failed, "
          f"{ledger.requests_issued} requests issued")
    print(f"dataset: {len(result.dataset)} rows, {len(result.dataset.exclusions)} exclusion(s) -> {result.files['dataset']}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        study = load_study(resolve_study_path(args.study))
        dataset = AnalysisDataset.from_csv(Path(args.dataset).read_text(encoding="utf-8"), study)
    except StudyError as e:
        print(f"invalid: {e}")
        return EXIT_INVALID
    except (OSError, ValueError, StopIteration) as e:
        print(f"error: cannot read inputs: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    report = analyze_study(dataset, study)
    out = Path(args.out or ".")
    _write(out / "analysis.json", report.to_json() + "\n")
    _write(out / "analysis.csv", report.to_csv())
    for f in report.findings:
        r = f.result
        if r is None:
            print(f"{f.finding_id}: error {f.error}")
        elif hasattr(r, "p"):
            print(f"{f.finding_id}: {r.test_kind} stat={r.statistic:.4g} p={r.p:.4g} direction={r.direction_sign:+d}")
        else:
            print(f"{f.finding_id}: insufficient variance (difference sign {r.difference_sign:+d})")
    if report.manipulation_check is not None:
        print(f"manipulation check: {'passed' if report.manipulation_check.passed else 'FAILED'}")
    return EXIT_OK


def cmd_assess(args: argparse.Namespace) -> int:
    try:
        policy = SignificancePolicy.from_pairs(args.policy)
        study = load_study(resolve_study_path(args.study))
        report = AnalysisReport.from_dict(json.loads(Path(args.analysis).read_text(encoding="utf-8")))
    except StudyError as e:
        print(f"invalid: {e}")
        return EXIT_INVALID
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    outcomes, errors = assess_study(study.analysis_plan, report.findings, report.manipulation_failed, policy)
    plans = {p.finding_id: p for p in study.analysis_plan}
    assessed = [AssessedFinding(o.finding_id, plans[o.finding_id].effect.kind, plans[o.finding_id].original, o.replicated)
                for o in outcomes]
    summary = aggregate_outcomes(assessed)
    doc = {
        "study_id": study.study_id,
        "policy": policy.to_dict(),
        "outcomes": [o.to_dict() for o in outcomes],
        "errors": errors,
        "summary": {k: v.to_dict() for k, v in summary.items()},
        "p_bins": bin_by_original_p(assessed).to_dict(),
        "effect_size_bins": bin_by_effect_size(assessed).to_dict(),
    }
    _write(Path(args.out or ".") / "assessment.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for o in outcomes:
        print(f"{o.finding_id}: {o.verdict} ({o.mechanism})")
    for e in errors:
        print(f"{e['finding_id']}: not assessed ({e['error']})")
    print(f"overall {summary['overall'].render()}")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    try:
        policy = SignificancePolicy.from_pairs(args.policy)
        records = load_findings_table(args.table or data_path("table2.csv"))
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    report = benchmark_report(records, policy, censored=args.censored)
    report["elapsed_seconds"] = round(time.perf_counter() - start, 4)

    s = report["summary"]
    print("Recorded outcomes")
    for key, name in (("overall", "overall"), ("main_effects", "main effects"), ("interactions", "interactions")):
        t = s[key]
        rate = "—" if t["rate"] is None else f"{100 * t['rate']:.1f}%"
        print(f"  {name:<13} {t['replicated']}/{t['total']} = {rate}")
    print("Replication by original p-value")
    for b in report["p_bins"]["bins"]:
        print(f"  {b['label']:<14} {b['replicated']}/{b['total']}")
    for f in report["p_bins"]["flags"]:
        print(f"  flag: {f['key']} ({f['value']}) -> {f['assigned']}: {f['reason']}")
    for d in report["p_bins"]["deviations_from_published"]:
        print(f"  deviation: {d['label']} computed {d['computed']} vs published {d['published']}")
    a = report["audit"]
    print(f"Rule audit (alpha={policy.alpha}): {a['agree']}/{a['total']} agree")
    for e in a["flagged"]:
        print(f"  {e['status']}: {e['key']} (original {e['human_p']}, replication {e['ai_p']}, recorded {e['recorded']})")
    for e in a["boundary_sensitive"]:
        print(f"  boundary-sensitive: {e['key']} (original {e['human_p']}, replication {e['ai_p']})")
    if args.out:
        out = Path(args.out)
        _write(out / "benchmark_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        _write(out / "p_bins.csv", _bins_csv(report["p_bins"]))
        _write(out / "effect_size_bins.csv", _bins_csv(report["effect_size_bins"]))
    return EXIT_OK


def _bins_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["label", "lower", "upper", "boundary", "total", "replicated", "failed"], lineterminator="\n")
    w.writeheader()
    w.writerows(table["bins"])
    return buf.getvalue()


def cmd_plotdata(args: argparse.Namespace) -> int:
    try:
        text = Path(args.report).read_text(encoding="utf-8")
        report = json.loads(text) if text.strip() else {}
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out or ".")
    for name, key, title in (("figure2", "p_bins", "Replication by original p-value"),
                             ("figure3", "effect_size_bins", "Replication by original effect size")):
        rows = series_from_bins(report.get(key))
        _write(out / f"{name}_series.csv", series_csv(rows))
        if args.svg:
            _write(out / f"{name}.svg", series_svg(rows, title))
        print(f"{name}: {len(rows)} bins")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replisim", description="Replay media-effects experiments with simulated or LLM personas.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a study specification")
    p.add_argument("study", help=f"study JSON file, or '{FIXTURE_NAME}' for the bundled packaging study")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="collect persona responses and write the dataset")
    p.add_argument("study", nargs="?", help=f"study JSON file, or '{FIXTURE_NAME}'")
    p.add_argument("--provider", choices=("simulated", "live"), default="simulated")
    p.add_argument("--sim-model", help="simulated-respondent model JSON (defaults to the fixture model for the fixture)")
    p.add_argument("--seed-personas", type=int, default=0)
    p.add_argument("--seed-assign", type=int, default=0)
    p.add_argument("--seed-provider", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--max-parallel", type=int, default=None)
    p.add_argument("--model-name", default=ProviderConfig().model_name)
    p.add_argument("--api-style", choices=("anthropic", "openai"), default="anthropic")
    p.add_argument("--run-id", default="run")
    p.add_argument("--exclusion", choices=("study", "finding"), default="study")
    p.add_argument("--resume", action="store_true", help="continue the run recorded in the output directory")
    p.add_argument("--manifest", help="repeat the run described by a manifest.json")
    p.add_argument("--out", help="output directory (default ./replisim_run)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="run every planned test on a dataset")
    p.add_argument("dataset")
    p.add_argument("study")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("assess", help="classify replication outcomes of an analysis")
    p.add_argument("analysis", help="analysis.json written by 'analyze'")
    p.add_argument("study")
    p.add_argument("--policy", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("benchmark-table2", help="replay the bundled 133-finding table")
    p.add_argument("--table", help="findings CSV (defaults to the bundled table)")
    p.add_argument("--policy", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--censored", choices=("lowest", "upper"), default="lowest",
                   help="bin for censored p-values straddling a boundary")
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plotdata", help="write plot-ready series from a report")
    p.add_argument("report", help="benchmark_report.json or assessment.json")
    p.add_argument("--svg", action="store_true", help="also write simple SVG bar charts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
