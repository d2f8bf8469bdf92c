"""Command-line interface: run, list-benchmarks, verify, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from ..expr import InfixSyntaxError, UnknownSymbolError, format_infix, parse_infix_extended
from ..hybrid import ABLATIONS, SearchConfig
from ..policy import METHODS
from .benchmarks import instantiate_benchmark, load_registry, suites
from .recovery import is_recovered
from .report import write_report
from .runner import run_experiment, summary_table

log = logging.getLogger("hybridsr")


def parse_seeds(text: str) -> int | list[int]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` is an explicit list."""
    text = text.strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return n


def load_config(path: str | None) -> SearchConfig:
    if path is None:
        return SearchConfig()
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a key/value mapping")
    return SearchConfig.from_dict(data)


def _ablations(text: str) -> list[str]:
    flags = [s.strip() for s in text.split(",") if s.strip()]
    bad = set(flags) - ABLATIONS
    if bad:
        raise argparse.ArgumentTypeError(f"unknown ablation(s) {sorted(bad)}; choose from {sorted(ABLATIONS)}")
    return flags


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridsr", description="Generator-seeded GP symbolic regression")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a multi-seed experiment")
    run.add_argument("--benchmark", required=True, help="benchmark name, suite, or comma list (e.g. all, nguyen)")
    run.add_argument("--seeds", type=parse_seeds, default=1, help="count n (seeds 0..n-1) or a comma list")
    run.add_argument("--trainer", choices=METHODS)
    run.add_argument("--gp-generations", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--budget", type=int)
    run.add_argument("--ablation", type=_ablations, help="comma-separated ablation flags")
    run.add_argument("--no-early-stop", action="store_true", help="spend the whole budget")
    run.add_argument("--out", default="results")
    run.add_argument("--config", help="YAML file with SearchConfig keys")
    run.add_argument("--label", help="configuration label used by `report`")
    run.add_argument("--workers", type=int, help="parallel runs (default: $HYBRIDSR_WORKERS or all cores)")
    run.add_argument("--data-seed", type=int, default=0)

    sub.add_parser("list-benchmarks", help="show the benchmark registry")

    ver = sub.add_parser("verify", help="check a candidate expression against a benchmark")
    ver.add_argument("--candidate", required=True, help='infix expression, e.g. "x*(x*x+x+1)"')
    ver.add_argument("--benchmark", required=True)

    rep = sub.add_parser("report", help="summarise run records across configurations")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.add_argument("--out", dest="out_dir")
    return p


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {
        "trainer": args.trainer,
        "gp_generations": args.gp_generations,
        "batch_size": args.batch_size,
        "budget": args.budget,
    }
    if args.ablation is not None:
        overrides["ablations"] = frozenset(args.ablation)
    if args.no_early_stop:
        overrides["early_stop"] = False
    cfg = cfg.with_overrides(**overrides)
    reports = run_experiment(args.benchmark, cfg, args.seeds, out_dir=args.out, workers=args.workers,
                             label=args.label, data_seed=args.data_seed)
    print(summary_table(reports))
    print(f"\nrecords written to {args.out}")
    return 0


def cmd_list(_args) -> int:
    registry = load_registry()
    groups = suites()
    print(f"{'name':<14}{'vars':>5}  {'train':<22}{'test':<22}{'library':<50}ground truth")
    for name, spec in registry.items():
        test = str(spec.test_rule) if spec.test_rule else "same rule"
        print(f"{name:<14}{spec.n_variables:>5}  {str(spec.dataset_rule):<22}{test:<22}"
              f"{','.join(spec.token_set):<50}{spec.ground_truth}")
    print("\nsuites: " + ", ".join(f"{k} ({len(v)})" for k, v in groups.items()))
    return 0


def cmd_verify(args) -> int:
    bench = instantiate_benchmark(args.benchmark)
    try:
        lib, cand = parse_infix_extended(args.candidate, bench.library)
    except (InfixSyntaxError, UnknownSymbolError) as exc:
        print(f"cannot parse candidate: {exc}", file=sys.stderr)
        return 2
    verdict = is_recovered(cand, bench.truth, bench.dataset.domain, lib, bench.truth_library, symbolic=True)
    print(f"benchmark:   {bench.name}  ({format_infix(bench.truth, bench.truth_library)})")
    print(f"candidate:   {format_infix(cand, lib)}")
    print(f"screen:      {'pass' if verdict.recovered else 'fail'} "
          f"({verdict.n_valid} points, max scaled error {verdict.max_error:.3g})")
    sym = {True: "zero difference", False: "not reduced to zero", None: "not run"}[verdict.symbolic]
    print(f"symbolic:    {sym}")
    print(f"recovered:   {verdict.recovered}")
    return 0 if verdict.recovered else 1


def cmd_report(args) -> int:
    print(write_report(args.in_dir, args.out_dir))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    handlers = {"run": cmd_run, "list-benchmarks": cmd_list, "verify": cmd_verify, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
