"""Cross-configuration summaries of finished runs.

Three tables: per-benchmark recovery by configuration, per-family mean
recovery by configuration, and configurations ranked by overall recovery.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .runner import ExperimentReport, RunRecord, aggregate_ci, load_records

FAMILIES = ("Nguyen", "R", "Livermore", "Jin", "Neat")


def family(benchmark: str) -> str:
    return benchmark.split("-", 1)[0]


def group_reports(records: Sequence[RunRecord]) -> dict[str, dict[str, ExperimentReport]]:
    """``{label: {benchmark: report}}`` in first-seen order."""
    out: dict[str, dict[str, ExperimentReport]] = {}
    for rec in records:
        by_bench = out.setdefault(rec.label, {})
        by_bench.setdefault(rec.benchmark, ExperimentReport(rec.benchmark, rec.label)).runs.append(rec)
    for by_bench in out.values():
        for rep in by_bench.values():
            rep.runs.sort(key=lambda r: r.seed)
    return out


def recovery_matrix(groups) -> tuple[list[str], list[str], dict]:
    labels = list(groups)
    benchmarks: list[str] = []
    for by_bench in groups.values():
        benchmarks += [b for b in by_bench if b not in benchmarks]
    cells = {(b, l): groups[l][b].recovery_rate for l in labels for b in benchmarks if b in groups[l]}
    return benchmarks, labels, cells


def family_summary(groups) -> list[dict]:
    rows = []
    for label, by_bench in groups.items():
        reports = list(by_bench.values())
        mean, half = aggregate_ci(reports)
        row = {"label": label, "all": mean, "all_ci": half, "n_benchmarks": len(reports)}
        for fam in FAMILIES:
            members = [r for r in reports if family(r.benchmark) == fam]
            row[fam] = aggregate_ci(members)[0] if members else None
        rows.append(row)
    return rows


def _cell(x) -> str:
    return "-" if x is None else f"{x:.1f}"


def render(groups) -> str:
    benchmarks, labels, cells = recovery_matrix(groups)
    width = max([12] + [len(l) + 2 for l in labels])
    out = ["Recovery rate (%) by benchmark", f"{'benchmark':<14}" + "".join(f"{l:>{width}}" for l in labels)]
    for b in benchmarks:
        out.append(f"{b:<14}" + "".join(f"{_cell(cells.get((b, l))):>{width}}" for l in labels))

    rows = family_summary(groups)
    fams = [f for f in FAMILIES if any(r[f] is not None for r in rows)]
    out += ["", "Mean recovery (%) by family, +/- 1.96 SE across benchmarks",
            f"{'config':<{width + 2}}{'All':>16}" + "".join(f"{f:>12}" for f in fams)]
    for r in rows:
        ci = "nan" if r["all_ci"] != r["all_ci"] else f"{r['all_ci']:.1f}"
        out.append(f"{r['label']:<{width + 2}}{_cell(r['all']) + ' +/- ' + ci:>16}"
                   + "".join(f"{_cell(r[f]):>12}" for f in fams))

    out += ["", "Configurations ranked by mean recovery (%)"]
    for rank, r in enumerate(sorted(rows, key=lambda r: -r["all"]), 1):
        out.append(f"{rank:>3}. {r['label']:<{width}} {_cell(r['all']):>7}")
    return "\n".join(out)


def write_report(in_dir: str | Path, out_dir: str | Path | None = None) -> str:
    records = load_records(in_dir)
    if not records:
        raise FileNotFoundError(f"no run records under {in_dir}")
    groups = group_reports(records)
    text = render(groups)
    out = Path(out_dir or in_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text + "\n")
    benchmarks, labels, cells = recovery_matrix(groups)
    with open(out / "recovery_matrix.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["benchmark", *labels])
        for b in benchmarks:
            w.writerow([b, *(_cell(cells.get((b, l))) for l in labels)])
    with open(out / "family_summary.csv", "w", newline="") as f:
        rows = family_summary(groups)
        w = csv.DictWriter(f, fieldnames=["label", "n_benchmarks", "all", "all_ci", *FAMILIES])
        w.writeheader()
        w.writerows(rows)
    return text
