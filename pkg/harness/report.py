"""
Report rendering: machine-readable JSON and the text tables.
"""
from typing import Dict, List

from harness.harness_models import AblationMode, BenchmarkReport, TaskSummary
from utils.serialization import dumps, round_floats


def report_bytes(report: BenchmarkReport) -> bytes:
    """Canonical JSON; identical reports give identical bytes."""
    return dumps(round_floats(report.model_dump(mode="json")), indent=True) + b"\n"


def _rate(s: TaskSummary, with_std: bool) -> str:
    text = f"{100.0 * s.success_rate:.1f}%"
    return f"{text} ± {100.0 * s.success_std:.1f}" if with_std else text


def _time(s: TaskSummary, with_std: bool) -> str:
    text = f"{s.mean_time_s:.1f}"
    return f"{text} ± {s.time_std:.1f}" if with_std else text


def _table(header: List[str], rows: List[List[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]

    def line(cells: List[str]) -> str:
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def render_table(report: BenchmarkReport) -> str:
    """Task | Success | Time(s) with a Total row, then the failure breakdown."""
    with_std = report.repeats > 1
    rows = [[s.task, _rate(s, with_std), _time(s, with_std)] for s in report.tasks]
    rows.append(["Total", _rate(report.total, with_std), _time(report.total, with_std)])
    out = _table(["Task", "Success", "Time(s)"], rows)
    out += (
        f"\nmode={report.mode.value} noise={report.noise} trials/task={report.trials_per_task} "
        f"repeats={report.repeats}\n"
        f"mean extraction time {report.total.mean_extraction_time_s:.1f} s, "
        f"mean grounding time {report.total.mean_grounding_time_s:.1f} s (not included in Time)\n"
    )
    if report.failures:
        out += f"failures: {report.failures}\n"
        for category, count in report.error_histogram.items():
            if count:
                out += f"  {category.value}: {count} ({100.0 * count / report.failures:.1f}%)\n"
    return out


def render_ablation(reports: Dict[AblationMode, BenchmarkReport]) -> str:
    rows = []
    for mode, report in reports.items():
        total = report.total
        rows.append([
            mode.value,
            f"{100.0 * total.success_rate:.1f}% ± {100.0 * total.success_std:.1f}",
            f"{total.mean_time_s:.1f} ± {total.time_std:.1f}",
            f"{total.mean_extraction_time_s:.1f}",
        ])
    return _table(["Mode", "Success", "Time(s)", "Extraction(s)"], rows)
