"""
Audit Reports

Emits per-trial and aggregate rows (method, eps_or, eps_or_fdp, eps_max) as
CSV, versioned JSON or a plain-text table, plus the paired comparison of the
quantile score against each baseline.
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import pandas as pd

from .errors import ReportError
from .schemas import SCHEMA_VERSION, AuditResult


logger = logging.getLogger(__name__)

ReportFormat = Literal["csv", "json", "table"]

COLUMNS = ["scope", "trial", "method", "eps_or", "eps_or_fdp", "eps_max"]

CAVEATS = [
    "eps_or and eps_or_fdp use the same binomial dominance bound, at arity 2 and at arity K; "
    "eps_or_fdp is not the exact f-DP estimator.",
    "Bounds are computed for delta = 0 at alpha per estimate.",
    "The maximum over guess budgets and over the two procedures is not corrected for multiple comparisons.",
]


def check_complete(result: AuditResult):
    """
    Raises:
        ReportError: If the result has no trials or misses some
    """
    if not result.trials:
        raise ReportError("result has no trials to report")
    missing = result.missing_trials()
    if missing:
        raise ReportError(f"result is partial; missing trials: {', '.join(map(str, missing))}")


def summary_frame(result: AuditResult) -> pd.DataFrame:
    """One row per (trial, method), then one 'mean' row per method."""
    check_complete(result)
    rows = []
    for record in sorted(result.trials, key=lambda t: t.trial):
        for rec in record.methods:
            rows.append({
                "scope": "trial",
                "trial": record.trial,
                "method": rec.method,
                "eps_or": rec.eps_or,
                "eps_or_fdp": rec.eps_or_fdp,
                "eps_max": rec.eps_max,
            })
    for row in result.aggregates:
        rows.append({
            "scope": "mean",
            "trial": None,
            "method": row.method,
            "eps_or": row.eps_or,
            "eps_or_fdp": row.eps_or_fdp,
            "eps_max": row.eps_max,
        })
    frame = pd.DataFrame(rows, columns=COLUMNS)
    frame["trial"] = frame["trial"].astype("Int64")
    return frame


def improvement_frame(result: AuditResult, target: str = "quantile") -> pd.DataFrame:
    """
    Paired eps_max comparison of `target` against every other method.

    Each trial's difference and ratio use the same release, so they are
    paired. The ratio is empty when the baseline bound is 0.
    """
    check_complete(result)
    methods = [rec.method for rec in result.trials[0].methods]
    if target not in methods:
        return pd.DataFrame(columns=["baseline", "trial", "target_eps_max", "baseline_eps_max", "difference", "ratio"])

    rows = []
    for baseline in (m for m in methods if m != target):
        for record in sorted(result.trials, key=lambda t: t.trial):
            ours = record.method(target).eps_max
            theirs = record.method(baseline).eps_max
            rows.append({
                "baseline": baseline,
                "trial": record.trial,
                "target_eps_max": ours,
                "baseline_eps_max": theirs,
                "difference": ours - theirs,
                "ratio": ours / theirs if theirs > 0 else np.nan,
            })
    return pd.DataFrame(rows)


def write_csv(result: AuditResult, path: Union[str, Path]) -> Path:
    """RFC 4180 style: comma separated, CRLF line endings, header row."""
    path = Path(path)
    summary_frame(result).to_csv(path, index=False, lineterminator="\r\n")
    return path


def write_json(result: AuditResult, path: Union[str, Path]) -> Path:
    check_complete(result)
    path = Path(path)
    path.write_text(result.model_dump_json(indent=2))
    return path


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.4f}"


def format_table(result: AuditResult) -> str:
    """Human-readable report: caveats, summary rows and the paired comparison."""
    frame = summary_frame(result)
    config = result.config
    lines = [
        f"Audit report: {config.name} ({config.mechanism.kind}, {len(result.trials)} trials, "
        f"alpha={config.alpha})",
        "",
        "Caveats:",
    ]
    lines += [f"  - {text}" for text in CAVEATS + list(result.notes)]
    lines.append("")

    display = frame.copy()
    for column in ("eps_or", "eps_or_fdp", "eps_max"):
        display[column] = display[column].map(_fmt)
    display["trial"] = display["trial"].map(lambda t: "-" if pd.isna(t) else str(t))
    lines.append(display.to_string(index=False))

    if result.ground_truth:
        lines.append("")
        lines.append("Ground truth: " + ", ".join(f"{g}={v:.4f}" for g, v in result.ground_truth.items()))

    improvements = improvement_frame(result)
    if not improvements.empty:
        lines.append("")
        lines.append("Paired eps_max improvement of quantile:")
        for baseline, group in improvements.groupby("baseline", sort=False):
            ratios = group["ratio"].dropna()
            best_ratio = _fmt(float(ratios.max())) if len(ratios) else "-"
            lines.append(
                f"  vs {baseline}: mean difference {group['difference'].mean():+.4f}, "
                f"max ratio {best_ratio}, better in {int((group['difference'] > 0).sum())}/{len(group)} trials"
            )
    return "\n".join(lines) + "\n"


def report(
    result: AuditResult,
    fmt: ReportFormat,
    out_dir: Union[str, Path],
) -> Path:
    """
    Write one report artifact into out_dir.

    Returns:
        Path of summary.csv, result.json or report.txt

    Raises:
        ReportError: On an empty or partial result, or an unknown format
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = write_csv(result, out / "summary.csv")
    elif fmt == "json":
        path = write_json(result, out / "result.json")
    elif fmt == "table":
        path = out / "report.txt"
        path.write_text(format_table(result))
    else:
        raise ReportError(f"unknown report format '{fmt}'")
    logger.info("wrote %s report to %s", fmt, path)
    return path


def load_result(run_dir: Union[str, Path]) -> AuditResult:
    """
    Read result.json from a run directory.

    Raises:
        ReportError: If the file is missing or from another schema version
    """
    path = Path(run_dir) / "result.json"
    if not path.exists():
        raise ReportError(f"no result.json in {run_dir}")
    result = AuditResult.model_validate_json(path.read_text())
    if result.schema_version != SCHEMA_VERSION:
        raise ReportError(f"result schema {result.schema_version} is not supported (expected {SCHEMA_VERSION})")
    return result


def list_runs(root: Union[str, Path]) -> List[Path]:
    """Run directories under root, i.e. those holding a result.json."""
    root = Path(root)
    if not root.exists():
        return []
    return sorted(p.parent for p in root.glob("*/result.json"))
