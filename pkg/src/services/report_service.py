"""
Report service module

This module turns evaluation JSON documents into tables: per-subject rows,
mean ± std summaries, CSV files and paired significance tests between two
sets of evaluations.
"""
import logging
import os

import pandas as pd

from src.models.report_models import PanopticReport
from src.services.metrics_service import wilcoxon_signed_rank
from src.utils.error_handlers import ConfigError, load_json_model

# Set up logging
logger = logging.getLogger(__name__)

ROW_COLUMNS = ["level", "structure", "metric", "value"]
TESTED_METRICS = ("DSC", "RQ")
SIGNIFICANCE_LEVEL = 0.05


def load_report(path):
    """Read one evaluation JSON."""
    return load_json_model(path, PanopticReport)


def report_frame(report, subject=None):
    """One row per (level, structure, metric)."""
    frame = pd.DataFrame(report.rows(), columns=ROW_COLUMNS)
    if subject is not None:
        frame.insert(0, "subject", subject)
    return frame


def write_rows_csv(report, path):
    """Flatten an evaluation to CSV."""
    report_frame(report).to_csv(path, index=False)
    logger.debug(f"Wrote evaluation rows to {path}")


def subject_name(path):
    name = os.path.basename(path)
    for suffix in (".json", ".csv"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    if name in ("evaluation", "eval", "report"):
        name = os.path.basename(os.path.dirname(os.path.abspath(path))) or name
    return name


def collect_frame(paths):
    """Concatenate the rows of several evaluation JSONs."""
    if not paths:
        raise ConfigError("no evaluation files given")
    frames = [report_frame(load_report(path), subject=f"{i:03d}_{subject_name(path)}") for i, path in enumerate(paths)]
    frame = pd.concat(frames, ignore_index=True)
    frame["value"] = pd.to_numeric(frame["value"], errors="coerce")
    return frame


def summary_table(frame):
    """
    Mean ± std per (level, structure, metric) over subjects.

    Missing values (e.g. ASSD of an empty structure) are skipped.
    """
    grouped = frame.groupby(["level", "structure", "metric"], sort=False)["value"]
    table = grouped.agg(["mean", "std", "count"]).reset_index()
    table["std"] = table["std"].fillna(0.0)
    table["summary"] = [
        f"{m:.3f} ± {s:.3f}" if pd.notna(m) else "n/a" for m, s in zip(table["mean"], table["std"])
    ]
    return table


def compare(baseline_paths, candidate_paths, metrics=TESTED_METRICS):
    """
    Paired Wilcoxon signed-rank tests between two evaluation sets.

    Evaluations are paired by position, so both lists must list the same
    subjects in the same order.

    Returns:
        pd.DataFrame: One row per tested (level, structure, metric)

    Raises:
        ConfigError: If the sets differ in size
    """
    if len(baseline_paths) != len(candidate_paths):
        raise ConfigError(
            f"baseline has {len(baseline_paths)} evaluations, candidate {len(candidate_paths)}; they must pair up"
        )

    keys = ["level", "structure", "metric"]
    baseline = collect_frame(baseline_paths)
    candidate = collect_frame(candidate_paths)
    baseline["pair"] = baseline.groupby(keys).cumcount()
    candidate["pair"] = candidate.groupby(keys).cumcount()
    merged = baseline.merge(candidate, on=keys + ["pair"], suffixes=("_baseline", "_candidate"))
    merged = merged[merged["metric"].isin(metrics)]

    results = []
    for (level, structure, metric), rows in merged.groupby(keys, sort=False):
        rows = rows.dropna(subset=["value_baseline", "value_candidate"])
        if rows.empty:
            continue
        test = wilcoxon_signed_rank(rows["value_baseline"].to_numpy(), rows["value_candidate"].to_numpy())
        results.append({
            "level": level,
            "structure": structure,
            "metric": metric,
            "n": len(rows),
            "baseline_mean": float(rows["value_baseline"].mean()),
            "candidate_mean": float(rows["value_candidate"].mean()),
            "statistic": test.statistic,
            "p_value": test.p_value,
            "exact": test.exact,
            "significant": test.p_value < SIGNIFICANCE_LEVEL,
        })
    logger.info(f"Compared {len(results)} metric columns over {len(baseline_paths)} subject pairs")
    return pd.DataFrame(results)
