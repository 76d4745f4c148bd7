"""Delimited-text report writers and readers."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .prediction import PREDICTOR_NOTE
from .screening import MarkerReport

NO_ONSET = "—"
SCREEN_COLUMNS = ["marker", "p_overall", "p_cases", "p_controls", "passes", "onset_days", "error"]
VALIDATION_COLUMNS = ["marker", "c_base", "c_marker", "p_improvement", "n_validation_cases",
                      "n_validation_controls", "separability_flag"]
BASELINE_ROW = "demographics_only"


def screen_rows(reports: dict, failures: dict) -> pd.DataFrame:
    rows = []
    for marker in sorted(set(reports) | set(failures)):
        if marker in reports:
            r: MarkerReport = reports[marker]
            onset = r.onset_days if r.onset_days is not None else NO_ONSET
            rows.append((marker, r.test_overall.p_adjusted, r.test_cases_nonlinear.p_adjusted,
                         r.test_controls_linear.p_adjusted, bool(r.passes), onset, ""))
        else:
            rows.append((marker, np.nan, np.nan, np.nan, False, NO_ONSET,
                         f"{type(failures[marker]).__name__}: {failures[marker]}"))
    return pd.DataFrame(rows, columns=SCREEN_COLUMNS)


def write_screen_report(table: pd.DataFrame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.6g", lineterminator="\n")


def read_screen_report(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"marker": str, "onset_days": str, "error": str},
                     keep_default_na=False, na_values={"p_overall": [""], "p_cases": [""],
                                                       "p_controls": [""]})
    df["passes"] = df["passes"].astype(str).str.lower() == "true"
    onset = [None if v in (NO_ONSET, "") else int(v) for v in df["onset_days"]]
    df["onset_days"] = pd.Series(onset, index=df.index, dtype=object)
    return df


def write_marker_json(report: MarkerReport, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def validation_rows(results: dict, baseline: float | None, n_cases=0, n_controls=0) -> pd.DataFrame:
    rows = []
    if baseline is not None:
        rows.append((BASELINE_ROW, baseline, baseline, np.nan, n_cases, n_controls, False))
    for marker in sorted(results):
        r = results[marker]
        rows.append((marker, r.c_base, r.c_marker, r.p_improvement, r.n_validation_cases,
                     r.n_validation_controls, r.separability_flag))
    return pd.DataFrame(rows, columns=VALIDATION_COLUMNS)


def write_validation_report(table: pd.DataFrame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# {PREDICTOR_NOTE}\n")
    table.to_csv(buf, index=False, float_format="%.6g", lineterminator="\n")
    Path(path).write_text(buf.getvalue())


def read_validation_report(path) -> pd.DataFrame:
    df = pd.read_csv(path, comment="#", dtype={"marker": str})
    df["separability_flag"] = df["separability_flag"].astype(str).str.lower() == "true"
    return df


def _fmt_p(p):
    if p is None or (isinstance(p, float) and np.isnan(p)):
        return "NA"
    return "< 0.001" if p < 0.001 else f"{p:.3f}"


def format_screen_table(table: pd.DataFrame) -> str:
    head = f"{'marker':<18}{'overall':>10}{'cases':>10}{'controls':>10}{'pass':>6}{'onset':>8}"
    lines = [head, "-" * len(head)]
    for row in table.itertuples(index=False):
        onset = row.onset_days if row.onset_days not in (None, NO_ONSET) else NO_ONSET
        onset = f"{onset} d" if onset != NO_ONSET else onset
        lines.append(f"{row.marker:<18}{_fmt_p(row.p_overall):>10}{_fmt_p(row.p_cases):>10}"
                     f"{_fmt_p(row.p_controls):>10}{('yes' if row.passes else 'no'):>6}{onset:>8}")
        if row.error:
            lines.append(f"  failed: {row.error}")
    return "\n".join(lines)


def format_validation_table(table: pd.DataFrame) -> str:
    head = f"{'marker':<20}{'c_base':>8}{'c_marker':>10}{'p':>10}{'cases':>7}{'ctrls':>7}"
    lines = [f"# {PREDICTOR_NOTE}", head, "-" * len(head)]
    for row in table.itertuples(index=False):
        lines.append(f"{row.marker:<20}{row.c_base:>8.3f}{row.c_marker:>10.3f}"
                     f"{_fmt_p(row.p_improvement):>10}{row.n_validation_cases:>7}"
                     f"{row.n_validation_controls:>7}")
    return "\n".join(lines)
