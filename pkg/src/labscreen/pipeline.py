"""Glue between cohort files and the per-marker analyses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .cohort import COVARIATES, abstract_windows, filter_ranges, flag_active, record_table
from .errors import LabScreenError
from .spline import WINDOW_DAYS

log = logging.getLogger(__name__)


@dataclass
class AnalysisData:
    records: pd.DataFrame          # one row per cohort record, index "record"
    windows: pd.DataFrame          # record, lab_name, t, value
    drops: pd.Series = field(default_factory=lambda: pd.Series(dtype=np.int64))
    covariates: tuple = COVARIATES

    @property
    def labs(self) -> list:
        return sorted(self.windows["lab_name"].unique())

    def select(self, split: str | None = None, active_only: bool = False) -> pd.DataFrame:
        rec = self.records
        if split is not None:
            rec = rec.loc[rec["split"] == split]
        if active_only:
            active = flag_active(self.records, self.windows)
            rec = rec.loc[(rec["case"] == 0) | active.loc[rec.index]]
        return rec

    def marker_frame(self, lab: str, split: str | None = None,
                     active_only: bool = False) -> pd.DataFrame:
        """Long-format rows for one lab, joined with case flag and covariates."""
        rec = self.select(split, active_only)
        w = self.windows.loc[self.windows["lab_name"] == lab]
        w = w.loc[w["record"].isin(rec.index)]
        cols = ["case", *self.covariates]
        return w.join(rec[cols], on="record").reset_index(drop=True)


def prepare(subjects, measurements, cohort, ranges=None, window: int = WINDOW_DAYS) -> AnalysisData:
    filtered, drops = filter_ranges(measurements, ranges)
    records = record_table(cohort, subjects)
    windows = abstract_windows(records, filtered, window)
    return AnalysisData(records=records, windows=windows, drops=drops)


def run_each(labs, func):
    """Apply ``func`` to every lab, collecting failures instead of stopping."""
    results, failures = {}, {}
    for lab in labs:
        try:
            results[lab] = func(lab)
        except LabScreenError as exc:
            log.error("%s: %s", lab, exc)
            failures[lab] = exc
    return results, failures
