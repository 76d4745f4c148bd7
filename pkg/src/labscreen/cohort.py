"""Cohort assembly: range filtering, nested case-control sampling, windowing.

File contracts (comma-delimited, ISO dates):

* subjects: ``subject_id,event_date,exposure_start_date,age_at_start,sex,race,obs_start,obs_end``
* measurements: ``subject_id,lab_name,date,value``
* ranges: ``lab_name,lo,hi,frequency_days``
* cohort: ``subject_id,role,index_date,stratum,split``

Randomness uses numpy's PCG64 bit generator (``numpy.random.default_rng``)
and only its ``random()`` double stream: draws are made by sorting uniform
keys, so a seed reproduces the same cohort on any platform.
"""

from __future__ import annotations

import logging
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    InsufficientControlsError,
    InvalidInputError,
    UnknownLabError,
)
from .spline import WINDOW_DAYS

log = logging.getLogger(__name__)

SUBJECT_COLUMNS = [
    "subject_id", "event_date", "exposure_start_date", "age_at_start",
    "sex", "race", "obs_start", "obs_end",
]
MEASUREMENT_COLUMNS = ["subject_id", "lab_name", "date", "value"]
RANGE_COLUMNS = ["lab_name", "lo", "hi", "frequency_days"]
COHORT_COLUMNS = ["subject_id", "role", "index_date", "stratum", "split"]

DEFAULT_RANGES = pd.DataFrame(
    [
        ("albumin", 0.1, 6.0, 30),
        ("calcium", 5.0, 20.0, 7),
        ("co2", 2.0, 50.0, 30),
        ("creatinine", 0.1, 30.0, 30),
        ("ferritin", 0.0, 10000.0, 90),
        ("hemoglobin", 2.0, 20.0, 7),
        ("iron_saturation", 0.0, 100.0, 30),
        ("phosphorus", 0.5, 20.0, 7),
        ("platelets", 0.0, 5000.0, 30),
        ("potassium", 1.0, 9.0, 30),
        ("wbc", 0.0, 100.0, 30),
    ],
    columns=RANGE_COLUMNS,
)
LABS = tuple(DEFAULT_RANGES["lab_name"])

RACES = ("caucasian", "african_american", "hispanic", "asian", "other")
COVARIATES = ("age", "male", "race_african_american", "race_hispanic",
              "race_asian", "race_other", "vintage")
ACTIVE_DAYS = 14


# --- file io ---------------------------------------------------------------

def read_subjects(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"subject_id": str, "sex": str, "race": str})
    missing = set(SUBJECT_COLUMNS) - set(df.columns)
    if missing:
        raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
    for col in ("event_date", "exposure_start_date", "obs_start", "obs_end"):
        df[col] = _parse_dates(df[col], f"{path}:{col}")
    return df[SUBJECT_COLUMNS]


def read_measurements(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"subject_id": str, "lab_name": str})
    missing = set(MEASUREMENT_COLUMNS) - set(df.columns)
    if missing:
        raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
    df["date"] = _parse_dates(df["date"], f"{path}:date")
    df["value"] = pd.to_numeric(df["value"], errors="raise")
    return df[MEASUREMENT_COLUMNS]


def read_ranges(path=None) -> pd.DataFrame:
    if path is None:
        return DEFAULT_RANGES.copy()
    df = pd.read_csv(path, dtype={"lab_name": str})
    missing = set(RANGE_COLUMNS) - set(df.columns)
    if missing:
        raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
    return df[RANGE_COLUMNS]


def read_cohort(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"subject_id": str, "role": str, "stratum": str,
                                  "split": str}, keep_default_na=False)
    missing = set(COHORT_COLUMNS) - set(df.columns)
    if missing:
        raise InvalidInputError(f"{path}: missing columns {sorted(missing)}")
    df["index_date"] = _parse_dates(df["index_date"], f"{path}:index_date")
    return df[COHORT_COLUMNS]


def write_frame(df: pd.DataFrame, path, columns=None):
    out = df if columns is None else df[columns]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(path, index=False, date_format="%Y-%m-%d", float_format="%.10g",
               lineterminator="\n")


def _parse_dates(col: pd.Series, where: str) -> pd.Series:
    try:
        return pd.to_datetime(col, format="%Y-%m-%d")
    except (ValueError, TypeError) as exc:
        raise InvalidInputError(f"{where}: malformed date ({exc})") from None


def _days(dates) -> np.ndarray:
    return np.asarray(dates, dtype="datetime64[D]").astype(np.int64)


# --- range filtering -------------------------------------------------------

def filter_ranges(series: pd.DataFrame, ranges: pd.DataFrame | None = None):
    """Drop values outside each lab's acceptable range (bounds inclusive).

    Returns ``(filtered, drops)`` where ``drops`` counts removed rows per lab.
    """
    ranges = DEFAULT_RANGES if ranges is None else ranges
    if series.empty:
        return series.copy(), pd.Series(dtype=np.int64, name="dropped")
    table = ranges.set_index("lab_name")
    unknown = sorted(set(series["lab_name"]) - set(table.index))
    if unknown:
        raise UnknownLabError(f"no acceptable range for lab(s): {', '.join(unknown)}")
    lo = series["lab_name"].map(table["lo"]).to_numpy(float)
    hi = series["lab_name"].map(table["hi"]).to_numpy(float)
    v = series["value"].to_numpy(float)
    keep = (v >= lo) & (v <= hi)
    drops = (~pd.Series(keep, index=series.index)).groupby(series["lab_name"]).sum()
    drops = drops.astype(np.int64).rename("dropped")
    if (~keep).any():
        log.info("range filter dropped %d of %d values", int((~keep).sum()), len(v))
    return series.loc[keep].copy(), drops


# --- sampling --------------------------------------------------------------

def _validate_subjects(subjects: pd.DataFrame):
    ev = subjects["event_date"]
    has = ev.notna()
    bad = has & ((ev < subjects["obs_start"]) | (ev > subjects["obs_end"]))
    if bad.any():
        sid = subjects.loc[bad, "subject_id"].iloc[0]
        raise InvalidInputError(f"subject {sid}: event date outside observation interval")
    if subjects["subject_id"].duplicated().any():
        sid = subjects.loc[subjects["subject_id"].duplicated(), "subject_id"].iloc[0]
        raise InvalidInputError(f"duplicate subject id {sid}")


def sample_controls(subjects: pd.DataFrame, seed: int) -> pd.DataFrame:
    """Calendar-month nested case-control sampling.

    For every month with ``k`` events, ``k`` controls are drawn without
    replacement from subjects who are event-free through the end of the
    month and under observation for the whole month.  Future cases are
    eligible.  Each control is paired at random with one of the month's
    cases and takes that case's event date as its index date.
    """
    _validate_subjects(subjects)
    rng = np.random.default_rng(seed)
    subj = subjects.sort_values("subject_id", kind="stable").reset_index(drop=True)
    ids = subj["subject_id"].to_numpy()
    event = subj["event_date"]
    event_day = np.where(event.notna(), _days(event.fillna(pd.Timestamp(0))), np.iinfo(np.int64).max)
    obs_start = _days(subj["obs_start"])
    obs_end = _days(subj["obs_end"])

    cases = subj.loc[event.notna(), ["subject_id", "event_date"]].copy()
    if cases.empty:
        raise InvalidInputError("no subject has an event")
    cases["stratum"] = cases["event_date"].dt.strftime("%Y-%m")
    cases = cases.sort_values(["stratum", "event_date", "subject_id"], kind="stable")

    rows = []
    for stratum, block in cases.groupby("stratum", sort=True):
        period = pd.Period(stratum, freq="M")
        m_start = _days([period.start_time])[0]
        m_end = _days([period.end_time.normalize()])[0]
        eligible = (event_day > m_end) & (obs_start <= m_start) & (obs_end >= m_end)
        pool = ids[eligible]
        k = len(block)
        if pool.size < k:
            raise InsufficientControlsError(stratum, k, int(pool.size))
        chosen = pool[np.argsort(rng.random(pool.size), kind="stable")[:k]]
        pairing = np.argsort(rng.random(k), kind="stable")
        case_dates = block["event_date"].to_numpy()
        for sid, date in zip(block["subject_id"], case_dates):
            rows.append((sid, "case", date, stratum))
        for sid, j in zip(chosen, pairing):
            rows.append((sid, "control", case_dates[j], stratum))
    cohort = pd.DataFrame(rows, columns=["subject_id", "role", "index_date", "stratum"])
    cohort["index_date"] = pd.to_datetime(cohort["index_date"])
    cohort["split"] = ""
    return cohort[COHORT_COLUMNS]


def split_cohort(cohort: pd.DataFrame, cutoff_year: int):
    """Strata before ``cutoff_year`` train, strata in it validate.

    Strata after the cutoff year belong to neither side and are dropped.
    """
    year = cohort["stratum"].str.slice(0, 4).astype(int)
    train = cohort.loc[year < cutoff_year].copy()
    valid = cohort.loc[year == cutoff_year].copy()
    train["split"] = "train"
    valid["split"] = "validation"
    later = int((year > cutoff_year).sum())
    if later:
        warnings.warn(f"{later} cohort rows after {cutoff_year} dropped from both splits",
                      stacklevel=2)
    for name, part in (("train", train), ("validation", valid)):
        if part.empty:
            warnings.warn(f"empty {name} split at cutoff year {cutoff_year}", stacklevel=2)
    return train, valid


def label_splits(cohort: pd.DataFrame, cutoff_year: int) -> pd.DataFrame:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train, valid = split_cohort(cohort, cutoff_year)
    return pd.concat([train, valid]).sort_index()


# --- windowing -------------------------------------------------------------

def abstract_window(subject_id, index_date, series: pd.DataFrame, window: int = WINDOW_DAYS):
    """Measurements of one subject in ``[index - window, index]``.

    Returns the rows with an added ``t`` column (days relative to the index
    date).  An empty frame is a valid result.
    """
    rows = series.loc[series["subject_id"] == subject_id]
    t = (rows["date"] - pd.Timestamp(index_date)).dt.days
    keep = (t >= -window) & (t <= 0)
    out = rows.loc[keep].copy()
    out["t"] = t[keep].astype(float)
    return out.sort_values(["lab_name", "t"], kind="stable")


def record_table(cohort: pd.DataFrame, subjects: pd.DataFrame) -> pd.DataFrame:
    """One row per cohort record with numeric covariates.

    Vintage (years since exposure start) is evaluated at the index date and
    held constant over the window.
    """
    rec = cohort.reset_index(drop=True).copy()
    rec.index.name = "record"
    info = subjects.set_index("subject_id")
    unknown = sorted(set(rec["subject_id"]) - set(info.index))
    if unknown:
        raise InvalidInputError(f"cohort subjects missing from subjects file: {unknown[:5]}")
    s = info.loc[rec["subject_id"]]
    rec["case"] = (rec["role"] == "case").astype(int)
    rec["age"] = s["age_at_start"].to_numpy(float)
    sex = s["sex"].astype(str).str.strip().str.upper().str[:1]
    rec["male"] = np.where(sex.isin(["M", "F"]), (sex == "M").astype(float), np.nan)
    race = (s["race"].astype(str).str.strip().str.lower()
            .str.replace(r"[\s/-]+", "_", regex=True))
    race = race.where(race.isin(RACES), "other")
    for r in RACES[1:]:
        rec[f"race_{r}"] = (race == r).to_numpy(float)
    vintage = (rec["index_date"].to_numpy() - s["exposure_start_date"].to_numpy())
    rec["vintage"] = pd.to_timedelta(vintage).days.to_numpy(float) / 365.25
    rec["event_date"] = s["event_date"].to_numpy()
    return rec


def abstract_windows(records: pd.DataFrame, measurements: pd.DataFrame,
                     window: int = WINDOW_DAYS) -> pd.DataFrame:
    """Window every record's measurements: columns ``record, lab_name, t, value``."""
    wanted = measurements.loc[measurements["subject_id"].isin(set(records["subject_id"]))]
    keys = records[["subject_id", "index_date"]].reset_index()
    merged = wanted.merge(keys, on="subject_id", how="inner")
    t = _days(merged["date"]) - _days(merged["index_date"])
    keep = (t >= -window) & (t <= 0)
    out = pd.DataFrame({
        "record": merged["record"].to_numpy()[keep],
        "lab_name": merged["lab_name"].to_numpy()[keep],
        "t": t[keep].astype(float),
        "value": merged["value"].to_numpy(float)[keep],
    })
    return out.sort_values(["lab_name", "record", "t"], kind="stable").reset_index(drop=True)


def flag_active(records: pd.DataFrame, windows: pd.DataFrame, days: int = ACTIVE_DAYS) -> pd.Series:
    """Cases with any lab measurement within ``days`` of the event."""
    recent = set(windows.loc[windows["t"] >= -days, "record"])
    active = records.index.to_series().isin(recent) & (records["case"] == 1)
    return active.rename("active")
