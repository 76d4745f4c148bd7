"""Synthetic dialysis-style cohorts with known marker behaviour.

Every subject has, for every lab, a latent level that is linear in calendar
time plus a subject random intercept and Gaussian measurement noise.  For a
"useful" marker, subjects who go on to have an event get an extra departure
over the ``onset_days`` before the event.  Measurements follow the lab's
collection cadence with uniform jitter, so sampling is irregular but does
not depend on the subject's state.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from .cohort import DEFAULT_RANGES, RACES, write_frame
from .errors import ConfigError
from .spline import SCAN_STEP, WINDOW_DAYS

# mean, sd (lab units), linear drift per year (sd units)
LAB_SCALES = {
    "albumin": (3.7, 0.35, -0.10),
    "calcium": (9.1, 0.6, 0.00),
    "co2": (22.0, 2.5, 0.05),
    "creatinine": (7.5, 1.8, 0.10),
    "ferritin": (700.0, 150.0, 0.15),
    "hemoglobin": (11.5, 1.0, -0.05),
    "iron_saturation": (30.0, 5.0, 0.00),
    "phosphorus": (5.2, 1.0, 0.05),
    "platelets": (220.0, 30.0, -0.05),
    "potassium": (4.7, 0.5, 0.00),
    "wbc": (7.0, 1.4, 0.05),
}
RACE_PROBS = (0.70, 0.255, 0.03, 0.01, 0.005)


@dataclass(frozen=True)
class MarkerSpec:
    kind: str = "null"             # "null" or "useful"
    onset_days: int = 28
    direction: str = "drop"        # "drop" or "rise"
    amplitude: float = 0.0         # departure at t = 0, in marker sd units
    shape: str = "cubic"           # "cubic" or "logistic"

    @property
    def useful(self) -> bool:
        return self.kind == "useful"


def default_markers() -> dict:
    null = MarkerSpec()
    return {
        "albumin": MarkerSpec("useful", 28, "drop", 4.0),
        "calcium": null,
        "co2": null,
        "creatinine": null,
        "ferritin": null,
        "hemoglobin": MarkerSpec("useful", 28, "drop", 1.5),
        "iron_saturation": MarkerSpec("useful", 168, "drop", 1.5),
        "phosphorus": null,
        "platelets": MarkerSpec("useful", 42, "drop", 4.0),
        "potassium": null,
        "wbc": MarkerSpec("useful", 56, "rise", 4.0),
    }


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    start_year: int = 2004
    end_year: int = 2008
    cases_per_year: int = 125
    pool_ratio: float = 1.5        # never-event subjects per case
    markers: dict = field(default_factory=default_markers)
    cadence_jitter: float = 0.3
    noise_sd: float = 0.8
    intercept_sd: float = 0.6
    age_effect: float = 0.02       # sd units per year of age above 75
    male_effect: float = 0.2
    max_vintage_days: int = 1500

    def validate(self):
        if self.end_year < self.start_year:
            raise ConfigError("end_year", "must not precede start_year")
        if self.cases_per_year < 1:
            raise ConfigError("cases_per_year", "must be at least 1")
        if not self.pool_ratio >= 0:
            raise ConfigError("pool_ratio", "must be non-negative")
        if not 0 <= self.cadence_jitter < 1:
            raise ConfigError("cadence_jitter", "must be in [0, 1)")
        if not (self.noise_sd > 0 and self.intercept_sd >= 0):
            raise ConfigError("noise_sd", "noise_sd must be positive, intercept_sd non-negative")
        for name, spec in self.markers.items():
            if name not in LAB_SCALES:
                raise ConfigError(f"markers.{name}", "unknown lab")
            if spec.kind not in ("null", "useful"):
                raise ConfigError(f"markers.{name}.kind", f"unknown kind {spec.kind!r}")
            if not spec.amplitude >= 0:
                raise ConfigError(f"markers.{name}.amplitude", "must be >= 0")
            if spec.onset_days <= 0 or spec.onset_days % SCAN_STEP or spec.onset_days > WINDOW_DAYS:
                raise ConfigError(f"markers.{name}.onset_days",
                                  f"must be a positive multiple of {SCAN_STEP} up to {WINDOW_DAYS}")
            if spec.direction not in ("drop", "rise"):
                raise ConfigError(f"markers.{name}.direction", "must be 'drop' or 'rise'")
            if spec.shape not in ("cubic", "logistic"):
                raise ConfigError(f"markers.{name}.shape", "must be 'cubic' or 'logistic'")
        return self

    def with_markers(self, **specs) -> "GeneratorConfig":
        return replace(self, markers={**self.markers, **specs})

    def only(self, *names) -> "GeneratorConfig":
        return replace(self, markers={n: self.markers[n] for n in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["markers"] = {k: asdict(v) for k, v in self.markers.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        if "markers" in d:
            d["markers"] = {k: MarkerSpec(**v) for k, v in d["markers"].items()}
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown config field")
        return cls(**d)


def departure(t, spec: MarkerSpec) -> np.ndarray:
    """Signed departure from the linear trend, in sd units, at times ``t``."""
    t = np.asarray(t, dtype=float)
    if not spec.useful or spec.amplitude == 0:
        return np.zeros_like(t)
    sign = -1.0 if spec.direction == "drop" else 1.0
    u = np.clip((t + spec.onset_days) / spec.onset_days, 0.0, None)
    if spec.shape == "cubic":
        shape = u**3
    else:
        # ramp centred mid-way through the onset period, outside the spline span
        lo, hi = expit(-6.0), expit(6.0)
        shape = np.where(u > 0, (expit(12.0 * (u - 0.5)) - lo) / (hi - lo), 0.0)
    return sign * spec.amplitude * np.where(t <= 0, shape, 0.0)


def _ranges_table():
    return DEFAULT_RANGES.set_index("lab_name")


def generate(config: GeneratorConfig):
    """Draw a synthetic population.

    Returns ``(subjects, measurements, truth)`` where the frames follow the
    cohort module's file contracts and ``truth`` maps each marker to its
    generating spec.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_years = config.end_year - config.start_year + 1
    n_cases = config.cases_per_year * n_years
    n_pool = int(round(config.pool_ratio * n_cases))
    n = n_cases + n_pool

    study_start = np.datetime64(f"{config.start_year}-01-01", "D")
    study_end = np.datetime64(f"{config.end_year}-12-31", "D")
    obs_start_day = study_start - (WINDOW_DAYS + 3)

    is_case = np.zeros(n, dtype=bool)
    is_case[rng.permutation(n)[:n_cases]] = True
    event = np.full(n, np.datetime64("NaT"), dtype="datetime64[D]")
    case_idx = np.flatnonzero(is_case)
    year_of_case = np.repeat(np.arange(n_years), config.cases_per_year)
    for y in range(n_years):
        first = np.datetime64(f"{config.start_year + y}-01-01", "D")
        last = np.datetime64(f"{config.start_year + y}-12-31", "D")
        span = int((last - first).astype(int)) + 1
        sel = case_idx[year_of_case == y]
        event[sel] = first + np.floor(rng.random(sel.size) * span).astype(int)

    obs_start = np.full(n, obs_start_day)
    obs_end = np.where(is_case, event, study_end)
    exposure = obs_start - np.floor(rng.random(n) * config.max_vintage_days).astype(int)
    age = np.round(67.0 + rng.gamma(2.0, 4.0, size=n), 1)
    male = rng.random(n) < 0.5
    race_idx = np.searchsorted(np.cumsum(RACE_PROBS), rng.random(n) * np.sum(RACE_PROBS))
    race_idx = np.minimum(race_idx, len(RACES) - 1)

    ids = np.array([f"S{i:06d}" for i in range(1, n + 1)])
    subjects = pd.DataFrame({
        "subject_id": ids,
        "event_date": pd.to_datetime(event),
        "exposure_start_date": pd.to_datetime(exposure),
        "age_at_start": age,
        "sex": np.where(male, "M", "F"),
        "race": np.array(RACES)[race_idx],
        "obs_start": pd.to_datetime(obs_start),
        "obs_end": pd.to_datetime(obs_end),
    })

    ranges = _ranges_table()
    start_d = obs_start.astype(np.int64)
    end_d = obs_end.astype(np.int64)
    event_d = np.where(is_case, event.astype("datetime64[D]").astype(np.int64), 0)
    span = end_d - start_d
    ref_day = int(study_start.astype(np.int64))
    cov_shift = config.age_effect * (age - 75.0) + config.male_effect * male

    frames = []
    for name in sorted(config.markers):
        spec = config.markers[name]
        mean, sd, drift = LAB_SCALES[name]
        cadence = float(ranges.loc[name, "frequency_days"])
        lo, hi = float(ranges.loc[name, "lo"]), float(ranges.loc[name, "hi"])
        jit = config.cadence_jitter
        width = int(np.ceil(span.max() / (cadence * (1 - jit)))) + 2
        gaps = cadence * (1 - jit + 2 * jit * rng.random((n, width)))
        gaps[:, 0] = cadence * rng.random(n)
        offsets = np.floor(np.cumsum(gaps, axis=1)).astype(np.int64)
        mask = offsets <= span[:, None]
        subj_idx = np.nonzero(mask)[0]
        day = start_d[subj_idx] + offsets[mask]
        intercepts = config.intercept_sd * rng.standard_normal(n)
        noise = config.noise_sd * rng.standard_normal(day.size)
        latent = (intercepts[subj_idx] + cov_shift[subj_idx]
                  + drift * (day - ref_day) / 365.25 + noise)
        if spec.useful:
            rel = (day - event_d[subj_idx]).astype(float)
            latent = latent + np.where(is_case[subj_idx], departure(rel, spec), 0.0)
        value = np.clip(mean + sd * latent, lo, hi)
        frames.append(pd.DataFrame({
            "subject_id": ids[subj_idx],
            "lab_name": name,
            "date": day.astype("datetime64[D]"),
            "value": value,
        }))
    measurements = pd.concat(frames, ignore_index=True)
    measurements["date"] = pd.to_datetime(measurements["date"])
    measurements = measurements.sort_values(["subject_id", "lab_name", "date"],
                                            kind="stable").reset_index(drop=True)
    truth = {
        "seed": config.seed,
        "markers": {k: asdict(v) for k, v in sorted(config.markers.items())},
        "config": config.to_dict(),
    }
    return subjects, measurements, truth


def write_generated(out_dir, subjects, measurements, truth):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frame(subjects, out / "subjects.csv")
    write_frame(measurements, out / "measurements.csv")
    write_frame(DEFAULT_RANGES, out / "ranges.csv")
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return out
