"""Command line interface.

Subcommands: generate, sample, screen, validate, demo-tps.
Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .cohort import (
    COHORT_COLUMNS,
    label_splits,
    read_cohort,
    read_measurements,
    read_ranges,
    read_subjects,
    sample_controls,
    write_frame,
)
from .demo import demo_tps
from .errors import ConfigError, DataError, LabScreenError, NumericalError
from .pipeline import prepare, run_each
from .prediction import baseline_c, validate_marker
from .reports import (
    format_screen_table,
    format_validation_table,
    screen_rows,
    validation_rows,
    write_marker_json,
    write_screen_report,
    write_validation_report,
)
from .screening import marker_curves, screen_marker
from .spline import SCAN_MAX_KNOTS, SCAN_STEP, WINDOW_DAYS, make_knots
from .synthetic import GeneratorConfig, generate, write_generated

log = logging.getLogger("labscreen")

OUT_ENV = "LABSCREEN_OUT"
DEFAULT_CUTOFF = 2008
DEFAULT_OUT = "labscreen_out"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    subjects: Path | None = None
    measurements: Path | None = None
    ranges: Path | None = None
    cohort: Path | None = None
    out: Path = Path(DEFAULT_OUT)
    knots: str = "default"
    alpha: float = 0.05
    bonferroni_m: int = 3
    max_knots: int = SCAN_MAX_KNOTS
    step: int = SCAN_STEP
    window: int = WINDOW_DAYS
    cutoff_year: int | None = None
    seed: int = 0

    def validate(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha", "must be in (0, 1)")
        if self.window <= 0:
            raise ConfigError("window", "must be positive")
        if self.bonferroni_m < 1:
            raise ConfigError("bonferroni_m", "must be positive")
        return self

    def knot_vector(self):
        if self.knots == "default":
            return make_knots("default")
        try:
            values = [float(v) for v in self.knots.split(",") if v.strip()]
        except ValueError:
            raise ConfigError("knots", f"expected 'default' or a comma list, got {self.knots!r}")
        return make_knots(values)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_config(args) -> RunConfig:
    data = Path(args.data) if getattr(args, "data", None) else None

    def pick(name, default_file):
        explicit = getattr(args, name, None)
        if explicit:
            return Path(explicit)
        return data / default_file if data is not None else None

    cfg = RunConfig(
        subjects=pick("subjects", "subjects.csv"),
        measurements=pick("measurements", "measurements.csv"),
        ranges=pick("ranges", "ranges.csv"),
        cohort=pick("cohort", "cohort.csv"),
        out=_out_dir(args),
        knots=getattr(args, "knots", "default"),
        alpha=getattr(args, "alpha", 0.05),
        bonferroni_m=getattr(args, "bonferroni_m", 3),
        max_knots=getattr(args, "max_knots", SCAN_MAX_KNOTS),
        step=getattr(args, "step", SCAN_STEP),
        window=getattr(args, "window", WINDOW_DAYS),
        cutoff_year=getattr(args, "cutoff_year", None),
        seed=getattr(args, "seed", 0),
    )
    return cfg.validate()


def _require_file(path, what):
    if path is None or not Path(path).exists():
        raise DataError(f"{what} file not found: {path}")
    return path


def _load(cfg: RunConfig):
    subjects = read_subjects(_require_file(cfg.subjects, "subjects"))
    measurements = read_measurements(_require_file(cfg.measurements, "measurements"))
    ranges = read_ranges(cfg.ranges if cfg.ranges and Path(cfg.ranges).exists() else None)
    cohort = read_cohort(_require_file(cfg.cohort, "cohort"))
    # an explicit cutoff re-labels; otherwise keep the labels written by `sample`
    if cfg.cutoff_year is not None or (cohort["split"] == "").any():
        cohort = label_splits(cohort, cfg.cutoff_year or DEFAULT_CUTOFF)
    return prepare(subjects, measurements, cohort, ranges, cfg.window)


# --- subcommands -----------------------------------------------------------

def cmd_generate(args) -> int:
    config = GeneratorConfig()
    if args.config:
        config = GeneratorConfig.from_dict(json.loads(Path(args.config).read_text()))
    config = replace(config, seed=args.seed)
    if args.cases_per_year is not None:
        config = replace(config, cases_per_year=args.cases_per_year)
    if args.markers:
        unknown = [m for m in args.markers if m not in config.markers]
        if unknown:
            raise ConfigError("markers", f"unknown marker(s) {unknown}")
        config = config.only(*args.markers)
    if args.amplitude is not None:
        config = replace(config, markers={
            k: (replace(v, amplitude=args.amplitude) if v.useful else v)
            for k, v in config.markers.items()})
    config.validate()
    out = _out_dir(args)
    subjects, measurements, truth = generate(config)
    write_generated(out, subjects, measurements, truth)
    print(f"wrote {len(subjects)} subjects and {len(measurements)} measurements to {out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    subjects = read_subjects(_require_file(cfg.subjects, "subjects"))
    cohort = sample_controls(subjects, cfg.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cohort = label_splits(cohort, cfg.cutoff_year or DEFAULT_CUTOFF)
    for w in caught:
        log.warning("%s", w.message)
    path = cfg.out / "cohort.csv"
    write_frame(cohort, path, COHORT_COLUMNS)
    n_cases = int((cohort["role"] == "case").sum())
    print(f"wrote {len(cohort)} cohort rows ({n_cases} cases) to {path}")
    return EXIT_OK


def cmd_screen(args) -> int:
    cfg = _run_config(args)
    knots = cfg.knot_vector()
    data = _load(cfg)
    split = None if args.split == "all" else args.split
    labs = args.markers or data.labs

    def one(lab):
        frame = data.marker_frame(lab, split, args.active_only)
        report = screen_marker(frame, lab, knots, data.covariates, cfg.alpha,
                               cfg.max_knots, cfg.step, n_tests=cfg.bonferroni_m)
        write_marker_json(report, cfg.out / "reports" / f"{lab}.json")
        curves = marker_curves(frame, knots, data.covariates)
        write_frame(curves, cfg.out / "curves" / f"{lab}.csv")
        return report

    reports, failures = run_each(labs, one)
    table = screen_rows(reports, failures)
    write_screen_report(table, cfg.out / "screen_report.csv")
    points, curves, _ = demo_tps(cfg.seed)
    write_frame(curves, cfg.out / "demo_tps.csv")
    print(format_screen_table(table))
    if failures:
        print(f"{len(failures)} marker(s) failed: {', '.join(sorted(failures))}", file=sys.stderr)
        if any(isinstance(e, NumericalError) for e in failures.values()):
            return EXIT_NUMERIC
        return EXIT_DATA
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _run_config(args)
    data = _load(cfg)
    train = data.select("train", args.active_only)
    valid = data.select("validation", args.active_only)
    if valid.empty or valid["case"].nunique() < 2:
        raise DataError("validation cohort is empty or lacks cases or controls")
    if train.empty or train["case"].nunique() < 2:
        raise DataError("training cohort is empty or lacks cases or controls")
    labs = args.markers or data.labs
    covs = list(data.covariates)

    def one(lab):
        w = data.windows.loc[data.windows["lab_name"] == lab]
        return validate_marker(train, valid, w.loc[w["record"].isin(train.index)],
                               w.loc[w["record"].isin(valid.index)], lab, covs)

    results, failures = run_each(labs, one)
    base = baseline_c(train, valid, covs)
    table = validation_rows(results, base, int(valid["case"].sum()),
                            int((valid["case"] == 0).sum()))
    write_validation_report(table, cfg.out / "validation_report.csv")
    print(format_validation_table(table))
    if failures:
        print(f"{len(failures)} marker(s) failed: {', '.join(sorted(failures))}", file=sys.stderr)
        return EXIT_NUMERIC if any(isinstance(e, NumericalError) for e in failures.values()) \
            else EXIT_DATA
    return EXIT_OK


def cmd_demo_tps(args) -> int:
    out = _out_dir(args)
    points, curves, checks = demo_tps(args.seed)
    write_frame(points, out / "demo_tps_points.csv")
    write_frame(curves, out / "demo_tps.csv")
    for name, worst in checks.items():
        print(f"{name}: max |second difference| left of first knot = {worst:.3g}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def _add_io(p, need_data=True):
    p.add_argument("--out", help=f"output directory (env {OUT_ENV}, default {DEFAULT_OUT})")
    if need_data:
        p.add_argument("--data", help="directory holding subjects/measurements/ranges/cohort csv")
        p.add_argument("--subjects")
        p.add_argument("--measurements")
        p.add_argument("--ranges")
        p.add_argument("--cohort")


def _add_analysis(p):
    p.add_argument("--markers", nargs="+")
    p.add_argument("--window", type=int, default=WINDOW_DAYS)
    p.add_argument("--cutoff-year", type=int,
                   help="re-label splits: earlier years train, this year validates")
    p.add_argument("--active-only", action="store_true",
                   help="drop cases without a measurement in the 14 days before the event")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="labscreen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic cohort")
    _add_io(p, need_data=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--cases-per-year", type=int)
    p.add_argument("--amplitude", type=float, help="override amplitude of useful markers")
    p.add_argument("--markers", nargs="+")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sample", help="nested case-control sampling")
    _add_io(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cutoff-year", type=int, default=DEFAULT_CUTOFF)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("screen", help="three-criterion screen and knot scan")
    _add_io(p)
    _add_analysis(p)
    p.add_argument("--split", choices=["train", "validation", "all"], default="train")
    p.add_argument("--knots", default="default", help="'default' or comma-separated days, e.g. -90,-30")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bonferroni-m", type=int, default=3)
    p.add_argument("--max-knots", type=int, default=SCAN_MAX_KNOTS)
    p.add_argument("--step", type=int, default=SCAN_STEP)
    p.add_argument("--seed", type=int, default=0, help="seed for the demo toy data")
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("validate", help="held-out c-statistics")
    _add_io(p)
    _add_analysis(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("demo-tps", help="left-linearity illustration on toy data")
    _add_io(p, need_data=False)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_tps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, LabScreenError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
