"""Truncated cubic power spline bases and fixed-effect design matrices.

Time is measured in days relative to the index date, negative before it.
The basis for knots xi_1 < ... < xi_K is

    t, (t - xi_1)^3_+, ..., (t - xi_K)^3_+

with no intercept column, so any fitted curve is exactly linear for
t < xi_1 (earliest knot).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import InvalidInputError, InvalidKnotsError, MissingCovariateError

WINDOW_DAYS = 180
DEFAULT_KNOTS = (-150.0, -90.0, -60.0, -30.0, -14.0)
SCAN_STEP = 14
SCAN_MAX_KNOTS = 12


@dataclass(frozen=True)
class KnotVector:
    """Strictly increasing knot locations in [-window, 0).

    An empty vector stands for the pure linear-in-time model.
    """

    knots: tuple = ()
    window: float = WINDOW_DAYS

    def __post_init__(self):
        arr = np.asarray(self.knots, dtype=float).ravel()
        if arr.size and not np.all(np.isfinite(arr)):
            raise InvalidKnotsError(f"non-finite knot in {list(arr)}")
        if arr.size and (arr.min() < -self.window or arr.max() >= 0):
            raise InvalidKnotsError(
                f"knots must lie in [-{self.window:g}, 0), got {list(arr)}"
            )
        if arr.size > 1 and np.any(np.diff(arr) <= 0):
            raise InvalidKnotsError(f"knots must be strictly increasing, got {list(arr)}")
        object.__setattr__(self, "knots", tuple(float(k) for k in arr))

    def __len__(self):
        return len(self.knots)

    def __iter__(self):
        return iter(self.knots)

    def as_array(self) -> np.ndarray:
        return np.array(self.knots, dtype=float)

    @property
    def leftmost(self) -> float | None:
        return self.knots[0] if self.knots else None


def default_knots() -> KnotVector:
    return KnotVector(DEFAULT_KNOTS)


def scan_knots(m: int, step: float = SCAN_STEP, max_knots: int = SCAN_MAX_KNOTS) -> KnotVector:
    """Knots at -step, -2*step, ..., -m*step, sorted ascending."""
    if not 0 <= m <= max_knots:
        raise InvalidKnotsError(f"scan prefix must be in 0..{max_knots}, got {m}")
    return KnotVector(tuple(-step * j for j in range(m, 0, -1)))


def make_knots(mode="default", m: int | None = None, step: float = SCAN_STEP) -> KnotVector:
    """Build a knot vector.

    ``mode`` is ``"default"``, ``"scan"`` (with prefix length ``m``) or an
    explicit sequence of knot locations.
    """
    if isinstance(mode, KnotVector):
        return mode
    if isinstance(mode, str):
        if mode == "default":
            return default_knots()
        if mode == "scan":
            if m is None:
                raise InvalidKnotsError("scan mode needs a prefix length m")
            return scan_knots(m, step)
        raise InvalidKnotsError(f"unknown knot mode {mode!r}")
    return KnotVector(tuple(mode))


def tps_basis(times, knots: KnotVector | Sequence[float]) -> np.ndarray:
    """Evaluate the truncated cubic power basis.

    Returns an array of shape ``(len(times), K + 1)``; column 0 is ``t`` and
    column ``k`` is ``max(t - knot_k, 0) ** 3``.
    """
    t = np.asarray(times, dtype=float).ravel()
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("times must be finite")
    xi = knots.as_array() if isinstance(knots, KnotVector) else np.asarray(knots, float)
    out = np.empty((t.size, xi.size + 1))
    out[:, 0] = t
    if xi.size:
        d = np.maximum(t[:, None] - xi[None, :], 0.0)
        # integer power by repeated multiplication, as the reference routine does
        out[:, 1:] = d * (d * d)
    return out


def basis_names(knots: KnotVector) -> list[str]:
    return ["t"] + [f"tp({k:g})" for k in knots]


@dataclass(frozen=True)
class DesignSpec:
    """Which fixed-effect blocks enter the model.

    The full case/control model uses both flags; the within-group model
    (cases only or controls only) uses neither.
    """

    knots: KnotVector = field(default_factory=default_knots)
    covariates: tuple = ()
    case_shift: bool = True
    interaction: bool = True

    def __post_init__(self):
        if not isinstance(self.knots, KnotVector):
            object.__setattr__(self, "knots", make_knots(self.knots))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.interaction and not self.case_shift:
            raise InvalidInputError("case x spline interaction requires the case shift term")

    @property
    def n_basis(self) -> int:
        return len(self.knots) + 1

    def columns(self) -> list[str]:
        cols = ["intercept"]
        if self.case_shift:
            cols.append("case")
        names = basis_names(self.knots)
        cols += names
        if self.interaction:
            cols += [f"case:{n}" for n in names]
        cols += list(self.covariates)
        return cols

    def replace(self, **kw) -> "DesignSpec":
        args = dict(
            knots=self.knots,
            covariates=self.covariates,
            case_shift=self.case_shift,
            interaction=self.interaction,
        )
        args.update(kw)
        return DesignSpec(**args)


def design_rows(times, case, covariates, spec: DesignSpec) -> np.ndarray:
    """Assemble model-matrix rows for given times.

    ``case`` is a scalar or per-row 0/1 array; ``covariates`` is an
    ``(n, c)`` array (or a length-c vector broadcast to every row).
    """
    basis = tps_basis(times, spec.knots)
    n = basis.shape[0]
    blocks = [np.ones((n, 1))]
    case = np.broadcast_to(np.asarray(case, dtype=float), (n,))
    if spec.case_shift:
        blocks.append(case[:, None])
    blocks.append(basis)
    if spec.interaction:
        blocks.append(basis * case[:, None])
    cov = np.asarray(covariates, dtype=float)
    if len(spec.covariates):
        cov = np.broadcast_to(cov.reshape(-1, len(spec.covariates)), (n, len(spec.covariates)))
        blocks.append(cov)
    return np.hstack(blocks)


@dataclass
class Design:
    y: np.ndarray
    X: np.ndarray
    groups: np.ndarray
    columns: list
    subjects: np.ndarray

    def __iter__(self):
        # allows ``y, X, groups = design_matrix(...)``
        return iter((self.y, self.X, self.groups))


def design_matrix(
    data: pd.DataFrame,
    spec: DesignSpec,
    subject_col: str = "record",
    window: float = WINDOW_DAYS,
) -> Design:
    """Build response, model matrix and group index from long-format data.

    ``data`` has one row per measurement with columns ``subject_col``,
    ``t``, ``value``, ``case`` and every covariate named in ``spec``.
    Groups are numbered in order of first appearance.
    """
    t = data["t"].to_numpy(dtype=float)
    if t.size and (np.nanmin(t) < -window or np.nanmax(t) > 0 or np.isnan(t).any()):
        raise InvalidInputError(f"measurement times must lie in [-{window:g}, 0]")
    cov_cols = list(spec.covariates)
    if cov_cols:
        cov = data[cov_cols]
        bad = cov.isna().any(axis=1).to_numpy()
        if bad.any():
            first = data.loc[bad, subject_col].iloc[0]
            missing = [c for c in cov_cols if cov.loc[bad].iloc[0][c] != cov.loc[bad].iloc[0][c]]
            raise MissingCovariateError(first, missing)
        cov_values = cov.to_numpy(dtype=float)
    else:
        cov_values = np.empty((len(data), 0))
    if spec.case_shift or spec.interaction:
        case = data["case"].to_numpy(dtype=float)
    else:
        case = 0.0
    X = design_rows(t, case, cov_values, spec)
    groups, subjects = pd.factorize(data[subject_col], sort=False)
    y = data["value"].to_numpy(dtype=float)
    return Design(y=y, X=X, groups=groups.astype(np.intp), columns=spec.columns(),
                  subjects=np.asarray(subjects))


def second_differences(values: Iterable[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v[2:] - 2 * v[1:-1] + v[:-2]
