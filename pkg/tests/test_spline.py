import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from conftest import reference_tps
from labscreen.errors import InvalidInputError, InvalidKnotsError, MissingCovariateError
from labscreen.spline import (
    DesignSpec,
    KnotVector,
    design_matrix,
    make_knots,
    second_differences,
    tps_basis,
)


def test_default_knot_placement():
    assert make_knots("default").knots == (-150.0, -90.0, -60.0, -30.0, -14.0)


def test_scan_prefixes():
    assert len(make_knots("scan", m=0)) == 0
    assert make_knots("scan", m=3).knots == (-42.0, -28.0, -14.0)
    assert make_knots("scan", m=12).leftmost == -168.0


@pytest.mark.parametrize("m", [-1, 13])
def test_scan_prefix_out_of_range(m):
    with pytest.raises(InvalidKnotsError):
        make_knots("scan", m=m)


@pytest.mark.parametrize("bad", [[-30, -60], [-30, -30], [-200, -10], [-10, 0], [-10, 5]])
def test_invalid_explicit_knots(bad):
    with pytest.raises(InvalidKnotsError):
        make_knots(bad)


def test_basis_examples():
    row = tps_basis([-160], make_knots("default"))
    assert row.tolist() == [[-160, 0, 0, 0, 0, 0]]
    assert tps_basis([0], [-14]).tolist() == [[0, 2744]]
    assert tps_basis([-30], [-30]).tolist() == [[-30, 0]]


def test_basis_has_no_intercept_and_nonnegative_truncations():
    B = tps_basis(np.linspace(-180, 0, 50), make_knots("default"))
    assert B.shape == (50, 6)
    assert not np.any(np.all(B == 1.0, axis=0))
    assert np.all(B[:, 1:] >= 0)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_nonfinite_time_rejected(bad):
    with pytest.raises(InvalidInputError):
        tps_basis([-10.0, bad], make_knots("default"))


def _random_knots(rng):
    k = rng.integers(1, 9)
    return np.sort(rng.choice(np.arange(-179, 0), size=k, replace=False)).astype(float)


def test_matches_reference_transcription(rng):
    for _ in range(200):
        knots = _random_knots(rng)
        t = rng.uniform(-180, 0, rng.integers(1, 40))
        assert np.array_equal(tps_basis(t, KnotVector(tuple(knots))), reference_tps(t, knots))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_left_linearity(seed):
    rng = np.random.default_rng(seed)
    knots = KnotVector(tuple(_random_knots(rng)))
    coef = rng.normal(size=len(knots) + 1) * np.r_[1.0, 10.0 ** -rng.uniform(0, 5, len(knots))]
    grid = np.linspace(-180, knots.leftmost, 60)[:-1]
    f = tps_basis(grid, knots) @ coef
    scale = max(np.abs(f).max(), 1e-300)
    assert np.max(np.abs(second_differences(f))) <= 1e-10 * scale


def test_smooth_across_knot():
    xi = -30.0
    h = 1e-3
    grid = xi + h * np.arange(-50, 51)
    col = tps_basis(grid, [xi])[:, 1]
    d1 = np.diff(col)
    d2 = np.diff(col, 2)
    d3 = np.diff(col, 3)
    # first and second differences move by O(h^2) / O(h^3) per step; the third jumps
    assert np.max(np.abs(np.diff(d1))) < 10 * h**2
    assert np.max(np.abs(np.diff(d2))) <= 6 * h**3 + 1e-15
    assert np.max(np.abs(d3)) == pytest.approx(6 * h**3, rel=1e-3)
    assert np.min(np.abs(d3[:40])) == 0.0


@pytest.mark.parametrize("m", range(0, 12))
def test_scan_prefix_nesting(m):
    t = np.linspace(-180, 0, 181)
    small = np.column_stack([np.ones_like(t), tps_basis(t, make_knots("scan", m=m))])
    big = np.column_stack([np.ones_like(t), tps_basis(t, make_knots("scan", m=m + 1))])
    for j in range(small.shape[1]):
        coef, *_ = np.linalg.lstsq(big, small[:, j], rcond=None)
        resid = np.linalg.norm(big @ coef - small[:, j]) / max(np.linalg.norm(small[:, j]), 1)
        assert resid < 1e-10


def _two_subjects(with_age=True):
    df = pd.DataFrame({
        "record": ["a", "a", "a", "b", "b"],
        "t": [-100.0, -20.0, 0.0, -50.0, -5.0],
        "value": [1.0, 2.0, 3.0, 4.0, 5.0],
        "case": [1, 1, 1, 0, 0],
    })
    if with_age:
        df["age"] = [70.0, 70.0, 70.0, 80.0, 80.0]
    return df


def test_design_dimensions_and_groups():
    d = design_matrix(_two_subjects(), DesignSpec(make_knots("default"), ["age"]))
    assert d.X.shape == (5, 1 + 1 + 6 + 6 + 1)
    assert d.groups.tolist() == [0, 0, 0, 1, 1]
    assert d.columns[:3] == ["intercept", "case", "t"]
    assert d.columns[-1] == "age"


def test_control_rows_have_zero_interactions():
    d = design_matrix(_two_subjects(), DesignSpec(make_knots("default"), ["age"]))
    inter = [i for i, c in enumerate(d.columns) if c.startswith("case:")]
    assert len(inter) == 6
    assert np.all(d.X[3:, inter] == 0.0)


def test_within_group_form():
    spec = DesignSpec(make_knots("default"), ["age"], case_shift=False, interaction=False)
    d = design_matrix(_two_subjects(), spec)
    assert d.X.shape[1] == 1 + 6 + 1


def test_interaction_requires_case_shift():
    with pytest.raises(InvalidInputError):
        DesignSpec(make_knots("default"), case_shift=False, interaction=True)


def test_missing_covariate_names_subject():
    df = _two_subjects()
    df.loc[3:, "age"] = np.nan
    with pytest.raises(MissingCovariateError) as err:
        design_matrix(df, DesignSpec(make_knots("default"), ["age"]))
    assert "b" in str(err.value)


def test_times_outside_window_rejected():
    df = _two_subjects(with_age=False)
    df.loc[0, "t"] = -181.0
    with pytest.raises(InvalidInputError):
        design_matrix(df, DesignSpec(make_knots("default")))
