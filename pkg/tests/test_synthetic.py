import io

import numpy as np
import pytest

from labscreen.cohort import DEFAULT_RANGES, filter_ranges
from labscreen.errors import ConfigError
from labscreen.synthetic import GeneratorConfig, MarkerSpec, departure, generate


def _small(**kw):
    base = dict(cases_per_year=8, start_year=2005, end_year=2006)
    base.update(kw)
    return GeneratorConfig(**base)


def _csv(df):
    buf = io.StringIO()
    df.to_csv(buf, index=False)
    return buf.getvalue()


def test_departure_pinned_at_onset_and_event():
    spec = MarkerSpec("useful", 28, "drop", 1.0)
    t = np.array([-180.0, -29.0, -28.0, 0.0])
    d = departure(t, spec)
    assert d[0] == 0.0 and d[1] == 0.0 and d[2] == 0.0
    assert d[3] == pytest.approx(-1.0)
    assert departure([0.0], MarkerSpec("useful", 56, "rise", 2.5))[0] == pytest.approx(2.5)


def test_logistic_departure_reaches_amplitude():
    spec = MarkerSpec("useful", 56, "rise", 2.0, "logistic")
    d = departure(np.array([-57.0, -56.0, 0.0]), spec)
    assert d[0] == 0.0 and d[1] == pytest.approx(0.0, abs=1e-12)
    assert d[2] == pytest.approx(2.0)


def test_null_marker_has_no_departure():
    assert not np.any(departure(np.linspace(-180, 0, 50), MarkerSpec()))


def test_same_seed_identical():
    a = generate(_small(seed=3))
    b = generate(_small(seed=3))
    assert _csv(a[0]) == _csv(b[0]) and _csv(a[1]) == _csv(b[1])
    c = generate(_small(seed=4))
    assert _csv(a[1]) != _csv(c[1])


def test_amplitude_zero_matches_null():
    useful0 = _small(seed=9).with_markers(albumin=MarkerSpec("useful", 28, "drop", 0.0))
    null = _small(seed=9).with_markers(albumin=MarkerSpec())
    assert _csv(generate(useful0)[1]) == _csv(generate(null)[1])


def test_values_pass_range_filter():
    _, meas, _ = generate(_small(seed=1))
    kept, drops = filter_ranges(meas, DEFAULT_RANGES)
    assert len(kept) == len(meas) and drops.sum() == 0


def test_cadence_counts():
    subj, meas, _ = generate(_small(seed=2))
    span = (subj["obs_end"] - subj["obs_start"]).dt.days.set_axis(subj["subject_id"])
    freq = DEFAULT_RANGES.set_index("lab_name")["frequency_days"]
    counts = meas.groupby(["subject_id", "lab_name"]).size().reset_index(name="n")
    expected = span.loc[counts["subject_id"]].to_numpy() / freq.loc[counts["lab_name"]].to_numpy()
    ratio = counts["n"].to_numpy() / expected
    # gaps are cadence * U(0.7, 1.3); allow the first-draw offset of one visit
    assert np.all(ratio > 1 / 1.3 - 0.1) and np.all(ratio < 1 / 0.7 + 0.1)


def test_truth_manifest_and_subjects():
    cfg = _small(seed=5)
    subj, _, truth = generate(cfg)
    assert truth["markers"]["albumin"]["kind"] == "useful"
    assert truth["markers"]["calcium"]["kind"] == "null"
    cases = subj["event_date"].notna()
    assert cases.sum() == 16
    assert (subj.loc[cases, "obs_end"] == subj.loc[cases, "event_date"]).all()


@pytest.mark.parametrize("field,spec", [
    ("markers.albumin.amplitude", MarkerSpec("useful", 28, "drop", -1.0)),
    ("markers.albumin.onset_days", MarkerSpec("useful", 30, "drop", 1.0)),
    ("markers.albumin.direction", MarkerSpec("useful", 28, "sideways", 1.0)),
])
def test_invalid_marker_config_names_field(field, spec):
    with pytest.raises(ConfigError) as err:
        _small().with_markers(albumin=spec).validate()
    assert field in str(err.value)


def test_config_dict_round_trip():
    cfg = _small(seed=11).with_markers(wbc=MarkerSpec("useful", 42, "rise", 2.0, "logistic"))
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"bogus": 1})
