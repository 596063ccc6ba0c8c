import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pstrata.dataset import (CSV_COLUMNS, Dataset, ObservedProfile, PatientRecord, classify_profile,
                             empty_dataset, load_csv, standardize_covariates, summarize, without_covariates,
                             write_csv)
from pstrata.errors import ValidationError

from conftest import make_dataset


def rec(z, event, disc, y=5.0, c=10.0, d=None):
    if d is None:
        d = 2.0 if disc else c
    return PatientRecord(z=z, c=c, y_tilde=y if event else c, event=event, d_tilde=d, disc=disc,
                         x=(0.0, 0.0, 0.0), id=1)


def test_profile_truth_table():
    # every admissible (z, event, disc) combination
    expected = {
        (1, 1, 1): ObservedProfile.D,
        (1, 0, 1): ObservedProfile.D,
        (1, 1, 0): ObservedProfile.ND,
        (1, 0, 0): ObservedProfile.MIXTURE,
        (0, 1, 0): ObservedProfile.MIXTURE,
        (0, 0, 0): ObservedProfile.MIXTURE,
    }
    for (z, e, d), prof in expected.items():
        assert classify_profile(rec(z, e, d)) is prof


def test_profiles_column_matches_records(small_ds):
    labels = small_ds.profiles()
    for r, lab in zip(small_ds.records, labels):
        assert classify_profile(r).value == lab


def test_records_round_trip(small_ds):
    again = Dataset.from_records(small_ds.records)
    assert again.equals(small_ds)


@pytest.mark.parametrize("field,value,msg", [
    ("y_tilde", -1.0, "y_tilde"),
    ("z", 2, "z"),
    ("d_tilde", 50.0, "d_tilde"),
])
def test_validation_names_row(small_ds, field, value, msg):
    cols = {k: np.array(getattr(small_ds, k), copy=True) for k in ("z", "c", "y_tilde", "event", "d_tilde", "disc")}
    cols[field] = cols[field].astype(float) if field != "z" else cols[field]
    cols[field][5] = value
    with pytest.raises(ValidationError, match=rf"row 6 .*{msg}"):
        Dataset(X=small_ds.X, **cols)


def test_disc_requires_treated_and_order(small_ds):
    cols = {k: np.array(getattr(small_ds, k), copy=True) for k in ("z", "c", "y_tilde", "event", "d_tilde", "disc")}
    cols["d_tilde"][0] = cols["y_tilde"][0] + 0.1
    with pytest.raises(ValidationError, match="below y_tilde"):
        Dataset(X=small_ds.X, **cols)
    cols = {k: np.array(getattr(small_ds, k), copy=True) for k in ("z", "c", "y_tilde", "event", "d_tilde", "disc")}
    cols["z"][0] = 0
    with pytest.raises(ValidationError, match="control"):
        Dataset(X=small_ds.X, **cols)


def test_csv_round_trip(tmp_path, small_ds):
    p = tmp_path / "d.csv"
    write_csv(small_ds, p)
    assert load_csv(p).equals(small_ds)


def test_csv_round_trip_standardized_keeps_raw(tmp_path, small_ds):
    p = tmp_path / "d.csv"
    write_csv(standardize_covariates(small_ds), p)
    back = load_csv(p)
    np.testing.assert_allclose(back.X, small_ds.X, rtol=1e-13, atol=1e-13)


def test_csv_missing_column(tmp_path, small_ds):
    p = tmp_path / "d.csv"
    write_csv(small_ds, p)
    lines = p.read_text().splitlines()
    idx = CSV_COLUMNS.index("event")
    cut = [",".join(v for j, v in enumerate(l.split(",")) if j != idx) for l in lines]
    p.write_text("\n".join(cut) + "\n")
    with pytest.raises(ValidationError, match="event"):
        load_csv(p)


def test_csv_negative_y_names_row(tmp_path, small_ds):
    p = tmp_path / "d.csv"
    write_csv(small_ds, p)
    lines = p.read_text().splitlines()
    parts = lines[3].split(",")
    parts[CSV_COLUMNS.index("y_tilde")] = "-2.0"
    lines[3] = ",".join(parts)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match=r"row 3 .*y_tilde"):
        load_csv(p)


def test_csv_bad_value_names_line_and_field(tmp_path, small_ds):
    p = tmp_path / "d.csv"
    write_csv(small_ds, p)
    lines = p.read_text().splitlines()
    parts = lines[2].split(",")
    parts[CSV_COLUMNS.index("c")] = "abc"
    lines[2] = ",".join(parts)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match=r"line 3, field 'c'"):
        load_csv(p)


def test_csv_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="nope.csv"):
        load_csv(tmp_path / "nope.csv")


def test_standardize_moments(rng):
    ds = make_dataset(rng, n=200)
    x1 = rng.normal(63.27, 10.50, 200)
    X = np.array(ds.X, copy=True)
    X[:, 0] = x1
    ds = Dataset(z=ds.z, c=ds.c, y_tilde=ds.y_tilde, event=ds.event, d_tilde=ds.d_tilde, disc=ds.disc, X=X)
    s = standardize_covariates(ds)
    assert abs(s.X[:, 0].mean()) < 1e-12
    assert abs(s.X[:, 0].std(ddof=1) - 1) < 1e-12
    np.testing.assert_array_equal(s.X[:, 1:], ds.X[:, 1:])
    center, scale = s.standardization["x1"]
    assert center == pytest.approx(x1.mean()) and scale == pytest.approx(x1.std(ddof=1))
    np.testing.assert_allclose(s.raw_covariates(), ds.X, rtol=1e-13)


def test_standardize_idempotent_on_standard_column(rng):
    ds = make_dataset(rng, n=50)
    X = np.array(ds.X, copy=True)
    col = X[:, 0]
    X[:, 0] = (col - col.mean()) / col.std(ddof=1)
    ds = Dataset(z=ds.z, c=ds.c, y_tilde=ds.y_tilde, event=ds.event, d_tilde=ds.d_tilde, disc=ds.disc, X=X)
    np.testing.assert_allclose(standardize_covariates(ds).X, ds.X, atol=1e-12)


def test_standardize_constant_column(small_ds):
    X = np.array(small_ds.X, copy=True)
    X[:, 0] = 4.0
    ds = Dataset(z=small_ds.z, c=small_ds.c, y_tilde=small_ds.y_tilde, event=small_ds.event,
                 d_tilde=small_ds.d_tilde, disc=small_ds.disc, X=X)
    with pytest.raises(ValidationError, match="x1"):
        standardize_covariates(ds)


def test_without_covariates(small_ds):
    d0 = without_covariates(small_ds)
    assert d0.K == 0 and d0.n == small_ds.n


def test_empty_dataset():
    e = empty_dataset(3)
    assert e.n == 0 and e.K == 3


def test_summarize_counts(small_ds):
    tab = summarize(small_ds)
    z = tab.row("Z=1")
    assert z.count == int(small_ds.z.sum()) and z.denom == small_ds.n
    assert tab.row("disc", "treated").denom == int(small_ds.z.sum())
    assert tab.row("event").count == int(small_ds.event.sum())
    assert tab.row("X1").mean == pytest.approx(small_ds.X[:, 0].mean())
    assert tab.row("X2").mean == pytest.approx(small_ds.X[:, 1].mean())
    assert "NA" not in tab.row("Z=1").variable


def test_summarize_single_record(small_ds):
    one = small_ds.subset(np.arange(small_ds.n) == 0)
    tab = summarize(one)
    assert math.isnan(tab.row("X1").sd)
    assert "NA" in tab.to_csv()


def test_summarize_all_control(small_ds):
    ctrl = small_ds.subset(small_ds.z == 0)
    tab = summarize(ctrl)
    r = tab.row("disc", "treated")
    assert (r.count, r.denom) == (0, 0) and math.isnan(r.mean)
    assert "NA (0/0)" in tab.to_text()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 40))
def test_random_datasets_valid_and_round_trip(seed, n):
    ds = make_dataset(np.random.default_rng(seed), n=n)
    assert Dataset.from_records(ds.records).equals(ds)
    # classification is total over every record
    assert all(isinstance(classify_profile(r), ObservedProfile) for r in ds.records)
