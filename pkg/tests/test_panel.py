from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynamic_iv.panel import (
    NEVER,
    PanelDataset,
    PanelError,
    ParticipantRecord,
    emit_csv,
    exposure,
    exposure_level,
    from_records,
    ingest_csv,
    ingest_frame,
    validate_panel,
)
from dynamic_iv.simulation import preset, sample_dataset


def _panel(z, r, w_bar=3, y=None):
    n = len(z)
    y = np.arange(n * w_bar, dtype=float).reshape(n, w_bar) if y is None else y
    return PanelDataset(ids=np.arange(1, n + 1), z=np.asarray(z), revasc_wave=np.asarray(r), y=y,
                        present=np.ones((n, w_bar), dtype=bool), covariates=np.empty((n, 0)))


def test_exposure_levels():
    assert exposure_level(NEVER, 3) == 0
    assert exposure_level(1, 1) == 1
    assert exposure_level(2, 1) == 0
    assert exposure_level(2, 3) == 2
    np.testing.assert_array_equal(exposure_level(np.array([0, 1, 3]), 3), [0, 3, 1])


def test_exposure_lookup_by_id():
    d = _panel([0, 1, 1], [NEVER, 1, 2])
    assert exposure(d, 2, 3) == 3
    assert exposure(d, 3, 1) == 0
    assert exposure(d, 1, 3) == 0
    with pytest.raises(KeyError):
        exposure(d, 99, 1)


@given(st.integers(0, 8), st.integers(1, 8))
def test_exposure_is_absorbing(r, w_bar):
    t = [exposure_level(r, w) for w in range(1, w_bar + 1)]
    diffs = np.diff([0, *t])
    # once positive, exposure grows by exactly one per wave
    started = False
    for step in diffs:
        if started:
            assert step == 1
        else:
            assert step in (0, 1)
            started = step == 1
    assert all(0 <= v <= w for v, w in zip(t, range(1, w_bar + 1)))


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 4)), min_size=1, max_size=20))
@settings(max_examples=50)
def test_derived_indicators_consistent(rows):
    z = [a for a, _ in rows]
    r = [b for _, b in rows]
    d = _panel(z, r, w_bar=4)
    T = d.exposure_matrix()
    for w in range(1, 5):
        V = T[:, w - 1] > 0
        D = np.column_stack([T[:, w - 1] >= t for t in range(1, w + 1)])
        R = np.column_stack([T[:, w - 1] == t for t in range(1, w + 1)])
        # D_wt = sum_{s >= t} R_ws and V_w = D_w1
        np.testing.assert_array_equal(D, np.cumsum(R[:, ::-1], axis=1)[:, ::-1])
        np.testing.assert_array_equal(V, D[:, 0])


def test_validate_flags_bad_assignment_and_waves():
    d = _panel([0, 2, 1], [NEVER, 1, 5])
    errs = validate_panel(d)
    assert any("assignment not binary" in e for e in errs)
    assert any("revasc_wave out of range" in e for e in errs)


def test_validate_empty_arm():
    errs = validate_panel(_panel([1, 1, 1], [1, 1, 1]))
    assert any("no participant assigned z=0" in e for e in errs)


def _long(rows):
    return pd.DataFrame(rows, columns=["id", "wave", "z", "t_exposure", "y"])


def test_ingest_reconstructs_revasc_wave():
    df = _long([
        (1, 1, 1, 1, 10.0), (1, 2, 1, 2, 11.0), (1, 3, 1, 3, 12.0),
        (2, 1, 0, 0, 9.0), (2, 2, 0, 1, 9.5), (2, 3, 0, 2, np.nan),
        (3, 1, 0, 0, 8.0), (3, 2, 0, 0, 8.0), (3, 3, 0, 0, 8.0),
    ])
    d = ingest_frame(df)
    np.testing.assert_array_equal(d.revasc_wave, [1, 2, NEVER])
    assert d.w_bar == 3
    assert np.isnan(d.y[1, 2]) and d.present[1, 2]
    assert not d.observed[1, 2]


def test_ingest_rejects_non_absorbing():
    df = _long([(1, 1, 1, 1, 1.0), (1, 2, 1, 0, 1.0), (2, 1, 0, 0, 1.0), (2, 2, 0, 0, 1.0)])
    with pytest.raises(PanelError, match="non-absorbing"):
        ingest_frame(df)


def test_ingest_rejects_exposure_skip():
    df = _long([(1, 1, 1, 1, 1.0), (1, 2, 1, 3, 1.0), (2, 1, 0, 0, 1.0), (2, 2, 0, 0, 1.0)])
    with pytest.raises(PanelError):
        ingest_frame(df)


def test_ingest_rejects_inconsistent_assignment():
    df = _long([(1, 1, 1, 0, 1.0), (1, 2, 0, 0, 1.0), (2, 1, 0, 0, 1.0), (2, 2, 0, 0, 1.0)])
    with pytest.raises(PanelError):
        ingest_frame(df)


def test_ingest_rejects_duplicate_rows():
    df = _long([(1, 1, 1, 0, 1.0), (1, 1, 1, 0, 2.0), (2, 1, 0, 0, 1.0)])
    with pytest.raises(PanelError):
        ingest_frame(df)


def test_ingest_rejects_non_binary_assignment():
    df = _long([(1, 1, 2, 0, 1.0), (2, 1, 0, 0, 1.0)])
    with pytest.raises(PanelError):
        ingest_frame(df)


def test_missing_outcome_column(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("id,wave,z,t_exposure\n1,1,0,0\n2,1,1,1\n")
    with pytest.raises(PanelError, match="y"):
        ingest_csv(p)


def test_categorical_covariate_expansion():
    df = _long([(1, 1, 1, 1, 1.0), (2, 1, 0, 0, 2.0), (3, 1, 0, 0, 3.0)])
    df["region"] = ["north", "south", "east"]
    d = ingest_frame(df, covariates=["region"])
    # first level ("east") is the reference
    assert d.covariate_names == ("region_north", "region_south")
    np.testing.assert_array_equal(d.covariate("region_north"), [1, 0, 0])
    with pytest.raises(KeyError):
        d.covariate("region")


def test_csv_round_trip(tmp_path):
    d = sample_dataset(preset("refA"), 300, seed=3)
    p = tmp_path / "d.csv"
    text = emit_csv(d, p)
    back = ingest_csv(p)
    assert d.equals(back)
    assert emit_csv(back) == text


def test_round_trip_with_attrition(tmp_path):
    d = sample_dataset(preset("paper_calibrated"), 500, seed=4)
    p = tmp_path / "d.csv"
    emit_csv(d, p)
    back = ingest_csv(p)
    np.testing.assert_array_equal(np.isnan(back.y), np.isnan(d.y))
    np.testing.assert_array_equal(back.revasc_wave, d.revasc_wave)


def test_records_view_matches_columns():
    d = sample_dataset(preset("refA"), 50, seed=9)
    recs = d.participants
    d2 = from_records(recs, d.w_bar)
    assert d.equals(d2)
    r = d.record(0)
    assert isinstance(r, ParticipantRecord)
    assert r.exposure(3) == d.exposure_matrix()[0, 2]


def test_subset_waves():
    d = sample_dataset(preset("refA"), 100, seed=1)
    s = d.subset_waves([1, 2])
    assert s.w_bar == 2
    np.testing.assert_array_equal(s.y, d.y[:, :2])
