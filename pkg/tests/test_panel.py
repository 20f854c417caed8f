import numpy as np
import pandas as pd
import pytest

from tvdml import ColumnSchema, DataError, PanelDataset, SchemaError, load_panel_csv, tilde_x, validate, write_panel_csv
from tvdml.panel import design_array
from tvdml.simlab import ScenarioSpec, simulate

SCHEMA = ColumnSchema(baseline=("z1",), modifiers=("x1", "x2"), prognostic=("u1",))


def small_frame():
    rows = []
    for i in (1, 2):
        for t in (1, 2, 3):
            rows.append({"id": i, "time": t, "y": 0.5 * i + t, "a": (i + t) % 2,
                         "z1": float(i), "x1": 0.1 * t, "x2": -0.2 * i * t, "u1": i - t})
    return pd.DataFrame(rows)


def write(df, tmp_path, name="panel.csv"):
    path = tmp_path / name
    df.to_csv(path, index=False)
    return path


def test_load_complete_file(tmp_path):
    data = load_panel_csv(write(small_frame(), tmp_path), SCHEMA)
    assert (data.n, data.T, data.d) == (2, 3, 4)
    assert data.M.all()
    assert data.Y[1, 2] == pytest.approx(1.0 + 3)
    assert data.coef_names == ("intercept", "z1", "x1", "x2")


def test_sentinel_masks_single_cell(tmp_path):
    full = load_panel_csv(write(small_frame(), tmp_path, "a.csv"), SCHEMA)
    df = small_frame().astype({"y": object})
    df.loc[4, "y"] = "NA"  # subject 2, time 2
    data = load_panel_csv(write(df, tmp_path, "b.csv"), SCHEMA)
    expected = np.ones((2, 3), dtype=bool)
    expected[1, 1] = False
    np.testing.assert_array_equal(data.M, expected)
    np.testing.assert_array_equal(data.Y[expected], full.Y[expected])
    np.testing.assert_array_equal(data.A, full.A)


def test_non_binary_treatment_names_row(tmp_path):
    df = small_frame()
    df.loc[3, "a"] = 2
    with pytest.raises(DataError, match="non-binary treatment at row 4"):
        load_panel_csv(write(df, tmp_path), SCHEMA)


def test_missing_covariate_names_row(tmp_path):
    df = small_frame().astype({"x2": object})
    df.loc[2, "x2"] = ""
    with pytest.raises(DataError, match="row 3"):
        load_panel_csv(write(df, tmp_path), SCHEMA)


def test_missing_column_is_schema_error(tmp_path):
    with pytest.raises(SchemaError, match="u1"):
        load_panel_csv(write(small_frame().drop(columns="u1"), tmp_path), SCHEMA)


def test_absent_row_is_error(tmp_path):
    with pytest.raises(DataError, match="no row at time"):
        load_panel_csv(write(small_frame().drop(index=5), tmp_path), SCHEMA)


def test_time_varying_baseline_is_error(tmp_path):
    df = small_frame()
    df.loc[1, "z1"] = 9.0
    with pytest.raises(DataError, match="varies over time"):
        load_panel_csv(write(df, tmp_path), SCHEMA)


def test_rows_sorted_and_times_reindexed(tmp_path):
    df = small_frame().sample(frac=1.0, random_state=3)
    df["time"] = df["time"] * 10
    data = load_panel_csv(write(df, tmp_path), SCHEMA)
    np.testing.assert_array_equal(data.times, [10, 20, 30])
    assert data.Y[0, 0] == pytest.approx(1.5)


def test_schema_rejects_overlapping_lists():
    with pytest.raises(SchemaError):
        ColumnSchema(modifiers=("x1",), prognostic=("x1",))


def test_round_trip(tmp_path):
    data, _ = simulate(ScenarioSpec(case="I", n=15, T=6, seed=4))
    path = tmp_path / "rt.csv"
    schema = write_panel_csv(data, path)
    back = load_panel_csv(path, schema)
    np.testing.assert_array_equal(back.M, data.M)
    np.testing.assert_array_equal(back.A, data.A)
    np.testing.assert_array_equal(back.Y[data.M], data.Y[data.M])
    for name in ("Z", "X", "U"):
        np.testing.assert_array_equal(getattr(back, name), getattr(data, name))


def test_tilde_x_examples():
    def one(Z, X):
        Z = np.asarray(Z, dtype=float).reshape(1, -1)
        X = np.asarray(X, dtype=float).reshape(1, 1, -1)
        return PanelDataset(Y=[[0.0]], A=[[1]], Z=Z, X=X, U=np.zeros((1, 1, 0)), M=[[1]])

    np.testing.assert_array_equal(tilde_x(one([2], [3, 4]), 0, 1), [1, 2, 3, 4])
    np.testing.assert_array_equal(tilde_x(one(np.zeros(0), np.zeros(0)), 0, 1), [1])
    np.testing.assert_array_equal(tilde_x(one([0, 0], [0]), 0, 1), [1, 0, 0, 0])
    d = one([2], [3, 4])
    assert tilde_x(d, 0, 1) is not tilde_x(d, 0, 1)
    np.testing.assert_array_equal(tilde_x(d, 0, 1), tilde_x(d, 0, 1))
    with pytest.raises(IndexError):
        tilde_x(d, 0, 2)
    with pytest.raises(IndexError):
        tilde_x(d, 1, 1)


def test_design_array_matches_tilde_x():
    data, _ = simulate(ScenarioSpec(case="I", n=6, T=4, seed=1))
    D = design_array(data)
    for i in range(data.n):
        for t in range(1, data.T + 1):
            np.testing.assert_array_equal(D[i, t - 1], tilde_x(data, i, t))


def test_arrays_are_read_only():
    data, _ = simulate(ScenarioSpec(case="I", n=5, T=3, seed=1))
    with pytest.raises(ValueError):
        data.Y[0, 0] = 1.0


def test_dataset_invariants():
    with pytest.raises(DataError):
        PanelDataset(Y=[[1.0]], A=[[2]], Z=np.zeros((1, 0)), X=np.zeros((1, 1, 0)), U=np.zeros((1, 1, 0)), M=[[1]])
    with pytest.raises(DataError):
        PanelDataset(Y=[[np.nan]], A=[[1]], Z=np.zeros((1, 0)), X=np.zeros((1, 1, 0)), U=np.zeros((1, 1, 0)), M=[[1]])
    with pytest.raises(DataError):
        PanelDataset(Y=[[1.0]], A=[[1]], Z=[[np.nan]], X=np.zeros((1, 1, 0)), U=np.zeros((1, 1, 0)), M=[[1]])


def test_validate_balanced_case1_has_no_flags():
    data, _ = simulate(ScenarioSpec(case="I", n=200, T=100, seed=7))
    report = validate(data)
    assert report.ok
    treated = ((data.A == 1) & data.M).sum(axis=0)
    assert [r.n_treated for r in report.rows] == treated.tolist()


def _toy(n=20, T=6):
    rng = np.random.default_rng(0)
    A = np.tile([0, 1], n // 2)[:, None] * np.ones((1, T), dtype=int)
    return PanelDataset(Y=rng.normal(size=(n, T)), A=A, Z=np.zeros((n, 0)), X=np.zeros((n, T, 0)),
                        U=np.zeros((n, T, 0)), M=np.ones((n, T), dtype=bool))


def test_validate_flags_degenerate_and_thin_cells():
    data = _toy()
    A = np.array(data.A)
    A[:, 2] = 1
    A[:, 4] = 0
    A[:9, 4] = 1  # 9 treated at t=5
    flagged = PanelDataset(Y=data.Y, A=A, Z=data.Z, X=data.X, U=data.U, M=data.M)
    before = flagged.A.copy()
    report = validate(flagged, threshold=10)
    assert "no untreated at t=3" in report.flags
    assert "treated count 9 < 10 at t=5" in report.flags
    assert report.flagged_times() == [3, 5]  # 10 per arm elsewhere sits exactly at the threshold
    np.testing.assert_array_equal(flagged.A, before)
    payload = __import__("json").loads(report.to_json())
    assert set(payload[0]) == {"time", "n_treated", "n_untreated", "flags"}
