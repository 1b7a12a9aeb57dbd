import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrhn.data import (
    NASDAQ_D,
    NASDAQ_N,
    NASDAQ_SPLITS,
    DataError,
    NormalizationStats,
    SeriesDataset,
    Windows,
    denormalize,
    gen_synthetic,
    load_csv,
    make_windows,
    normalize,
    save_csv,
    window_count,
)


def _series(m, n=2, d=1, seed=0):
    rng = np.random.default_rng(seed)
    return SeriesDataset(rng.standard_normal((m, n)), rng.standard_normal((m, d)))


# ---------------------------------------------------------------- csv


def test_csv_round_trip(tmp_path):
    ds = _series(20, 3, 2)
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", 3, 2)
    assert np.array_equal(back.exogenous, ds.exogenous) and np.array_equal(back.targets, ds.targets)
    assert back.feature_names == ["x0", "x1", "x2", "y0", "y1"]


def test_csv_non_numeric_cell_names_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,y\n1,2,3\n4,5,6\n7,oops,9\n")
    with pytest.raises(DataError, match=r"row 3, column 2"):
        load_csv(p, 2, 1)


def test_csv_wrong_width(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,y\n1,2,3\n4,5\n")
    with pytest.raises(DataError, match="row 2"):
        load_csv(p, 2, 1)
    with pytest.raises(DataError, match="n\\+d"):
        load_csv(p, 3, 1)


def test_csv_rejects_non_finite(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,y\n1,2\nnan,3\n")
    with pytest.raises(DataError, match="non-finite"):
        load_csv(p, 1, 1)


def test_nasdaq_layout(tmp_path):
    # 81 exogenous stocks followed by the index column, standard split sizes
    assert (NASDAQ_N, NASDAQ_D) == (81, 1)
    assert sum(NASDAQ_SPLITS) == 40560
    rng = np.random.default_rng(0)
    p = tmp_path / "nasdaq.csv"
    names = [f"S{i}" for i in range(81)] + ["NDX"]
    rows = rng.uniform(10, 100, size=(30, 82))
    p.write_text(",".join(names) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    ds = load_csv(p, NASDAQ_N, NASDAQ_D)
    assert ds.n == 81 and ds.d == 1 and ds.feature_names[-1] == "NDX"
    np.testing.assert_allclose(ds.targets[:, 0], rows[:, 81])


# ---------------------------------------------------------------- splits and windows


def test_splits_are_contiguous():
    ds = _series(100).with_splits(70, 15)
    assert ds.split_range("train") == (0, 70)
    assert ds.split_range("validation") == (70, 85)
    assert ds.split_range("test") == (85, 100)
    with pytest.raises(DataError):
        _series(10).with_splits(8, 5)


def test_window_count_examples():
    assert window_count(100, 11) == 90
    assert len(make_windows(_series(100), 11)) == 90


def test_window_contents():
    ds = SeriesDataset(np.arange(20.0).reshape(10, 2), np.arange(10.0)[:, None] * 10)
    w = make_windows(ds, 4)
    assert w.x.shape == (7, 3, 2) and w.y.shape == (7, 3, 1) and w.target.shape == (7, 1)
    assert w.x[2].tolist() == [[4, 5], [6, 7], [8, 9]]
    assert w.y[2, :, 0].tolist() == [20, 30, 40]
    assert w.target[2, 0] == 50
    assert w.T == 4 and w.start[2] == 2


def test_windows_stay_inside_split():
    ds = _series(50).with_splits(30, 10)
    w = make_windows(ds, 5, "validation")
    assert len(w) == 6 and w.start.min() == 30 and w.start.max() + 4 == 39


def test_short_split_error_names_t():
    ds = _series(50).with_splits(40, 5)
    with pytest.raises(DataError, match=r"'validation' has length 5.*T=8"):
        make_windows(ds, 8, "validation")


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200), st.integers(2, 200))
def test_window_count_formula(m, T):
    ds = _series(m)
    if m < T:
        with pytest.raises(DataError):
            make_windows(ds, T)
    else:
        assert len(make_windows(ds, T)) == m - T + 1 == window_count(m, T)


def test_windows_indexing_and_rebuild():
    w = make_windows(_series(12), 3)
    rebuilt = Windows.from_windows(list(w))
    assert np.array_equal(rebuilt.x, w.x) and np.array_equal(rebuilt.target, w.target)


# ---------------------------------------------------------------- normalization


def test_normalization_uses_train_split_only():
    ds = _series(100, seed=3).with_splits(60, 20)
    norm, stats = normalize(ds)
    train = norm.part("train")
    np.testing.assert_allclose(train.exogenous.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(train.exogenous.std(axis=0), 1, atol=1e-12)
    np.testing.assert_allclose(stats.target_mean, ds.targets[:60].mean(axis=0))
    np.testing.assert_allclose(denormalize(norm.targets, stats), ds.targets, atol=1e-12)


def test_constant_column_maps_to_zero():
    exo = np.column_stack([np.full(10, 7.0), np.arange(10.0)])
    norm, stats = normalize(SeriesDataset(exo, np.arange(10.0)[:, None]).with_splits(8, 1))
    assert not norm.exogenous[:, 0].any()
    assert stats.exo_constant.tolist() == [True, False]


def test_stats_dict_round_trip():
    _, stats = normalize(_series(30).with_splits(20, 5))
    back = NormalizationStats.from_dict(stats.to_dict())
    assert all(np.array_equal(getattr(back, k), getattr(stats, k)) for k in stats.to_dict())
    ident = NormalizationStats.identity(2, 1)
    assert np.array_equal(denormalize([[3.0]], ident), [[3.0]])


# ---------------------------------------------------------------- synthetic


def test_synthetic_is_deterministic():
    a = gen_synthetic("regime_switch", 300, seed=4)
    b = gen_synthetic("regime_switch", 300, seed=4)
    assert np.array_equal(a.exogenous, b.exogenous) and np.array_equal(a.targets, b.targets)
    assert not np.array_equal(a.targets, gen_synthetic("regime_switch", 300, seed=5).targets)


def test_linear_exo_is_exactly_linear_without_noise():
    ds = gen_synthetic("linear_exo", 400, seed=1, n=4, d=2, noise=0.0)
    x_prev, y = ds.exogenous[:-1], ds.targets[1:]
    coef, *_ = np.linalg.lstsq(x_prev, y, rcond=None)
    assert np.abs(x_prev @ coef - y).max() < 1e-10
    np.testing.assert_allclose(coef.T, np.array(ds.meta["coefficients"])[0], atol=1e-10)


def test_regime_switch_markers():
    ds = gen_synthetic("regime_switch", 2000, seed=0)
    switches = ds.meta["switch_times"]
    marker = ds.exogenous[:, ds.meta["marker_column"]]
    assert len(switches) == 5 and marker.sum() == 5
    assert np.flatnonzero(marker).tolist() == [s - 1 for s in switches]
    assert ds.n == 8 and ds.d == 1


def test_synthetic_argument_errors():
    with pytest.raises(DataError):
        gen_synthetic("sawtooth", 500, 0)
    with pytest.raises(DataError):
        gen_synthetic("linear_exo", 50, 0)
    with pytest.raises(DataError):
        gen_synthetic("regime_switch", 500, 0, n=2)
