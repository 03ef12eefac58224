import numpy as np
import pytest

from covarlab.data_io import (
    EmbeddingStore,
    ReturnPanel,
    assemble_window,
    load_embeddings,
    load_returns,
    save_embeddings,
    save_returns,
)


def _write(path, text):
    path.write_text(text)
    return path


# --------------------------------------------------------------- returns


def test_load_returns_well_formed(tmp_path):
    p = _write(
        tmp_path / "r.csv",
        "date,AAA,BBB,macro_vix\n"
        "2011-01-03,0.01,-0.02,17.5\n"
        "2011-01-04,0.005,0.001,18.0\n"
        "2011-01-05,-0.003,0.002,16.2\n",
    )
    panel = load_returns(p)
    assert len(panel.dates) == 3
    assert panel.tickers == ["AAA", "BBB"]
    assert panel.macro_names == ["macro_vix"]
    assert panel.returns.shape == (3, 2)
    assert panel.macro[1, 0] == 18.0


def test_duplicate_date_rejected(tmp_path):
    p = _write(
        tmp_path / "r.csv",
        "date,AAA\n2011-01-03,0.01\n2011-01-03,0.02\n",
    )
    with pytest.raises(ValueError, match="non-monotone dates"):
        load_returns(p)


def test_unparseable_cell_reports_position(tmp_path):
    p = _write(
        tmp_path / "r.csv",
        "date,AAA\n2011-01-03,0.01\n2011-01-04,oops\n",
    )
    with pytest.raises(ValueError, match="row 3.*'AAA'"):
        load_returns(p)


def test_missing_return_row_rejected_with_line(tmp_path):
    p = _write(
        tmp_path / "r.csv",
        "date,AAA\n2011-01-03,0.01\n2011-01-04,\n2011-01-05,0.02\n",
    )
    with pytest.warns(UserWarning, match=r"lines \[3\]"):
        panel = load_returns(p)
    assert panel.dates == ["2011-01-03", "2011-01-05"]


def test_macro_forward_fill_up_to_three_days(tmp_path):
    lines = ["date,AAA,macro_x"]
    vals = ["1.0", "", "", "", "2.0"]
    for i, v in enumerate(vals):
        lines.append(f"2011-01-0{i + 1},0.0,{v}")
    panel = load_returns(_write(tmp_path / "r.csv", "\n".join(lines) + "\n"))
    assert np.array_equal(panel.macro[:, 0], [1.0, 1.0, 1.0, 1.0, 2.0])

    # four consecutive gaps: the fourth row drops
    lines = ["date,AAA,macro_x", "2011-01-01,0.0,1.0"]
    for i in range(4):
        lines.append(f"2011-01-0{i + 2},0.0,")
    lines.append("2011-01-06,0.0,2.0")
    with pytest.warns(UserWarning, match="rejected"):
        panel = load_returns(_write(tmp_path / "r2.csv", "\n".join(lines) + "\n"))
    assert "2011-01-05" not in panel.dates
    assert len(panel.dates) == 5


def test_returns_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    panel = ReturnPanel(
        dates=["2011-01-03", "2011-01-04", "2011-01-05"],
        tickers=["AAA", "BBB"],
        returns=rng.normal(size=(3, 2)),
        macro_names=["macro_vix", "macro_spread"],
        macro=rng.normal(size=(3, 2)),
    )
    path = tmp_path / "rt.csv"
    save_returns(panel, path)
    loaded = load_returns(path)
    assert loaded.dates == panel.dates
    assert np.array_equal(loaded.returns, panel.returns)
    assert np.array_equal(loaded.macro, panel.macro)


def test_panel_validation():
    with pytest.raises(ValueError, match="non-monotone"):
        ReturnPanel(["2011-01-04", "2011-01-03"], ["A"], np.zeros((2, 1)), [], np.zeros((2, 0)))
    with pytest.raises(ValueError, match="non-finite"):
        ReturnPanel(["2011-01-03"], ["A"], np.array([[np.nan]]), [], np.zeros((1, 0)))


# ------------------------------------------------------------ embeddings


def test_cvem_empty_round_trip(tmp_path):
    store = EmbeddingStore(d_e=4)
    path = tmp_path / "e.cvem"
    save_embeddings(store, path)
    loaded = load_embeddings(path)
    assert loaded.d_e == 4
    assert loaded.by_date == {}


def test_cvem_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    store = EmbeddingStore(d_e=3)
    store.add("2011-01-03", rng.normal(size=(2, 3)))
    store.add("2011-01-04", np.array([[0.5, 1.0 / 3.0, -1e-300]]))
    path = tmp_path / "e.cvem"
    save_embeddings(store, path)
    loaded = load_embeddings(path)
    assert set(loaded.by_date) == set(store.by_date)
    for d in store.by_date:
        assert np.array_equal(loaded.by_date[d], store.by_date[d])
    # byte-stable re-save
    path2 = tmp_path / "e2.cvem"
    save_embeddings(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_cvem_bad_magic_version_truncation(tmp_path):
    bad = tmp_path / "bad.cvem"
    bad.write_bytes(b"XXXX" + b"\x00" * 8)
    with pytest.raises(ValueError, match="magic"):
        load_embeddings(bad)

    store = EmbeddingStore(d_e=2)
    store.add("2011-01-03", np.ones((2, 2)))
    good = tmp_path / "good.cvem"
    save_embeddings(store, good)
    data = good.read_bytes()

    ver = bytearray(data)
    ver[4] = 99
    vbad = tmp_path / "ver.cvem"
    vbad.write_bytes(bytes(ver))
    with pytest.raises(ValueError, match="version"):
        load_embeddings(vbad)

    trunc = tmp_path / "trunc.cvem"
    trunc.write_bytes(data[:-7])
    with pytest.raises(ValueError, match="truncated.*offset"):
        load_embeddings(trunc)


# ---------------------------------------------------------------- window


def _calendar(n):
    from datetime import date, timedelta

    start = date(2011, 1, 3)
    return [(start + timedelta(days=i)).isoformat() for i in range(n)]


def test_empty_window_all_pad():
    store = EmbeddingStore(d_e=2)
    cal = _calendar(10)
    wb = assemble_window(store, cal, 6, window=5, n_max=8)
    assert not wb.mask.any()
    assert np.array_equal(wb.E, np.zeros((2, 8)))
    assert wb.ids == []


def test_window_positions_are_day_offsets():
    store = EmbeddingStore(d_e=2)
    cal = _calendar(10)
    store.add(cal[3], [[1.0, 1.0], [2.0, 2.0]])  # two articles on day 3
    store.add(cal[5], [[3.0, 3.0]])  # one article on day 5
    wb = assemble_window(store, cal, 6, window=5, n_max=8)
    # strict window for t=6 covers days 1..5; slot 0 = day 1
    assert wb.mask.sum() == 3
    assert list(wb.positions[:3]) == [2, 2, 4]
    assert wb.ids == [f"{cal[3]}#0", f"{cal[3]}#1", f"{cal[5]}#0"]
    assert np.array_equal(wb.E[:, 0], [1.0, 1.0])
    assert np.array_equal(wb.E[:, 2], [3.0, 3.0])


def test_window_includes_day_t_when_flagged():
    store = EmbeddingStore(d_e=1)
    cal = _calendar(10)
    store.add(cal[6], [[7.0]])
    strict = assemble_window(store, cal, 6, window=5, n_max=4)
    assert strict.mask.sum() == 0
    inclusive = assemble_window(store, cal, 6, window=5, n_max=4, include_day_t=True)
    assert inclusive.mask.sum() == 1
    assert inclusive.positions[0] == 4  # most recent slot


def test_window_overflow_keeps_most_recent():
    store = EmbeddingStore(d_e=1)
    cal = _calendar(12)
    # 150 candidates across the 5-day window
    counts = [30, 30, 30, 30, 30]
    for k in range(5):
        day = cal[5 + k]
        store.add(day, np.full((counts[k], 1), float(k)))
    wb = assemble_window(store, cal, 10, window=5, n_max=97)
    assert wb.mask.sum() == 97
    # the oldest 53 of 150 are dropped: day 0 entirely, 23 from day 1
    kept_positions = wb.positions[wb.mask]
    assert (kept_positions == 0).sum() == 0
    assert (kept_positions == 1).sum() == 7
    assert all((kept_positions == k).sum() == 30 for k in (2, 3, 4))
    assert wb.ids[0] == f"{cal[6]}#23"
    assert wb.ids[-1] == f"{cal[9]}#29"


def test_consecutive_windows_share_expected_overlap():
    rng = np.random.default_rng(2)
    store = EmbeddingStore(d_e=2)
    cal = _calendar(15)
    for d in cal:
        store.add(d, rng.normal(size=(int(rng.integers(1, 4)), 2)))
    for t in range(6, 14):
        a = set(assemble_window(store, cal, t, window=5, n_max=97).ids)
        b = set(assemble_window(store, cal, t + 1, window=5, n_max=97).ids)
        expected_shared = {
            f"{cal[di]}#{i}"
            for di in range(t - 4, t)
            for i in range(store.count(cal[di]))
        }
        assert a & b == expected_shared


def test_window_start_of_series_truncates():
    store = EmbeddingStore(d_e=1)
    cal = _calendar(6)
    store.add(cal[0], [[1.0]])
    wb = assemble_window(store, cal, 2, window=5, n_max=4)
    assert wb.mask.sum() == 1
    # day 0 sits 2 days before t=2: offset = window-1 - (t-1 - day) = 4 - 1 = 3
    assert wb.positions[0] == 3


def test_window_index_bounds():
    store = EmbeddingStore(d_e=1)
    with pytest.raises(IndexError):
        assemble_window(store, _calendar(5), 7)
