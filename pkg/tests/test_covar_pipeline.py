import numpy as np
import pytest

from covarlab.covar_pipeline import (
    PreparedWindow,
    build_covar_dataset,
    count_quantile_crossings,
    delta_covar,
    estimate_var_all,
    fit_covar_model,
    fit_returns_baseline,
    load_risk_csv,
    predict_covar,
    predict_risk_series,
    prepare_windows,
    split_labels,
    write_risk_csv,
)
from covarlab.data_io import EmbeddingStore, ReturnPanel
from covarlab.simulation import SimConfig, build_sim_dataset, business_days, mae
from covarlab.trainer import TrainConfig
from covarlab.transformer import ArchConfig, concat_pi, init_transformer, model_forward

from helpers import make_affine_model


def _panel(T=200, J=3, seed=0, macro_cols=1):
    rng = np.random.default_rng(seed)
    return ReturnPanel(
        dates=business_days("2010-01-04", T),
        tickers=[f"B{j}" for j in range(J)],
        returns=rng.normal(0, 0.01, size=(T, J)),
        macro_names=[f"macro_{i}" for i in range(macro_cols)],
        macro=rng.normal(size=(T, macro_cols)),
    )


# --------------------------------------------------------------- splits


def test_split_labels_sizes():
    labels = split_labels(1776)
    assert labels.count("train") == 710
    assert labels.count("val") == 355
    assert labels.count("test") == 711
    assert labels[:710] == ["train"] * 710


# ----------------------------------------------------------------- VaR


def test_estimate_var_median_of_symmetric_returns():
    panel = _panel(T=2000, seed=1)
    var_all = estimate_var_all(panel, [0.5])
    for ticker in panel.tickers:
        series = var_all[(ticker, 0.5)]
        assert np.max(np.abs(series)) < 0.005


def test_estimate_var_identical_institutions_identical_series():
    rng = np.random.default_rng(2)
    col = rng.normal(0, 0.02, size=500)
    panel = ReturnPanel(
        dates=business_days("2010-01-04", 500),
        tickers=["A", "B"],
        returns=np.column_stack([col, col]),
        macro_names=["macro_x"],
        macro=rng.normal(size=(500, 1)),
    )
    var_all = estimate_var_all(panel, [0.05])
    assert np.array_equal(var_all[("A", 0.05)], var_all[("B", 0.05)])


def test_estimate_var_tracks_simulation_oracle():
    cfg = SimConfig(T=1776, seed=7)
    ds = build_sim_dataset(cfg, d_e=4, max_per_day=2)
    var_all = estimate_var_all(ds.panel, [0.05])
    assert mae(var_all[("SIM1", 0.05)], ds.var1) <= 0.03


# -------------------------------------------------------------- windows


def test_prepare_windows_dimension_mismatch():
    panel = _panel(T=30)
    store = EmbeddingStore(d_e=6)
    arch = ArchConfig(n=4, d_e=4, J=3)
    with pytest.raises(ValueError, match="dimension"):
        prepare_windows(panel, store, arch)


def test_prepare_windows_placeholder_token_when_empty():
    panel = _panel(T=30)
    store = EmbeddingStore(d_e=4)  # no articles at all
    arch = ArchConfig(n=4, d_e=4, J=3)
    windows = prepare_windows(panel, store, arch)
    for w in windows:
        assert w.mask[0] and w.mask.sum() == 1
        assert np.array_equal(w.E, np.zeros((4, 4)))


def test_build_covar_dataset_shapes_and_returns_block():
    panel = _panel(T=40, J=3)
    store = EmbeddingStore(d_e=4)
    arch = ArchConfig(n=4, d_e=4, J=3)
    windows = prepare_windows(panel, store, arch)
    data = build_covar_dataset(panel, windows, "B1")
    assert data.X.shape == (40, arch.d, 4)
    assert np.array_equal(data.y, panel.column("B1"))
    others = panel.others("B1")
    # the first J-1 rows of each valid token replicate the other returns
    assert np.allclose(data.X[:, :2, 0], others)


# ---------------------------------------------------------- predictions


def _window(rng, d_e=3, n=4, n_valid=3):
    mask = np.zeros(n, dtype=bool)
    mask[:n_valid] = True
    E = rng.normal(size=(d_e, n)) * mask
    return PreparedWindow(E=E, mask=mask)


def test_predict_covar_constant_model():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=2, d_m=4)
    model = init_transformer(cfg, seed=0)
    for a in model.param_arrays():
        a[:] = 0.0
    model.mlp[-1][1][:] = -0.123
    rng = np.random.default_rng(3)
    for _ in range(4):
        w = _window(rng)
        assert predict_covar(model, rng.normal(size=2), w) == -0.123


def test_predict_covar_matches_model_forward_exactly():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=2, d_m=4)
    model = init_transformer(cfg, seed=4)
    rng = np.random.default_rng(5)
    for _ in range(10):
        w = _window(rng)
        r = rng.normal(size=2)
        direct = model_forward(model, concat_pi(r, w.E, w.mask))
        assert predict_covar(model, r, w) == direct  # bit-identical


def test_predict_covar_affine_construction():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=1, d_m=5)
    s = np.array([0.7, -1.3])
    model = make_affine_model(cfg, s, intercept=0.25)
    rng = np.random.default_rng(6)
    for _ in range(10):
        w = _window(rng)
        v = rng.normal(size=2)
        assert predict_covar(model, v, w) == pytest.approx(0.25 + s @ v, abs=1e-10)


def test_predict_covar_ignores_pad_garbage():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=2, d_m=4)
    model = init_transformer(cfg, seed=7)
    rng = np.random.default_rng(8)
    mask = np.array([True, True, False, False])
    E = rng.normal(size=(3, 4)) * mask
    v = rng.normal(size=2)
    base = predict_covar(model, v, PreparedWindow(E=E, mask=mask))
    # garbage embeddings at pad positions are zeroed by the concatenation
    E2 = E.copy()
    E2[:, 2:] = 1e9
    masked = predict_covar(model, v, PreparedWindow(E=E2, mask=mask))
    assert masked == base


def test_delta_covar_identities():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=2, d_m=4)
    rng = np.random.default_rng(9)
    for seed in range(5):
        model = init_transformer(cfg, seed=seed)
        w = _window(rng)
        v = rng.normal(size=2)
        assert delta_covar(model, v, v, w) == 0.0  # exactly

    s = np.array([1.1, -0.4])
    affine_cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=1, d_m=5)
    model = make_affine_model(affine_cfg, s, intercept=-0.02)
    for _ in range(10):
        w = _window(rng)
        vt, vm = rng.normal(size=2), rng.normal(size=2)
        assert delta_covar(model, vt, vm, w) == pytest.approx(s @ (vt - vm), abs=1e-10)


def test_affine_model_monotone_in_each_input():
    cfg = ArchConfig(n=4, d_e=3, J=3, H=1, d_h=5, L=1, D=1, d_m=5)
    s = np.array([0.9, -0.5])
    model = make_affine_model(cfg, s, intercept=0.0)
    rng = np.random.default_rng(10)
    w = _window(rng)
    base = np.array([0.1, 0.1])
    for j, sign in enumerate(np.sign(s)):
        bumped = base.copy()
        bumped[j] += 0.25
        diff = predict_covar(model, bumped, w) - predict_covar(model, base, w)
        assert np.sign(diff) == sign


def test_count_quantile_crossings():
    lo = np.array([-2.0, -1.0, -3.0])
    hi = np.array([-1.0, -2.0, -1.0])  # crossing at index 1
    assert count_quantile_crossings({0.05: lo, 0.5: hi}) == 1
    assert count_quantile_crossings({0.05: lo, 0.5: lo + 1.0}) == 0


# ------------------------------------------------------------- risk CSV


def test_risk_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    T = 25
    from covarlab.covar_pipeline import RiskTable

    table = RiskTable(
        ticker="B1",
        tau=0.05,
        dates=business_days("2011-01-03", T),
        var=rng.normal(size=T),
        covar=rng.normal(size=T),
        delta=rng.normal(size=T),
        splits=split_labels(T),
    )
    path = tmp_path / "risk.csv"
    write_risk_csv(table, path)
    loaded = load_risk_csv(path)
    assert loaded.ticker == "B1" and loaded.tau == 0.05
    assert loaded.dates == table.dates
    assert np.array_equal(loaded.var, table.var)
    assert np.array_equal(loaded.covar, table.covar)
    assert np.array_equal(loaded.delta, table.delta)
    assert loaded.splits == table.splits


# ------------------------------------------------ small training checks


def test_zero_information_text_reduces_to_returns_model():
    # all-pad text: the attention model sees one returns-only token per
    # date and should match the returns-only baseline's validation loss
    cfg = SimConfig(T=1776, seed=7)
    ds = build_sim_dataset(cfg, d_e=4, max_per_day=2, zero_noise=True)
    arch = ArchConfig(n=8, d_e=4, J=2, H=1, d_h=32, L=1, D=2, d_m=32)
    tc = TrainConfig(tau=0.05, lr_grid=(0.015,), batch_grid=(32,),
                     max_epochs=400, patience=80, seed=11)
    _, tf_report, _ = fit_covar_model("SIM2", ds.panel, ds.store, arch, tc)
    _, mlp_report = fit_returns_baseline("SIM2", ds.panel, tc, width=64, depth=2)
    assert abs(tf_report.best_val - mlp_report.best_val) <= 0.10 * mlp_report.best_val


def test_recovered_slope_signs_match_dependence():
    # three institutions, target depends linearly on the other two with
    # opposite signs; the fitted surface must move the same way
    rng = np.random.default_rng(12)
    T = 700
    y1 = rng.normal(0, 0.02, size=T)
    y2 = rng.normal(0, 0.02, size=T)
    target = 0.9 * y1 - 0.7 * y2 + rng.normal(0, 0.01, size=T)
    panel = ReturnPanel(
        dates=business_days("2010-01-04", T),
        tickers=["TGT", "P1", "P2"],
        returns=np.column_stack([target, y1, y2]),
        macro_names=["macro_x"],
        macro=rng.normal(size=(T, 1)),
    )
    store = EmbeddingStore(d_e=2)
    for d in panel.dates:
        store.add(d, rng.normal(0, 0.05, size=(1, 2)))
    arch = ArchConfig(n=6, d_e=2, J=3, H=1, d_h=16, L=1, D=2, d_m=16)
    tc = TrainConfig(tau=0.25, lr_grid=(0.015,), batch_grid=(32,),
                     max_epochs=150, patience=50, seed=3)
    model, _, windows = fit_covar_model("TGT", panel, store, arch, tc)
    w = windows[T // 2]
    lo, hi = -0.02, 0.02
    # slope in the first peer: positive
    up = predict_covar(model, [hi, 0.0], w) - predict_covar(model, [lo, 0.0], w)
    assert up > 0
    # slope in the second peer: negative
    down = predict_covar(model, [0.0, hi], w) - predict_covar(model, [0.0, lo], w)
    assert down < 0


def test_predict_risk_series_affine_end_to_end():
    rng = np.random.default_rng(13)
    T = 60
    panel = _panel(T=T, J=3, seed=14)
    store = EmbeddingStore(d_e=3)
    for d in panel.dates:
        store.add(d, rng.normal(size=(2, 3)))
    arch = ArchConfig(n=12, d_e=3, J=3, H=1, d_h=5, L=1, D=1, d_m=5)
    windows = prepare_windows(panel, store, arch)
    s = np.array([0.5, 0.5])
    model = make_affine_model(arch, s, intercept=-0.01)
    var_all = estimate_var_all(panel, [0.05, 0.5])
    table = predict_risk_series(model, panel, windows, var_all, "B0", 0.05)
    assert table.ticker == "B0"
    assert len(table.dates) == T
    others = panel.other_tickers("B0")
    vt = np.column_stack([var_all[(o, 0.05)] for o in others])
    vm = np.column_stack([var_all[(o, 0.5)] for o in others])
    expected_delta = (vt - vm) @ s
    assert np.allclose(table.delta, expected_delta, atol=1e-10)
