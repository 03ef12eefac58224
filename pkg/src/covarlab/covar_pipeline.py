"""Two-step tail-risk estimation.

Step 1 fits one linear quantile regression per institution on the lagged
macro states; its fitted values are the VaR series. Step 2 trains a
quantile model for the target institution on the other institutions' raw
contemporaneous returns plus the news-embedding window, then plugs the
step-1 VaR estimates in place of the returns to read off the conditional
risk (CoVaR). The spillover measure is the difference between plugging in
the tail VaR and the median VaR on the same embedding window.

Model kinds: "transformer" (returns + text), "returns_mlp" (no text),
"sentiment_mlp" (returns + daily sentiment index), "sentiment_transformer"
(label tokens instead of embeddings).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data_io import EmbeddingStore, ReturnPanel, assemble_window
from .quantile import fit_linear_quantile
from .sentiment import SentimentCounts, sentiment_index
from .trainer import SupervisedData, TrainConfig, split_chronological, train
from .transformer import (
    ArchConfig,
    MlpModel,
    apply_positional_encoding,
    concat_pi,
    init_mlp,
    init_transformer,
    model_forward,
)


def split_labels(T: int, split=(0.40, 0.20, 0.40)) -> list[str]:
    idx = np.arange(T)
    tr, va, _ = split_chronological(idx, split)
    labels = ["test"] * T
    for i in tr:
        labels[i] = "train"
    for i in va:
        labels[i] = "val"
    return labels


# ------------------------------------------------------------ step 1: VaR


def estimate_var_all(panel: ReturnPanel, taus, split=(0.40, 0.20, 0.40)) -> dict:
    """One VaR series per (ticker, tau): fit on the training segment only,
    predict over every date."""
    idx = np.arange(len(panel.dates))
    tr_idx, _, _ = split_chronological(idx, split)
    out = {}
    for j, ticker in enumerate(panel.tickers):
        y = panel.returns[:, j]
        for tau in taus:
            model = fit_linear_quantile(panel.macro[tr_idx], y[tr_idx], tau)
            out[(ticker, tau)] = panel.macro @ model.gamma + model.alpha
    return out


# --------------------------------------------------- step 2: token inputs


@dataclass
class PreparedWindow:
    """Positionally encoded embedding window, ready for concatenation.

    An empty window is replaced by a single valid zero-embedding
    placeholder column, so the model still sees the returns on such dates
    (the input degenerates to a returns-only token).
    """

    E: np.ndarray
    mask: np.ndarray


def prepare_windows(
    panel: ReturnPanel,
    store: EmbeddingStore,
    arch: ArchConfig,
    window: int = 5,
    include_day_t: bool = False,
    positional: bool = True,
) -> list[PreparedWindow]:
    if store.d_e != arch.d_e:
        raise ValueError(
            f"embedding dimension {store.d_e} does not match the architecture ({arch.d_e})"
        )
    out = []
    for t in range(len(panel.dates)):
        wb = assemble_window(store, panel.dates, t, window=window, n_max=arch.n,
                             include_day_t=include_day_t)
        E = wb.E
        if positional and arch.d_e % 2 == 0:
            E = apply_positional_encoding(E, wb.mask, wb.positions)
        mask = wb.mask
        if not mask.any():
            mask = mask.copy()
            mask[0] = True  # placeholder token: zero embedding, returns only
        out.append(PreparedWindow(E=E, mask=mask))
    return out


def build_covar_dataset(panel: ReturnPanel, windows, target: str) -> SupervisedData:
    """Stacked training inputs: Z_t = concat(returns of others at t, E window)."""
    others = panel.others(target)
    Z = np.stack([
        concat_pi(others[t], windows[t].E, windows[t].mask).Z
        for t in range(len(windows))
    ])
    mask = np.stack([w.mask for w in windows])
    return SupervisedData(X=Z, y=panel.column(target), mask=mask, dates=list(panel.dates))


def fit_covar_model(
    target: str,
    panel: ReturnPanel,
    store: EmbeddingStore,
    arch: ArchConfig,
    config: TrainConfig,
    window: int = 5,
    include_day_t: bool = False,
):
    """Train the text-aware quantile model for one target institution."""
    windows = prepare_windows(panel, store, arch, window, include_day_t)
    data = build_covar_dataset(panel, windows, target)
    model = init_transformer(arch, seed=config.seed)
    fitted, report = train(model, data, config)
    return fitted, report, windows


def fit_returns_baseline(
    target: str,
    panel: ReturnPanel,
    config: TrainConfig,
    width: int = 64,
    depth: int = 2,
    extra: np.ndarray | None = None,
):
    """Returns-only (or returns+features) MLP trained through the same loop."""
    X = panel.others(target)
    if extra is not None:
        X = np.column_stack([X, extra])
    data = SupervisedData(X=X, y=panel.column(target), dates=list(panel.dates))
    model = init_mlp(input_dim=X.shape[1], width=width, depth=depth, seed=config.seed)
    fitted, report = train(model, data, config)
    return fitted, report


# ------------------------------------------------------------ prediction


def predict_covar(model, var_hat, window: PreparedWindow) -> float:
    """Plug the other institutions' VaR into the fitted quantile function."""
    if isinstance(model, MlpModel):
        x = np.asarray(var_hat, dtype=np.float64).reshape(-1)
        if x.shape[0] != model.input_dim:
            raise ValueError(f"expected {model.input_dim} inputs, got {x.shape[0]}")
        return model.forward(x)
    batch = concat_pi(var_hat, window.E, window.mask)
    return model_forward(model, batch)


def delta_covar(model, var_tau, var_median, window: PreparedWindow) -> float:
    """Conditional risk under distress minus under median conditions,
    evaluated on the same embedding window."""
    return predict_covar(model, var_tau, window) - predict_covar(model, var_median, window)


@dataclass
class RiskTable:
    """Dated VaR / CoVaR / spillover values for one institution and level."""

    ticker: str
    tau: float
    dates: list[str]
    var: np.ndarray
    covar: np.ndarray
    delta: np.ndarray
    splits: list[str]

    def __post_init__(self):
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise ValueError("non-monotone dates")
        for v in (self.var, self.covar, self.delta):
            if not np.all(np.isfinite(v)):
                raise ValueError("non-finite risk values")


def predict_risk_series(
    model,
    panel: ReturnPanel,
    windows,
    var_all: dict,
    target: str,
    tau: float,
    split=(0.40, 0.20, 0.40),
    median_tau: float = 0.5,
    extra: np.ndarray | None = None,
) -> RiskTable:
    """Dated VaR/CoVaR/spillover for the target, over every panel date.

    `var_all` must hold series at both `tau` and `median_tau` for every
    institution. For feature-based baselines, `extra` supplies the extra
    input columns (appended after the VaR vector).
    """
    T = len(panel.dates)
    others = panel.other_tickers(target)
    var_t = np.column_stack([var_all[(o, tau)] for o in others])
    var_m = np.column_stack([var_all[(o, median_tau)] for o in others])
    covar = np.empty(T)
    delta = np.empty(T)
    for t in range(T):
        w = windows[t] if windows is not None else None
        vt, vm = var_t[t], var_m[t]
        if extra is not None:
            vt = np.concatenate([vt, extra[t]])
            vm = np.concatenate([vm, extra[t]])
        covar[t] = predict_covar(model, vt, w)
        delta[t] = covar[t] - predict_covar(model, vm, w)
    return RiskTable(
        ticker=target,
        tau=tau,
        dates=list(panel.dates),
        var=np.asarray(var_all[(target, tau)], dtype=np.float64),
        covar=covar,
        delta=delta,
        splits=split_labels(T, split),
    )


def count_quantile_crossings(covar_by_tau: dict[float, np.ndarray]) -> int:
    """Dates where fitted conditional quantiles at different levels cross.

    Reported as a diagnostic count, not corrected.
    """
    taus = sorted(covar_by_tau)
    crossings = 0
    for lo, hi in zip(taus, taus[1:]):
        crossings += int(np.sum(covar_by_tau[lo] > covar_by_tau[hi]))
    return crossings


# -------------------------------------------------------------- risk CSV


def write_risk_csv(table: RiskTable, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["date", "ticker", "tau", "var", "covar", "delta_covar", "split"])
        for i, d in enumerate(table.dates):
            w.writerow([
                d, table.ticker, repr(float(table.tau)),
                repr(float(table.var[i])), repr(float(table.covar[i])),
                repr(float(table.delta[i])), table.splits[i],
            ])


def load_risk_csv(path) -> RiskTable:
    dates, splits = [], []
    var, covar, delta = [], [], []
    ticker, tau = None, None
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            dates.append(row["date"])
            ticker = row["ticker"]
            tau = float(row["tau"])
            var.append(float(row["var"]))
            covar.append(float(row["covar"]))
            delta.append(float(row["delta_covar"]))
            splits.append(row["split"])
    if not dates:
        raise ValueError("empty risk series file")
    return RiskTable(
        ticker=ticker, tau=tau, dates=dates,
        var=np.array(var), covar=np.array(covar), delta=np.array(delta), splits=splits,
    )


# -------------------------------------------------------- sentiment input


def sentiment_index_series(
    panel: ReturnPanel, counts_by_date: dict[str, SentimentCounts],
    include_day_t: bool = False,
) -> np.ndarray:
    """Daily net-sentiment index aligned to the panel, lagged like the text
    window. Days whose source day has no labeled articles get 0 (neutral)."""
    T = len(panel.dates)
    out = np.zeros(T)
    for t in range(T):
        src = t if include_day_t else t - 1
        if src < 0:
            continue
        counts = counts_by_date.get(panel.dates[src])
        if counts is not None and counts.total() > 0:
            out[t] = sentiment_index(counts)
    return out


def prepare_sentiment_windows(
    panel: ReturnPanel,
    store: EmbeddingStore,
    labels_by_id: dict[str, int],
    n: int,
    window: int = 5,
    include_day_t: bool = False,
) -> list[PreparedWindow]:
    """Label-token windows: each article becomes a 1-dim token valued 1/2/3.

    Articles without a label count as neutral (2). Tokens are too
    low-dimensional for the sinusoidal encoding, so none is applied.
    """
    out = []
    for t in range(len(panel.dates)):
        wb = assemble_window(store, panel.dates, t, window=window, n_max=n,
                             include_day_t=include_day_t)
        E = np.zeros((1, n))
        for j, aid in enumerate(wb.ids):
            E[0, j] = float(labels_by_id.get(aid, 2))
        mask = wb.mask
        if not mask.any():
            mask = mask.copy()
            mask[0] = True
            E[0, 0] = 0.0
        out.append(PreparedWindow(E=E, mask=mask))
    return out
