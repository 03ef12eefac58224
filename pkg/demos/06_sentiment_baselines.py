"""Sentiment baselines: the information-bottleneck comparison.

Article labels come pre-classified (negative/neutral/positive). Two ways
to feed them to a risk model: collapse each day into one net-sentiment
index for a feature-based model, or keep one 1-dim label token per
article for the attention model. Both discard everything except polarity,
which is the point of the comparison against full embeddings.
Run: python demos/06_sentiment_baselines.py
"""

import numpy as np

from covarlab import SentimentCounts, labels_to_tokens, sentiment_index
from covarlab.covar_pipeline import (
    build_covar_dataset,
    fit_returns_baseline,
    prepare_sentiment_windows,
    sentiment_index_series,
)
from covarlab.data_io import EmbeddingStore, ReturnPanel
from covarlab.simulation import business_days
from covarlab.trainer import TrainConfig, train
from covarlab.transformer import ArchConfig, init_transformer

rng = np.random.default_rng(5)

# --- the daily index -------------------------------------------------------
day = SentimentCounts("2011-08-05", positive=4, negative=11, neutral=23)
print(f"downgrade day: {day.positive}+ / {day.negative}- / {day.neutral}n "
      f"-> index {sentiment_index(day):+.3f}")
calm = SentimentCounts("2011-03-01", positive=6, negative=5, neutral=9)
print(f"calm day:      {calm.positive}+ / {calm.negative}- / {calm.neutral}n "
      f"-> index {sentiment_index(calm):+.3f}")

# --- label tokens -----------------------------------------------------------
E, mask = labels_to_tokens(["negative", "negative", "positive", "neutral"], 6)
print(f"\nlabel tokens (1=neg, 2=neu, 3=pos), padded to 6: {E[0]}  mask={mask.astype(int)}")

# --- a tiny two-model comparison -------------------------------------------
T = 300
dates = business_days("2010-01-04", T)
# returns where the target's tail widens when yesterday's news skewed negative
mood = rng.choice([-1, 0, 1], size=T, p=[0.3, 0.4, 0.3])
peer = rng.normal(0, 0.02, size=T)
shock = rng.normal(0, 0.012, size=T) * (1.0 + 0.8 * (np.roll(mood, 1) < 0))
target = 0.7 * peer + shock
panel = ReturnPanel(dates=dates, tickers=["TGT", "PEER"],
                    returns=np.column_stack([target, peer]),
                    macro_names=["macro_m"], macro=rng.normal(size=(T, 1)))

store = EmbeddingStore(d_e=1)
labels_by_id = {}
counts_by_date = {}
for t, d in enumerate(dates):
    k = int(rng.integers(1, 4))
    store.add(d, np.zeros((k, 1)))
    counts = SentimentCounts(d)
    for i in range(k):
        lab = {-1: "negative", 0: "neutral", 1: "positive"}[int(mood[t])]
        labels_by_id[f"{d}#{i}"] = {"negative": 1, "neutral": 2, "positive": 3}[lab]
        counts.negative += lab == "negative"
        counts.neutral += lab == "neutral"
        counts.positive += lab == "positive"
    counts_by_date[d] = counts

config = TrainConfig(tau=0.1, lr_grid=(0.015,), batch_grid=(32,),
                     max_epochs=80, patience=25, seed=3)

index = sentiment_index_series(panel, counts_by_date)
mlp, mlp_report = fit_returns_baseline("TGT", panel, config, width=32, depth=2,
                                       extra=index[:, None])
print(f"\nsentiment-index model:  val pinball {mlp_report.best_val:.5f}")

arch = ArchConfig(n=8, d_e=1, J=2, H=1, d_h=32, L=1, D=2, d_m=32)
windows = prepare_sentiment_windows(panel, store, labels_by_id, arch.n)
data = build_covar_dataset(panel, windows, "TGT")
token_model, tok_report = train(init_transformer(arch, seed=3), data, config)
print(f"label-token model:      val pinball {tok_report.best_val:.5f}")
