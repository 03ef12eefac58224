"""Systemic tail-risk estimation from returns and news text.

Two-step procedure: linear quantile regressions give each institution's
VaR from lagged macro states; an attention-based quantile model fit on
the other institutions' returns plus news-embedding windows gives the
conditional risk (CoVaR) once the VaR estimates are plugged in. A Monte
Carlo laboratory with closed-form oracles, an average-quantile-loss
backtester and sentiment baselines round out the toolkit.
"""

from .backtest import avq_loss, cumulative_table, exceedance_rate
from .covar_pipeline import (
    RiskTable,
    delta_covar,
    estimate_var_all,
    fit_covar_model,
    fit_returns_baseline,
    predict_covar,
    predict_risk_series,
    prepare_windows,
)
from .data_io import (
    EmbeddingStore,
    ReturnPanel,
    assemble_window,
    load_embeddings,
    load_returns,
    save_embeddings,
    save_returns,
)
from .numcore import Tape, relu, softmax_cols
from .quantile import LinearQuantileModel, fit_linear_quantile, pinball, predict_var
from .sentiment import SentimentCounts, labels_to_tokens, sentiment_index
from .simulation import (
    SimConfig,
    attach_noise_text,
    build_sim_dataset,
    inv_norm_cdf,
    mae,
    simulate_dgp,
    theoretical_covar,
    theoretical_var1,
    theoretical_var2,
)
from .trainer import SupervisedData, TrainConfig, rolling_predict, split_chronological, train
from .transformer import (
    ArchConfig,
    MlpModel,
    TokenBatch,
    TransformerModel,
    apply_positional_encoding,
    concat_pi,
    ffn_forward,
    init_mlp,
    init_transformer,
    load_model,
    model_forward,
    msa_forward,
    positional_encoding,
    save_model,
    weight_norm_report,
)

__version__ = "0.1.0"
