"""Backtesting a risk series with the cumulative average-quantile table.

Compares a well-calibrated forecaster against a sloppy one over a mock
two-year test period and prints the quarterly cumulative loss table in
the x100 display convention. Run: python demos/05_backtest_and_report.py
"""

import numpy as np

from covarlab import avq_loss, cumulative_table, exceedance_rate
from covarlab.backtest import format_loss_table
from covarlab.simulation import business_days, inv_norm_cdf

rng = np.random.default_rng(3)
dates = business_days("2011-01-21", 500)
T = len(dates)

vol = 0.02 * (1.0 + 0.5 * np.sin(np.arange(T) / 40.0))
actuals = rng.normal(0, vol)

z = inv_norm_cdf(0.05)
sharp = vol * z            # knows the local volatility
blunt = np.full(T, 0.02 * z)  # one unconditional quantile for all dates

table = cumulative_table({"sharp": sharp, "blunt": blunt}, actuals, dates, tau=0.05)
print(format_loss_table(table))
print()
for name, preds in (("sharp", sharp), ("blunt", blunt)):
    print(f"{name}: full AVQ = {avq_loss(preds, actuals, 0.05):.6f}  "
          f"exceedance = {exceedance_rate(preds, actuals):.4f} (target 0.05)")
