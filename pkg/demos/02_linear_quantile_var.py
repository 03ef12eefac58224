"""The VaR step: linear quantile regression on lagged macro states.

Generates returns whose conditional tail depends on a volatility proxy,
fits the 5% quantile regression, and checks the coverage of the fitted
VaR series. Run: python demos/02_linear_quantile_var.py
"""

import numpy as np

from covarlab import fit_linear_quantile, pinball, predict_var

rng = np.random.default_rng(42)
T = 4000

# volatility state: returns get wider tails when vix_like is high
vix_like = np.abs(rng.normal(1.0, 0.3, size=T))
returns = 0.001 - 0.0 * vix_like + rng.normal(0, 0.01, size=T) * vix_like

model = fit_linear_quantile(vix_like[:, None], returns, tau=0.05)
print(f"alpha = {model.alpha:+.5f}, gamma = {model.gamma[0]:+.5f}")

fitted = model.alpha + vix_like * model.gamma[0]
coverage = np.mean(returns < fitted)
print(f"share of returns below the fitted VaR: {coverage:.4f} (target 0.05)")

avg_loss = np.mean(pinball(returns - fitted, 0.05))
print(f"in-sample pinball loss: {avg_loss:.6f}")

# a quiet day vs a stressed day
quiet, stressed = 0.7, 1.8
print(f"VaR on a quiet day  (state {quiet}): {predict_var(model, [quiet]):+.5f}")
print(f"VaR on a stress day (state {stressed}): {predict_var(model, [stressed]):+.5f}")
