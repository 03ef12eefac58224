"""Shared test oracles and constructions.

The finite-difference oracle here is deliberately independent of the tape
engine: it only calls a black-box scalar function.
"""

from __future__ import annotations

import numpy as np


def finite_difference(f, arrays, step=1e-5):
    """Central finite differences of scalar f(arrays) w.r.t. each array.

    Mutates entries in place, restoring them afterwards; f must recompute
    from the current array contents on every call.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(arrays)
            flat[i] = orig - step
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """Worst per-parameter relative gradient error."""
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = max(floor, float(np.max(np.abs(gn))), float(np.max(np.abs(ga))))
        worst = max(worst, float(np.max(np.abs(ga - gn))) / denom)
    return worst


def make_affine_model(cfg, slope, intercept, shift=16.0):
    """Attention model whose output is exactly intercept + slope' returns.

    Zero key/query weights give uniform attention (the column mean of Z);
    identity value/projection and a shifted-identity feed-forward keep the
    ReLU on its linear side for |inputs| < shift; the readout picks column
    0 (which must be valid) and the single MLP layer applies the slope to
    the return rows only. Requires H=1, d_h=d, D=1, plain variant.
    """
    from covarlab.transformer import init_transformer

    assert cfg.H == 1 and cfg.d_h == cfg.d and cfg.D == 1 and cfg.variant == "plain"
    model = init_transformer(cfg, seed=0)
    for a in model.param_arrays():
        a[:] = 0.0
    d = cfg.d
    head = model.layers[0].heads[0]
    head.wv[:] = np.eye(d)
    head.wo[:] = np.eye(d)
    model.layers[0].w1[:] = np.eye(d)
    model.layers[0].b1[:] = shift
    model.layers[0].w2[:] = np.eye(d)
    model.layers[0].b2[:] = -shift
    model.readout[0, 0] = 1.0
    slope = np.asarray(slope, dtype=float).reshape(-1)
    model.mlp[0][0][0, : len(slope)] = slope
    model.mlp[0][1][:] = intercept
    return model
