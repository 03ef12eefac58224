"""Tour of the reverse-mode gradient tape.

Builds a tiny attention computation by hand, differentiates it, and
cross-checks the analytic gradients against central finite differences.
Run: python demos/01_gradient_engine.py
"""

import math

import numpy as np

from covarlab import Tape, softmax_cols

rng = np.random.default_rng(0)

# --- softmax with masking -------------------------------------------------
scores = np.array([[math.log(2.0), 1.0], [0.0, 1.0]])
print("column softmax of [[ln 2, 1], [0, 1]]:")
print(softmax_cols(scores))  # first column is [2/3, 1/3]

masked = softmax_cols(scores, mask=np.array([True, False]))
print("with the second row masked (weights collapse onto row 0):")
print(masked)

# --- a scalar loss through attention --------------------------------------
d = n = 3
Z = rng.normal(size=(d, n))
Wk = rng.normal(size=(d, d)) * 0.5
Wq = rng.normal(size=(d, d)) * 0.5

tape = Tape()
wk = tape.param(Wk)
wq = tape.param(Wq)
z = tape.constant(Z)
att = tape.softmax_cols(
    tape.scale(tape.matmul(tape.transpose(tape.matmul(wk, z)), tape.matmul(wq, z)),
               1.0 / math.sqrt(d))
)
loss = tape.mean(tape.pinball(tape.sub(tape.constant(np.array(0.7)), tape.mean(att)), 0.1))
grads = tape.grad(loss, [wk, wq])
print("\nanalytic dloss/dWk (first row):", grads[0][0])

# --- finite-difference cross-check ----------------------------------------
def value(Wk_val):
    t = Tape()
    wk_ = t.param(Wk_val)
    wq_ = t.constant(Wq)
    z_ = t.constant(Z)
    a = t.softmax_cols(
        t.scale(t.matmul(t.transpose(t.matmul(wk_, z_)), t.matmul(wq_, z_)),
                1.0 / math.sqrt(d))
    )
    l = t.mean(t.pinball(t.sub(t.constant(np.array(0.7)), t.mean(a)), 0.1))
    return float(l.value)

step = 1e-5
fd = np.zeros_like(Wk)
for i in range(d):
    for j in range(d):
        Wk[i, j] += step
        up = value(Wk)
        Wk[i, j] -= 2 * step
        down = value(Wk)
        Wk[i, j] += step
        fd[i, j] = (up - down) / (2 * step)

err = np.max(np.abs(fd - grads[0])) / max(1e-8, np.max(np.abs(fd)))
print(f"max relative error vs finite differences: {err:.2e}")
assert err < 1e-4
